// recheck: command-line front end.
//
//   recheck pool build|stats|query
//   recheck annotate extract|filter|outcome|census|trainset
//   recheck run --prompt-file F --mode eds --pool P
//   recheck serve --listen HOST:PORT
//   recheck eval run|report

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "recheck/annotation.hpp"
#include "recheck/errors.hpp"
#include "recheck/eval.hpp"
#include "recheck/gateway.hpp"

using namespace recheck;
using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// --- shared option groups ------------------------------------------------------

struct ControllerOpts {
  std::string mode = "eds";
  double tau = 0.8;
  int k = 30;
  int min_evidence = 5;
  int cooldown = 3;
  bool strict = false;
  std::string signal;
  std::string detector = "lexical";
  std::string detector_endpoint;
  double detector_threshold = 0.5;

  void add(CLI::App* app, bool with_mode = true, bool with_tau = true) {
    if (with_mode) {
      app->add_option("--mode", mode, "base | full | eds")->check(CLI::IsMember({"base", "full", "full_suppress", "eds"}));
    }
    if (with_tau) app->add_option("--tau", tau, "suppression threshold");
    app->add_option("--k", k, "retrieved neighbours");
    app->add_option("--min-evidence", min_evidence);
    app->add_option("--cooldown", cooldown, "steps without detection after an injection");
    app->add_flag("--strict", strict, "suppress only when p_unnec > tau");
    app->add_option("--signal", signal, "suppression signal text");
    app->add_option("--detector", detector)->check(CLI::IsMember({"lexical", "remote"}));
    app->add_option("--detector-endpoint", detector_endpoint, "detector service URL");
    app->add_option("--detector-threshold", detector_threshold);
  }

  ControllerConfig config() const {
    ControllerConfig c;
    c.mode = parse_mode(mode);
    c.tau = tau;
    c.k = k;
    c.min_evidence = min_evidence;
    c.cooldown_steps = cooldown;
    c.strict_threshold = strict;
    if (!signal.empty()) c.signal_text = signal;
    c.detector.kind = detector == "remote" ? DetectorKind::remote : DetectorKind::lexical;
    if (!detector_endpoint.empty()) c.detector.endpoint = detector_endpoint;
    c.detector.threshold = detector_threshold;
    if (auto w = lint_signal(c.signal_text)) std::cerr << "warning: " << *w << '\n';
    return c;
  }
};

struct BackendOpts {
  std::string kind = "replay";
  std::string fixture;
  std::string base_url;
  std::string model;
  std::string style = "raw_completion";
  int max_tokens = 32768;
  double temperature = 0.6;
  double top_p = 0.95;
  bool no_think = false;
  int max_requests = 64;
  int timeout_ms = 120000;

  void add(CLI::App* app) {
    app->add_option("--backend", kind, "replay | live")->check(CLI::IsMember({"replay", "live"}));
    app->add_option("--fixture", fixture, "replay fixture (file, or directory for eval)");
    app->add_option("--base-url", base_url, "OpenAI-compatible server; default $RECHECK_BASE_URL");
    app->add_option("--model", model);
    app->add_option("--style", style, "raw_completion | assistant_prefill");
    app->add_option("--max-tokens", max_tokens);
    app->add_option("--temperature", temperature);
    app->add_option("--top-p", top_p);
    app->add_flag("--no-think", no_think, "the model emits no think markers");
    app->add_option("--max-requests", max_requests);
    app->add_option("--timeout-ms", timeout_ms);
  }

  BackendConfig config() const {
    BackendConfig c;
    c.kind = kind == "live" ? BackendKind::live : BackendKind::replay;
    if (!fixture.empty()) c.fixture = fixture;
    if (!base_url.empty()) c.base_url = base_url;
    c.model = model;
    c.continuation_style = parse_continuation_style(style);
    c.sampling.max_tokens = max_tokens;
    c.sampling.temperature = temperature;
    c.sampling.top_p = top_p;
    if (!no_think) c.think_delimiters = ThinkDelimiters{};
    c.max_requests = max_requests;
    c.timeout_ms = timeout_ms;
    c.apply_env();
    return c;
  }
};

struct AnnotatorOpts {
  std::string mode = "replay";
  std::string endpoint;
  std::string model = "gpt-5";
  std::string cache_dir;
  std::string prompt_dir;

  void add(CLI::App* app) {
    app->add_option("--mode", mode, "live | replay")->check(CLI::IsMember({"live", "replay"}));
    app->add_option("--endpoint", endpoint, "annotator base URL; default $RECHECK_ANNOTATOR_URL");
    app->add_option("--annotator-model", model);
    app->add_option("--cache-dir", cache_dir, "response cache")->required();
    app->add_option("--prompt-dir", prompt_dir);
  }

  AnnotatorConfig config() const {
    AnnotatorConfig c;
    c.mode = mode == "live" ? AnnotatorMode::live : AnnotatorMode::replay;
    c.endpoint = endpoint;
    if (c.endpoint.empty()) {
      if (const char* e = std::getenv("RECHECK_ANNOTATOR_URL")) c.endpoint = e;
    }
    if (const char* key = std::getenv("RECHECK_ANNOTATOR_KEY")) c.api_key = key;
    c.model_name = model;
    c.cache_dir = cache_dir;
    if (!prompt_dir.empty()) c.prompt_dir = prompt_dir;
    return c;
  }
};

std::optional<ExperiencePool> load_pool(const std::string& path) {
  if (path.empty()) return std::nullopt;
  return read_pool(path);
}

ordered_json anchor_json(Anchor a) { return {{"step", a.step}, {"sentence", a.sentence}}; }

void write_lines(const std::string& path, const std::vector<ordered_json>& rows) {
  std::ofstream file;
  std::ostream* out = &std::cout;
  if (!path.empty() && path != "-") {
    file.open(path);
    if (!file) throw Error("cannot write " + path);
    out = &file;
  }
  for (const auto& r : rows) *out << r.dump() << '\n';
}

// --- pool -------------------------------------------------------------------------

void add_pool(CLI::App& app) {
  auto* pool = app.add_subcommand("pool", "experience pool files")->require_subcommand(1);

  auto* build = pool->add_subcommand("build", "index labeled units into a pool file");
  static std::string units_path, out_path;
  static Bm25Params params;
  build->add_option("--units", units_path, "units JSONL")->required();
  build->add_option("--out", out_path)->required();
  build->add_option("--k1", params.k1);
  build->add_option("--b", params.b);
  build->callback([] {
    const auto p = ExperiencePool::build(read_units(units_path), params);
    write_pool(out_path, p);
    std::cout << "wrote " << p.units().size() << " units, unnecessary_rate " << p.stats().unnecessary_rate << '\n';
  });

  auto* stats = pool->add_subcommand("stats", "size, label balance and vocabulary");
  static std::string stats_path;
  stats->add_option("--pool", stats_path)->required();
  stats->callback([] {
    const auto p = read_pool(stats_path);
    ordered_json j{{"n", p.stats().n},
                   {"unnecessary_rate", p.stats().unnecessary_rate},
                   {"vocabulary", p.index().vocabulary_size()},
                   {"avgdl", p.index().avgdl()},
                   {"k1", p.params().k1},
                   {"b", p.params().b}};
    std::cout << j.dump(2) << '\n';
  });

  auto* query = pool->add_subcommand("query", "top-k neighbours and the necessity vote");
  static std::string query_pool, text;
  static int k = 30, min_evidence = 5;
  static double tau = 0.8;
  static std::string kernel = "parallel";
  query->add_option("--pool", query_pool)->required();
  query->add_option("--text", text, "query context")->required();
  query->add_option("--k", k);
  query->add_option("--tau", tau);
  query->add_option("--min-evidence", min_evidence);
  query->add_option("--kernel", kernel)->check(CLI::IsMember({"serial", "parallel"}));
  query->callback([] {
    const auto p = read_pool(query_pool);
    const auto r = p.retrieve(text, k, kernel == "serial" ? Kernel::serial : Kernel::parallel);
    const auto est = estimate_necessity(r, tau, min_evidence);
    ordered_json j;
    j["k_requested"] = r.k_requested;
    j["k_returned"] = r.k_returned;
    j["p_unnec"] = est.p_unnec;
    j["suppress"] = est.suppress;
    j["hits"] = json::array();
    for (const auto& h : r.hits) {
      j["hits"].push_back({{"unit_id", h.unit_id}, {"score", h.score}, {"label", static_cast<int>(h.label)}});
    }
    std::cout << j.dump(2) << '\n';
  });
}

// --- annotate -----------------------------------------------------------------------

void add_annotate(CLI::App& app) {
  auto* ann = app.add_subcommand("annotate", "offline annotation with the annotator model")->require_subcommand(1);
  static AnnotatorOpts opts;
  static std::string rollouts_path, out_path;
  static int workers = 0;

  auto common = [](CLI::App* sub) {
    opts.add(sub);
    sub->add_option("--rollouts", rollouts_path, "rollouts JSONL")->required();
    sub->add_option("--out", out_path, "output file (default stdout)");
    sub->add_option("--workers", workers);
  };

  auto* extract = ann->add_subcommand("extract", "recheck activation sentences per rollout");
  common(extract);
  extract->callback([] {
    AnnotatorClient client(opts.config());
    std::vector<ordered_json> rows;
    for (const auto& r : read_rollouts(rollouts_path)) {
      const auto trace = segment_trace(r.problem_id, r.raw_text);
      const auto ex = extract_activations(trace, client);
      for (const auto& c : ex.candidates) {
        rows.push_back({{"problem_id", r.problem_id}, {"model", r.model}, {"anchor", anchor_json(c.anchor)},
                        {"sentence", c.sentence_text}});
      }
      if (ex.no_match > 0) std::cerr << r.problem_id << ": " << ex.no_match << " sentences not found in the trace\n";
    }
    write_lines(out_path, rows);
  });

  auto* filter = ann->add_subcommand("filter", "extract, then keep confirmed activations");
  common(filter);
  filter->callback([] {
    AnnotatorClient client(opts.config());
    std::vector<ordered_json> rows;
    for (const auto& r : read_rollouts(rollouts_path)) {
      const auto trace = segment_trace(r.problem_id, r.raw_text);
      const auto f = filter_activations(extract_activations(trace, client).candidates, client);
      auto emit = [&](const ActivationCandidate& c, bool kept) {
        rows.push_back({{"problem_id", r.problem_id}, {"anchor", anchor_json(c.anchor)},
                        {"sentence", c.sentence_text}, {"verified", kept}});
      };
      for (const auto& c : f.kept) emit(c, true);
      for (const auto& c : f.hard_negatives) emit(c, false);
    }
    write_lines(out_path, rows);
  });

  auto* outcome = ann->add_subcommand("outcome", "full pipeline: labeled experience units");
  common(outcome);
  static std::string pool_out, report_out;
  outcome->add_option("--pool-out", pool_out, "also write an indexed pool");
  outcome->add_option("--report", report_out, "pipeline counts as JSON");
  outcome->callback([] {
    AnnotatorClient client(opts.config());
    PipelineConfig pc;
    pc.workers = workers;
    const auto result = run_pipeline(read_rollouts(rollouts_path), client, pc);
    if (out_path.empty() || out_path == "-") {
      for (const auto& u : result.units) {
        std::cout << ordered_json{{"id", u.id}, {"label", static_cast<int>(u.label)}, {"context", u.context}}.dump()
                  << '\n';
      }
    } else {
      write_units(out_path, result.units);
    }
    if (!pool_out.empty()) write_pool(pool_out, ExperiencePool::build(result.units));
    const auto report = result.report.to_json().dump(2);
    if (!report_out.empty()) std::ofstream(report_out) << report << '\n';
    std::cerr << report << '\n';
    if (!result.report.errors.empty()) throw AnnotatorError(std::to_string(result.report.errors.size()) + " rollouts failed");
  });

  auto* census = ann->add_subcommand("census", "reflective-step and reflection-type proportions");
  common(census);
  static std::string human_labels;
  static bool as_json = false;
  census->add_option("--human-labels", human_labels, "JSONL {problem_id, step, label} for agreement");
  census->add_flag("--json", as_json);
  census->callback([] {
    AnnotatorClient client(opts.config());
    std::vector<ReasoningTrace> traces;
    for (const auto& r : read_rollouts(rollouts_path)) traces.push_back(segment_trace(r.problem_id, r.raw_text));
    CensusConfig cc;
    cc.workers = workers;
    const auto rep = reflection_census(traces, client, cc);
    std::string text = as_json ? rep.to_json().dump(2) + "\n" : rep.markdown();
    if (!human_labels.empty()) {
      const auto a = cohen_kappa(census_confusion(rep, human_labels));
      text += as_json ? ordered_json{{"n", a.n}, {"agreement", a.observed}, {"kappa", a.kappa}}.dump(2) + "\n"
                      : "\nAgreement with human labels: n=" + std::to_string(a.n) + ", observed " +
                            std::to_string(a.observed) + ", kappa " + std::to_string(a.kappa) + "\n";
    }
    if (out_path.empty() || out_path == "-") {
      std::cout << text;
    } else {
      std::ofstream(out_path) << text;
    }
  });

  auto* trainset = ann->add_subcommand("trainset", "1:3 detector training set from the pipeline");
  common(trainset);
  static std::uint64_t seed = 0;
  trainset->add_option("--seed", seed);
  trainset->callback([] {
    AnnotatorClient client(opts.config());
    PipelineConfig pc;
    pc.workers = workers;
    const auto result = run_pipeline(read_rollouts(rollouts_path), client, pc);
    TrainingSetCounts counts;
    const auto rows = build_detector_training_set(result.training, seed, &counts);
    if (out_path.empty()) throw std::invalid_argument("trainset needs --out");
    write_training_set(out_path, rows);
    std::cerr << "positives " << counts.positives << ", hard " << counts.hard << ", easy " << counts.easy << '\n';
  });
}

// --- run / serve -------------------------------------------------------------------------

void add_run(CLI::App& app) {
  auto* run = app.add_subcommand("run", "one generation under the controller");
  static ControllerOpts ctl;
  static BackendOpts be;
  static std::string prompt_file, pool_path, decisions_path, problem_id;
  static bool as_json = false;
  ctl.add(run);
  be.add(run);
  run->add_option("--prompt-file", prompt_file)->required();
  run->add_option("--pool", pool_path, "experience pool (eds)");
  run->add_option("--decision-log", decisions_path, "per-sentence decisions as JSONL");
  run->add_option("--problem-id", problem_id);
  run->add_flag("--json", as_json, "print a JSON summary instead of the completion");
  run->callback([] {
    const auto cc = ctl.config();
    const auto bc = be.config();
    bc.validate();
    const auto pool = load_pool(pool_path);
    if (cc.mode == Mode::eds && !pool) std::cerr << "warning: eds without --pool never suppresses\n";
    SuppressionController controller(cc, nullptr, pool ? &*pool : nullptr);
    auto backend = make_backend(bc, {injection_text(signal_for(cc))});
    SessionOptions opt;
    opt.problem_id = problem_id;
    const auto res = run_session(read_file(prompt_file), *backend, bc, controller, opt);
    if (!decisions_path.empty()) {
      std::ofstream out(decisions_path);
      write_decision_log(out, res.decisions);
    }
    if (as_json) {
      ordered_json j{{"completion", res.completion},
                     {"detections", res.detections},
                     {"suppressions", res.suppressions},
                     {"trace_tokens", res.trace.token_count},
                     {"token_mode", to_string(res.trace.token_mode)},
                     {"requests", res.usage.requests},
                     {"tokens_discarded", res.usage.tokens_discarded},
                     {"truncated", res.truncated}};
      std::cout << j.dump(2) << '\n';
    } else {
      std::cout << res.completion << '\n';
      std::cerr << "detections " << res.detections << ", suppressions " << res.suppressions << ", tokens "
                << res.trace.token_count << " (" << to_string(res.trace.token_mode) << ")\n";
    }
  });
}

ProxyServer* g_proxy = nullptr;

void add_serve(CLI::App& app) {
  auto* serve = app.add_subcommand("serve", "OpenAI-compatible proxy with suppression");
  static ControllerOpts ctl;
  static BackendOpts be;
  static std::string listen = "127.0.0.1:8080", pool_path;
  static int avg_tokens = 200;
  ctl.add(serve);
  be.add(serve);
  serve->add_option("--listen", listen, "HOST:PORT");
  serve->add_option("--pool", pool_path);
  serve->add_option("--avg-recheck-tokens", avg_tokens, "tokens credited per suppression in X-Tokens-Saved-Estimate");
  serve->callback([] {
    static std::optional<ExperiencePool> pool;
    pool = load_pool(pool_path);
    ProxyConfig pc;
    const auto colon = listen.rfind(':');
    if (colon == std::string::npos) throw std::invalid_argument("--listen wants HOST:PORT");
    pc.host = listen.substr(0, colon);
    pc.port = std::stoi(listen.substr(colon + 1));
    pc.upstream = be.config();
    pc.upstream.validate();
    pc.controller = ctl.config();
    pc.pool = pool ? &*pool : nullptr;
    pc.avg_recheck_tokens = avg_tokens;
    ProxyServer server(pc);
    g_proxy = &server;
    std::signal(SIGINT, [](int) {
      if (g_proxy) g_proxy->stop();
    });
    std::cerr << "listening on " << listen << '\n';
    server.serve_forever();
    g_proxy = nullptr;
  });
}

// --- eval ---------------------------------------------------------------------------------

std::vector<double> parse_taus(const std::string& s) {
  std::vector<double> out;
  std::stringstream ss(s);
  for (std::string t; std::getline(ss, t, ',');) out.push_back(std::stod(t));
  return out;
}

void add_eval(CLI::App& app) {
  auto* ev = app.add_subcommand("eval", "benchmark runs and reports")->require_subcommand(1);

  auto* run = ev->add_subcommand("run", "problem x sample x mode (x tau) records");
  static ControllerOpts ctl;
  static BackendOpts be;
  static std::string dataset, name, modes = "base,full,eds", taus = "0.8", pool_path, out = "records.jsonl";
  static int samples = 1, workers = 0;
  static std::uint64_t seed = 0;
  ctl.add(run, false, false);
  be.add(run);
  run->add_option("--dataset", dataset, "JSONL {problem_id, question, reference_answer}")->required();
  run->add_option("--name", name, "dataset label (default: file stem)");
  run->add_option("--modes", modes, "comma list of base, full, eds");
  run->add_option("--tau", taus, "eds threshold(s), comma list for a sweep");
  run->add_option("--pool", pool_path);
  run->add_option("--samples", samples);
  run->add_option("--seed", seed);
  run->add_option("--workers", workers);
  run->add_option("--out", out);
  run->callback([] {
    BenchmarkConfig c;
    c.dataset_name = name.empty() ? fs::path(dataset).stem().string() : name;
    c.modes.clear();
    std::stringstream ss(modes);
    for (std::string m; std::getline(ss, m, ',');) c.modes.push_back(parse_mode(m));
    c.taus = parse_taus(taus);
    c.controller = ctl.config();
    c.backend = be.config();
    c.backend.validate();
    c.samples = samples;
    c.seed = seed;
    c.workers = workers;
    const auto pool = load_pool(pool_path);
    const auto problems = read_dataset(dataset);
    const auto records = run_benchmark(problems, c, pool ? &*pool : nullptr);
    write_records(out, records);
    int errors = 0;
    for (const auto& r : records) errors += r.error ? 1 : 0;
    std::cerr << "wrote " << records.size() << " records (" << errors << " errors) to " << out << '\n';
    std::cout << report_markdown(summarize(records));
  });

  auto* report = ev->add_subcommand("report", "summary CSV, table and plots from records");
  static std::vector<std::string> record_files;
  static std::string out_dir = "report";
  report->add_option("--records", record_files, "records JSONL (repeatable)")->required();
  report->add_option("--out", out_dir);
  report->callback([] {
    std::vector<RunRecord> all;
    for (const auto& f : record_files) {
      auto part = read_records(f);
      all.insert(all.end(), part.begin(), part.end());
    }
    const auto rep = summarize(all);
    write_report(rep, out_dir);
    std::cout << report_markdown(rep);
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Experience-driven suppression of unnecessary rechecks"};
  app.require_subcommand(1);
  add_pool(app);
  add_annotate(app);
  add_run(app);
  add_serve(app);
  add_eval(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
