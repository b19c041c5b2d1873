#include "recheck/eval.hpp"

#include <omp.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <regex>
#include <set>
#include <sstream>

#include "recheck/errors.hpp"

namespace recheck {

using nlohmann::json;

std::vector<Problem> read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open dataset " + path.string());
  std::vector<Problem> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      Problem p;
      p.problem_id = j.at("problem_id").get<std::string>();
      p.question = j.at("question").get<std::string>();
      const auto& ref = j.at("reference_answer");
      p.reference_answer = ref.is_string() ? ref.get<std::string>() : ref.dump();
      out.push_back(std::move(p));
    } catch (const json::exception& e) {
      throw MalformedRecord(no, e.what());
    }
  }
  return out;
}

// --- answers ------------------------------------------------------------------------

namespace {

// Content of the brace group opening at s[open]; npos-safe.
std::optional<std::pair<std::size_t, std::size_t>> brace_group(std::string_view s, std::size_t open) {
  if (open >= s.size() || s[open] != '{') return std::nullopt;
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') ++depth;
    if (s[i] == '}' && --depth == 0) return std::pair{open + 1, i};
  }
  return std::nullopt;
}

std::optional<std::string> last_boxed(std::string_view s) {
  std::optional<std::string> found;
  for (std::string_view tag : {"\\boxed", "\\fbox"}) {
    std::size_t pos = 0;
    std::optional<std::pair<std::size_t, std::string>> best;
    while ((pos = s.find(tag, pos)) != std::string_view::npos) {
      std::size_t open = pos + tag.size();
      while (open < s.size() && s[open] == ' ') ++open;
      if (auto g = brace_group(s, open)) best = {pos, std::string(s.substr(g->first, g->second - g->first))};
      pos += tag.size();
    }
    if (best) return best->second;
  }
  return found;
}

std::string strip_dollars(std::string_view s) {
  s = trim(s);
  while (s.size() >= 2 && s.front() == '$' && s.back() == '$') s = trim(s.substr(1, s.size() - 2));
  return std::string(s);
}

}  // namespace

std::string extract_answer(std::string_view completion, const ThinkDelimiters& delimiters) {
  if (trim(completion).empty()) throw NoAnswer("empty completion");
  std::string_view post = completion;
  if (const auto close = completion.rfind(delimiters.close); close != std::string_view::npos) {
    post = completion.substr(close + delimiters.close.size());
  }
  if (auto b = last_boxed(post)) return strip_dollars(*b);
  if (auto b = last_boxed(completion)) return strip_dollars(*b);
  std::string_view last;
  std::size_t pos = 0;
  while (pos <= completion.size()) {
    auto nl = completion.find('\n', pos);
    if (nl == std::string_view::npos) nl = completion.size();
    auto line = trim(completion.substr(pos, nl - pos));
    if (!line.empty()) last = line;
    pos = nl + 1;
  }
  return strip_dollars(last);
}

namespace {

// No operator outside parentheses, apart from a leading sign.
bool simple_operand(std::string_view s) {
  int depth = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '(') ++depth;
    if (c == ')') --depth;
    if (depth == 0 && i > 0 && std::string_view("+-*/,= ").find(c) != std::string_view::npos) return false;
  }
  return !s.empty();
}

std::string wrap(const std::string& s) { return simple_operand(s) ? s : "(" + s + ")"; }

// One macro argument: a brace group or a single character.
std::string take_arg(std::string_view s, std::size_t& i) {
  while (i < s.size() && s[i] == ' ') ++i;
  if (auto g = brace_group(s, i)) {
    i = g->second + 1;
    return std::string(s.substr(g->first, g->second - g->first));
  }
  if (i < s.size()) return std::string(1, s[i++]);
  return {};
}

std::string rewrite_latex(std::string_view s) {
  std::string out;
  std::size_t i = 0;
  auto starts = [&](std::string_view macro) {
    if (s.compare(i, macro.size(), macro) != 0) return false;
    const std::size_t after = i + macro.size();
    return after >= s.size() || !std::isalpha(static_cast<unsigned char>(s[after]));
  };
  while (i < s.size()) {
    if (starts("\\frac") || starts("\\dfrac") || starts("\\tfrac")) {
      i = s.find("frac", i) + 4;
      const auto a = rewrite_latex(take_arg(s, i));
      const auto b = rewrite_latex(take_arg(s, i));
      out += wrap(a) + "/" + wrap(b);
    } else if (starts("\\sqrt")) {
      i += 5;
      std::string index;
      if (i < s.size() && s[i] == '[') {
        const auto close = s.find(']', i);
        if (close != std::string_view::npos) {
          index = std::string(s.substr(i + 1, close - i - 1));
          i = close + 1;
        }
      }
      const auto a = rewrite_latex(take_arg(s, i));
      out += index.empty() ? "sqrt(" + a + ")" : "root(" + index + "," + a + ")";
    } else if (starts("\\text") || starts("\\textbf") || starts("\\mathrm") || starts("\\mathbf") ||
               starts("\\operatorname")) {
      i = s.find('{', i);
      if (i == std::string_view::npos) break;
      out += rewrite_latex(take_arg(s, i));
    } else if (starts("\\cdot") || starts("\\times")) {
      out += '*';
      i += 5 + (s[i + 1] == 't' ? 1 : 0);
    } else {
      out += s[i++];
    }
  }
  return out;
}

void erase_all(std::string& s, std::string_view what) {
  for (std::size_t p; (p = s.find(what)) != std::string::npos;) s.erase(p, what.size());
}

struct Rational {
  long long num = 0, den = 1;
};

std::optional<Rational> parse_decimal(std::string_view s) {
  static const std::regex re(R"(^([+-]?)(\d+)(?:\.(\d+))?$)");
  std::string str(s);
  std::smatch m;
  if (!std::regex_match(str, m, re)) return std::nullopt;
  const std::string whole = m[2], frac = m[3];
  if (whole.size() + frac.size() > 17) return std::nullopt;
  Rational r;
  r.num = std::stoll(whole + frac);
  for (std::size_t k = 0; k < frac.size(); ++k) r.den *= 10;
  if (m[1] == "-") r.num = -r.num;
  return r;
}

std::optional<std::string> canonical_number(std::string_view s) {
  std::optional<Rational> r;
  if (const auto slash = s.find('/'); slash != std::string_view::npos) {
    auto a = parse_decimal(s.substr(0, slash));
    auto b = parse_decimal(s.substr(slash + 1));
    if (!a || !b || b->num == 0) return std::nullopt;
    // (a.num/a.den) / (b.num/b.den)
    if (std::abs(a->num) > 3'000'000'000LL || std::abs(b->num) > 3'000'000'000LL || a->den > 3'000'000'000LL ||
        b->den > 3'000'000'000LL) {
      return std::nullopt;
    }
    r = Rational{a->num * b->den, a->den * b->num};
  } else {
    r = parse_decimal(s);
  }
  if (!r) return std::nullopt;
  if (r->den < 0) {
    r->den = -r->den;
    r->num = -r->num;
  }
  const long long g = std::gcd(std::abs(r->num), r->den);
  if (g > 1) {
    r->num /= g;
    r->den /= g;
  }
  if (r->num == 0) return std::string("0");
  return r->den == 1 ? std::to_string(r->num) : std::to_string(r->num) + "/" + std::to_string(r->den);
}

}  // namespace

std::string canonicalize_answer(std::string_view answer) {
  std::string s = strip_dollars(answer);
  if (auto b = last_boxed(s); b && s.rfind("\\boxed", 0) == 0) s = *b;
  for (std::string_view junk : {"\\left", "\\right", "\\!", "\\,", "\\;", "\\:", "\\displaystyle", "^\\circ",
                                "^{\\circ}", "\\%", "%", "\\$", "~"}) {
    erase_all(s, junk);
  }
  erase_all(s, "\\ ");
  s = rewrite_latex(s);
  std::string compact;
  for (char c : s) {
    if (!std::isspace(static_cast<unsigned char>(c))) compact += c;
  }
  s = compact;
  while (!s.empty() && s.back() == '.') s.pop_back();
  while (s.size() >= 2 && s.front() == '{' && s.back() == '}' && brace_group(s, 0) &&
         brace_group(s, 0)->second == s.size() - 1) {
    s = s.substr(1, s.size() - 2);
  }
  static const std::regex assign(R"(^[a-zA-Z]=(.+)$)");
  std::smatch m;
  if (std::regex_match(s, m, assign)) s = m[1];
  static const std::regex thousands(R"(^-?\d{1,3}(,\d{3})+(\.\d+)?$)");
  if (std::regex_match(s, thousands)) erase_all(s, ",");
  if (s.size() >= 2 && s.front() == '(' && s.back() == ')' && s.find_first_of("(),", 1) == s.size() - 1) {
    s = s.substr(1, s.size() - 2);
  }
  if (s.size() > 1 && s.front() == '+') s.erase(0, 1);
  if (auto n = canonical_number(s)) return *n;
  // (a)/(b) from \frac with simple numeric parts.
  static const std::regex paren_frac(R"(^\(([^()]+)\)/\(([^()]+)\)$)");
  if (std::regex_match(s, m, paren_frac)) {
    if (auto n = canonical_number(std::string(m[1]) + "/" + std::string(m[2]))) return *n;
  }
  return s;
}

bool answers_match(std::string_view answer, std::string_view reference) {
  return canonicalize_answer(answer) == canonicalize_answer(reference);
}

// --- records ---------------------------------------------------------------------------

nlohmann::ordered_json record_to_json(const RunRecord& r) {
  nlohmann::ordered_json j;
  j["schema"] = kRecordSchema;
  j["dataset"] = r.dataset;
  j["problem_id"] = r.problem_id;
  j["sample"] = r.sample;
  j["mode"] = to_string(r.mode);
  j["tau"] = r.tau ? json(*r.tau) : json(nullptr);
  j["seed"] = r.seed;
  j["final_answer"] = r.final_answer;
  j["correct"] = r.correct;
  j["trace_tokens"] = r.trace_tokens;
  j["token_mode"] = to_string(r.token_mode);
  j["detections"] = r.detections;
  j["suppressions"] = r.suppressions;
  j["completion_chars"] = r.completion_chars;
  j["injected_chars"] = r.injected_chars;
  j["wall_time_ms"] = r.wall_time_ms;
  j["error"] = r.error ? json(*r.error) : json(nullptr);
  return j;
}

RunRecord record_from_json(const json& j) {
  if (j.value("schema", "") != kRecordSchema) throw VersionMismatch("record schema is not " + std::string(kRecordSchema));
  RunRecord r;
  r.dataset = j.at("dataset").get<std::string>();
  r.problem_id = j.at("problem_id").get<std::string>();
  r.sample = j.at("sample").get<int>();
  r.mode = parse_mode(j.at("mode").get<std::string>());
  if (!j.at("tau").is_null()) r.tau = j["tau"].get<double>();
  r.seed = j.at("seed").get<std::uint64_t>();
  r.final_answer = j.at("final_answer").get<std::string>();
  r.correct = j.at("correct").get<bool>();
  r.trace_tokens = j.at("trace_tokens").get<std::int64_t>();
  r.token_mode = j.at("token_mode").get<std::string>() == "backend" ? TokenCountMode::backend
                                                                      : TokenCountMode::whitespace_estimate;
  r.detections = j.at("detections").get<int>();
  r.suppressions = j.at("suppressions").get<int>();
  r.completion_chars = j.value("completion_chars", std::int64_t{0});
  r.injected_chars = j.value("injected_chars", std::int64_t{0});
  r.wall_time_ms = j.at("wall_time_ms").get<double>();
  if (!j.at("error").is_null()) r.error = j["error"].get<std::string>();
  return r;
}

void write_records(const std::filesystem::path& path, std::span<const RunRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << record_to_json(r).dump() << '\n';
}

std::vector<RunRecord> read_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(json::parse(line)));
    } catch (const json::exception& e) {
      throw MalformedRecord(no, e.what());
    }
  }
  return out;
}

// --- runner ------------------------------------------------------------------------------

std::uint64_t sample_seed(std::uint64_t base_seed, std::string_view problem_id, int sample) {
  // FNV-1a over the id, mixed with the base seed and sample index (splitmix64 finalizer).
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : problem_id) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::uint64_t z = h ^ (base_seed + 0x9E3779B97F4A7C15ULL * static_cast<std::uint64_t>(sample + 1));
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

namespace {

struct Job {
  std::size_t problem;
  int sample;
  Mode mode;
  std::optional<double> tau;
};

int mode_order(Mode m) {
  switch (m) {
    case Mode::base: return 0;
    case Mode::full_suppress: return 1;
    case Mode::eds: return 2;
  }
  return 3;
}

}  // namespace

std::vector<RunRecord> run_benchmark(std::span<const Problem> problems, const BenchmarkConfig& config,
                                     const ExperiencePool* pool, const BackendFactory& factory) {
  if (config.samples < 1) throw std::invalid_argument("samples must be positive");
  std::vector<Job> jobs;
  for (std::size_t p = 0; p < problems.size(); ++p) {
    for (int s = 0; s < config.samples; ++s) {
      for (auto m : config.modes) {
        if (m == Mode::eds) {
          for (double t : config.taus) jobs.push_back({p, s, m, t});
        } else {
          jobs.push_back({p, s, m, std::nullopt});
        }
      }
    }
  }
  const std::string signal = injection_text(signal_for(config.controller));
  BackendFactory make = factory;
  if (!make) {
    make = [&](const Problem& problem, int) -> std::unique_ptr<Backend> {
      if (config.backend.kind == BackendKind::live) return std::make_unique<LiveBackend>(config.backend);
      if (!config.backend.fixture) throw std::invalid_argument("replay benchmark needs a fixture directory");
      return std::make_unique<ReplayBackend>(
          load_replay_fixture(*config.backend.fixture / (problem.problem_id + ".json")),
          std::vector<std::string>{signal});
    };
  }

  std::vector<RunRecord> records(jobs.size());
  const int n = static_cast<int>(jobs.size());
  const int threads = config.workers > 0 ? config.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    const auto& job = jobs[i];
    const auto& problem = problems[job.problem];
    RunRecord& r = records[i];
    r.dataset = config.dataset_name;
    r.problem_id = problem.problem_id;
    r.sample = job.sample;
    r.mode = job.mode;
    r.tau = job.tau;
    r.seed = sample_seed(config.seed, problem.problem_id, job.sample);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      ControllerConfig cc = config.controller;
      cc.mode = job.mode;
      if (job.tau) cc.tau = *job.tau;
      SuppressionController controller(cc, nullptr, pool);
      auto backend = make(problem, job.sample);
      SessionOptions opt;
      opt.problem_id = problem.problem_id;
      opt.seed = r.seed;
      auto session = run_session(problem.question, *backend, config.backend, controller, opt);
      r.trace_tokens = session.trace.token_count;
      r.token_mode = session.trace.token_mode;
      r.detections = session.detections;
      r.suppressions = session.suppressions;
      r.completion_chars = static_cast<std::int64_t>(session.completion.size());
      r.injected_chars = session.usage.chars_injected;
      try {
        r.final_answer = extract_answer(session.completion,
                                        config.backend.think_delimiters.value_or(ThinkDelimiters{}));
        r.correct = answers_match(r.final_answer, problem.reference_answer);
      } catch (const NoAnswer&) {
        r.correct = false;
      }
    } catch (const std::exception& e) {
      r.error = e.what();
    }
    r.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  }
  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    return std::tuple(a.problem_id, a.sample, mode_order(a.mode), a.tau.value_or(-1.0)) <
           std::tuple(b.problem_id, b.sample, mode_order(b.mode), b.tau.value_or(-1.0));
  });
  return records;
}

// --- reports ----------------------------------------------------------------------------------

double round_to(double value, int decimals) {
  const double scale = std::pow(10.0, decimals);
  return std::round(value * scale) / scale;
}

double percent_change(double base, double value) {
  if (base == 0.0) return 0.0;
  return round_to((value - base) / base * 100.0, 1);
}

void compute_deltas(BenchmarkReport& report) {
  std::map<std::string, const SummaryRow*> base;
  for (const auto& row : report.rows) {
    if (row.mode == Mode::base) base[row.dataset] = &row;
  }
  for (auto& row : report.rows) {
    auto it = base.find(row.dataset);
    if (it == base.end() || row.mode == Mode::base) continue;
    row.acc_delta_points = round_to(row.accuracy - it->second->accuracy, 2);
    row.len_delta_pct = percent_change(it->second->avg_length, row.avg_length);
  }
}

BenchmarkReport summarize(std::span<const RunRecord> records) {
  using Key = std::tuple<std::string, int, double>;
  std::map<Key, SummaryRow> groups;
  std::set<std::string> modes_seen;
  for (const auto& r : records) {
    const Key key{r.dataset, mode_order(r.mode), r.tau.value_or(-1.0)};
    auto& row = groups[key];
    row.dataset = r.dataset;
    row.mode = r.mode;
    row.tau = r.tau;
    ++row.records;
    modes_seen.insert(to_string(r.token_mode));
    if (r.error) {
      ++row.errors;
      continue;
    }
    row.accuracy += r.correct ? 1.0 : 0.0;
    row.avg_length += static_cast<double>(r.trace_tokens);
    row.avg_detections += r.detections;
    row.avg_suppressions += r.suppressions;
  }
  BenchmarkReport report;
  for (auto& [key, row] : groups) {
    const int ok = row.records - row.errors;
    if (ok > 0) {
      row.accuracy = 100.0 * row.accuracy / ok;
      row.avg_length /= ok;
      row.avg_detections /= ok;
      row.avg_suppressions /= ok;
    }
    report.rows.push_back(row);
  }
  report.token_mode = modes_seen.size() == 1 ? *modes_seen.begin() : (modes_seen.empty() ? "" : "mixed");
  compute_deltas(report);
  return report;
}

namespace {

std::string fmt(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  return buf;
}

std::string signed_fmt(double v, int decimals) {
  std::string s = fmt(v, decimals);
  if (s[0] != '-') s = "+" + s;
  return s;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string xml_escape(std::string_view s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string report_csv(const BenchmarkReport& report) {
  std::string out =
      "schema,dataset,mode,tau,records,errors,accuracy,avg_length,length_unit,avg_detections,avg_suppressions,"
      "acc_delta_points,len_delta_pct\n";
  for (const auto& r : report.rows) {
    out += "recheck-summary/1," + csv_field(r.dataset) + "," + to_string(r.mode) + "," +
           (r.tau ? fmt(*r.tau, 2) : "") + "," + std::to_string(r.records) + "," + std::to_string(r.errors) + "," +
           fmt(r.accuracy, 2) + "," + fmt(r.avg_length, 1) + "," + report.token_mode + "," +
           fmt(r.avg_detections, 3) + "," + fmt(r.avg_suppressions, 3) + "," +
           (r.acc_delta_points ? fmt(*r.acc_delta_points, 2) : "") + "," +
           (r.len_delta_pct ? fmt(*r.len_delta_pct, 1) : "") + "\n";
  }
  return out;
}

std::string report_markdown(const BenchmarkReport& report) {
  std::vector<std::string> datasets;
  for (const auto& r : report.rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
  }
  std::string out = "| Dataset | Acc Base | Acc Full-suppress | Acc EDS | Len Base | Len Full-suppress | Len EDS |\n"
                    "|---|---:|---:|---:|---:|---:|---:|\n";
  for (const auto& d : datasets) {
    const SummaryRow* row[3] = {nullptr, nullptr, nullptr};
    for (const auto& r : report.rows) {
      if (r.dataset != d) continue;
      const int m = mode_order(r.mode);
      if (m == 2 && row[2] && std::abs(row[2]->tau.value_or(0) - 0.8) <= std::abs(r.tau.value_or(0) - 0.8)) continue;
      row[m] = &r;
    }
    auto acc = [&](const SummaryRow* r) {
      if (!r) return std::string("-");
      return fmt(r->accuracy, 2) + (r->acc_delta_points ? " (" + signed_fmt(*r->acc_delta_points, 2) + ")" : "");
    };
    auto len = [&](const SummaryRow* r) {
      if (!r) return std::string("-");
      return fmt(r->avg_length, 0) + (r->len_delta_pct ? " (" + signed_fmt(*r->len_delta_pct, 1) + "%)" : "");
    };
    out += "| " + d + " | " + acc(row[0]) + " | " + acc(row[1]) + " | " + acc(row[2]) + " | " + len(row[0]) + " | " +
           len(row[1]) + " | " + len(row[2]) + " |\n";
  }
  out += "\nLength unit: " + (report.token_mode.empty() ? std::string("n/a") : report.token_mode) + "\n";
  return out;
}

std::string sweep_svg(const BenchmarkReport& report, std::string_view dataset) {
  std::vector<const SummaryRow*> eds;
  for (const auto& r : report.rows) {
    if (r.dataset == dataset && r.mode == Mode::eds && r.tau) eds.push_back(&r);
  }
  std::sort(eds.begin(), eds.end(), [](auto* a, auto* b) { return *a->tau < *b->tau; });
  const double W = 640, H = 360, L = 60, R = 60, T = 40, B = 50;
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(dataset)
    << ": accuracy and length reduction vs tau</text>\n"
    << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B
    << "\" stroke=\"black\"/>\n";
  if (eds.empty()) {
    s << "<text x=\"" << W / 2 << "\" y=\"" << H / 2 << "\" text-anchor=\"middle\">no eds rows</text>\n</svg>\n";
    return s.str();
  }
  const double t0 = *eds.front()->tau, t1 = std::max(*eds.back()->tau, t0 + 1e-9);
  double amin = 1e300, amax = -1e300, rmin = 0, rmax = 1e-9;
  for (auto* r : eds) {
    amin = std::min(amin, r->accuracy);
    amax = std::max(amax, r->accuracy);
    const double red = -r->len_delta_pct.value_or(0.0);
    rmin = std::min(rmin, red);
    rmax = std::max(rmax, red);
  }
  if (amax - amin < 1e-9) {
    amin -= 1;
    amax += 1;
  }
  auto x = [&](double t) { return L + (t - t0) / (t1 - t0) * (W - L - R); };
  auto ya = [&](double a) { return H - B - (a - amin) / (amax - amin) * (H - T - B); };
  auto yr = [&](double v) { return H - B - (v - rmin) / (rmax - rmin) * (H - T - B); };
  std::string acc_pts, red_pts;
  for (auto* r : eds) {
    acc_pts += fmt(x(*r->tau), 1) + "," + fmt(ya(r->accuracy), 1) + " ";
    red_pts += fmt(x(*r->tau), 1) + "," + fmt(yr(-r->len_delta_pct.value_or(0.0)), 1) + " ";
    s << "<text x=\"" << fmt(x(*r->tau), 1) << "\" y=\"" << H - B + 18 << "\" text-anchor=\"middle\" font-size=\"11\">"
      << fmt(*r->tau, 2) << "</text>\n";
  }
  s << "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\" points=\"" << acc_pts << "\"/>\n"
    << "<polyline fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\" points=\"" << red_pts << "\"/>\n"
    << "<text x=\"" << L << "\" y=\"" << T - 6 << "\" font-size=\"11\" fill=\"#1f77b4\">accuracy % ("
    << fmt(amin, 1) << " to " << fmt(amax, 1) << ")</text>\n"
    << "<text x=\"" << W - R << "\" y=\"" << T - 6 << "\" font-size=\"11\" fill=\"#d62728\" text-anchor=\"end\">"
    << "length reduction % (" << fmt(rmin, 1) << " to " << fmt(rmax, 1) << ")</text>\n"
    << "<text x=\"" << W / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\" font-size=\"12\">tau</text>\n"
    << "</svg>\n";
  return s.str();
}

std::string activation_svg(const BenchmarkReport& report, std::string_view dataset) {
  std::vector<const SummaryRow*> rows;
  for (const auto& r : report.rows) {
    if (r.dataset == dataset) rows.push_back(&r);
  }
  const double W = 640, H = 360, L = 60, B = 60, T = 40;
  double vmax = 1e-9;
  for (auto* r : rows) vmax = std::max(vmax, r->avg_detections);
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\">\n"
    << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(dataset)
    << ": average recheck activations per rollout</text>\n";
  const double slot = rows.empty() ? 0 : (W - 2 * L) / rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto* r = rows[i];
    const double h = r->avg_detections / vmax * (H - T - B);
    const double x0 = L + i * slot + slot * 0.15;
    std::string label = to_string(r->mode);
    if (r->tau) label += " " + fmt(*r->tau, 2);
    s << "<rect x=\"" << fmt(x0, 1) << "\" y=\"" << fmt(H - B - h, 1) << "\" width=\"" << fmt(slot * 0.7, 1)
      << "\" height=\"" << fmt(h, 1) << "\" fill=\"#4c78a8\"/>\n"
      << "<text x=\"" << fmt(x0 + slot * 0.35, 1) << "\" y=\"" << fmt(H - B - h - 4, 1)
      << "\" text-anchor=\"middle\" font-size=\"11\">" << fmt(r->avg_detections, 2) << "</text>\n"
      << "<text x=\"" << fmt(x0 + slot * 0.35, 1) << "\" y=\"" << H - B + 16
      << "\" text-anchor=\"middle\" font-size=\"11\">" << xml_escape(label) << "</text>\n";
  }
  s << "</svg>\n";
  return s.str();
}

void write_report(const BenchmarkReport& report, const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto put = [&](const std::string& name, const std::string& text) {
    std::ofstream out(out_dir / name, std::ios::binary);
    if (!out) throw Error("cannot write " + (out_dir / name).string());
    out << text;
  };
  put("summary.csv", report_csv(report));
  put("table.md", report_markdown(report));
  std::set<std::string> datasets;
  for (const auto& r : report.rows) datasets.insert(r.dataset);
  for (const auto& d : datasets) {
    std::string safe = d;
    for (auto& c : safe) {
      if (!std::isalnum(static_cast<unsigned char>(c)) && c != '-' && c != '_') c = '_';
    }
    put("sweep_" + safe + ".svg", sweep_svg(report, d));
    put("activations_" + safe + ".svg", activation_svg(report, d));
  }
}

}  // namespace recheck
