#include "recheck/annotation.hpp"

#include <openssl/evp.h>
#include <omp.h>

#include <algorithm>
#include <cctype>
#include <chrono>
#include <fstream>
#include <set>
#include <sstream>
#include <thread>

#include "http_util.hpp"
#include "httplib.h"
#include "recheck/errors.hpp"

namespace recheck {

using nlohmann::json;

const char* to_string(PromptId id) {
  switch (id) {
    case PromptId::reflection_identifier: return "reflection_identifier";
    case PromptId::reflection_type: return "reflection_type";
    case PromptId::activation_extraction: return "activation_extraction";
    case PromptId::activation_filter: return "activation_filter";
    case PromptId::outcome_annotation: return "outcome_annotation";
  }
  return "?";
}

PromptId parse_prompt_id(std::string_view s) {
  for (auto id : kAllPrompts) {
    if (s == to_string(id)) return id;
  }
  throw std::invalid_argument("unknown prompt id '" + std::string(s) + "'");
}

std::filesystem::path PromptSet::default_dir() { return std::filesystem::path(RECHECK_SOURCE_DIR) / "assets" / "prompts"; }

PromptSet PromptSet::load(const std::filesystem::path& dir) {
  PromptSet set;
  for (auto id : kAllPrompts) {
    const auto path = dir / (std::string(to_string(id)) + ".md");
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("missing prompt asset " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    set.texts[id] = ss.str();
  }
  return set;
}

const std::string& PromptSet::text(PromptId id) const { return texts.at(id); }

void AnnotatorConfig::validate() const {
  if (mode == AnnotatorMode::live && endpoint.empty()) throw std::invalid_argument("live annotator needs an endpoint");
  if (cache_dir.empty()) throw std::invalid_argument("annotator needs a cache_dir");
  if (max_attempts < 1) throw std::invalid_argument("max_attempts must be at least 1");
  if (timeout_ms <= 0 || backoff_ms < 0) throw std::invalid_argument("bad annotator timing");
}

std::string sha256_hex(std::string_view data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw Error("sha256 failed");
  static const char* hex = "0123456789abcdef";
  std::string out;
  out.reserve(len * 2);
  for (unsigned i = 0; i < len; ++i) {
    out += hex[md[i] >> 4];
    out += hex[md[i] & 15];
  }
  return out;
}

// --- client -------------------------------------------------------------------------

AnnotatorClient::AnnotatorClient(AnnotatorConfig config) : config_(std::move(config)) {
  config_.validate();
  prompts_ = PromptSet::load(config_.prompt_dir);
  load_cache();
}

std::string AnnotatorClient::cache_key(std::string_view system, std::string_view content) {
  std::string buf;
  buf.reserve(system.size() + content.size() + 1);
  buf.append(system);
  buf += '\x1f';
  buf.append(content);
  return sha256_hex(buf);
}

void AnnotatorClient::load_cache() {
  for (auto id : kAllPrompts) {
    auto& m = cache_[id];
    const auto path = config_.cache_dir / (std::string(to_string(id)) + ".jsonl");
    std::ifstream in(path);
    if (!in) continue;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
      ++no;
      if (trim(line).empty()) continue;
      try {
        auto j = json::parse(line);
        m.emplace(j.at("key").get<std::string>(), j.at("response").get<std::string>());
      } catch (const json::exception& e) {
        throw MalformedRecord(no, path.string() + ": " + e.what());
      }
    }
  }
}

std::string AnnotatorClient::complete(PromptId prompt, std::string_view content) {
  const std::string& system = prompts_.text(prompt);
  const std::string key = cache_key(system, content);
  {
    std::lock_guard lock(mu_);
    auto& m = cache_[prompt];
    if (auto it = m.find(key); it != m.end()) {
      ++cache_hits_;
      return it->second;
    }
  }
  if (config_.mode == AnnotatorMode::replay) {
    throw AnnotatorError(std::string("replay cache has no ") + to_string(prompt) + " response for key " + key);
  }
  std::string response = call_live(system, content);
  std::lock_guard lock(mu_);
  auto& m = cache_[prompt];
  auto [it, inserted] = m.emplace(key, response);
  if (inserted) {
    std::filesystem::create_directories(config_.cache_dir);
    std::ofstream out(config_.cache_dir / (std::string(to_string(prompt)) + ".jsonl"), std::ios::app);
    out << json{{"key", key}, {"response", response}}.dump() << '\n';
    out.flush();
    if (!out) throw AnnotatorError("cannot write annotator cache");
  }
  return it->second;
}

std::string AnnotatorClient::call_live(const std::string& system, std::string_view content) {
  const auto url = detail::split_url(config_.endpoint);
  std::string path = url.path;
  if (path.size() >= 3 && path.compare(path.size() - 3, 3, "/v1") == 0) path.resize(path.size() - 3);
  path += "/v1/chat/completions";
  const json body{{"model", config_.model_name},
                  {"temperature", 0},
                  {"messages", json::array({{{"role", "system"}, {"content", system}},
                                            {{"role", "user"}, {"content", std::string(content)}}})}};
  httplib::Headers headers;
  if (config_.api_key) headers.emplace("Authorization", "Bearer " + *config_.api_key);

  std::string last_error;
  for (int attempt = 0; attempt < config_.max_attempts; ++attempt) {
    if (attempt > 0) std::this_thread::sleep_for(std::chrono::milliseconds(config_.backoff_ms << (attempt - 1)));
    httplib::Client cli(url.base);
    const auto sec = config_.timeout_ms / 1000, usec = (config_.timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    ++network_calls_;
    auto res = cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "transport: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      throw AnnotatorError("annotator returned HTTP " + std::to_string(res->status) + ": " + res->body);
    }
    try {
      auto j = json::parse(res->body);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
      throw AnnotatorError(std::string("malformed annotator response: ") + e.what());
    }
  }
  throw AnnotatorError("annotator failed after " + std::to_string(config_.max_attempts) + " attempts: " + last_error);
}

// --- extraction -------------------------------------------------------------------------

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

// Strips one pair of matching straight or curly quotes.
std::string_view unquote(std::string_view s) {
  static const std::pair<std::string_view, std::string_view> pairs[] = {
      {"\"", "\""}, {"'", "'"}, {"\xE2\x80\x9C", "\xE2\x80\x9D"}, {"\xE2\x80\x98", "\xE2\x80\x99"}};
  for (auto [open, close] : pairs) {
    if (s.size() >= open.size() + close.size() && s.substr(0, open.size()) == open &&
        s.substr(s.size() - close.size()) == close) {
      return s.substr(open.size(), s.size() - open.size() - close.size());
    }
  }
  return s;
}

std::string_view strip_bullet(std::string_view s) {
  s = trim(s);
  if (s.substr(0, 3) == "\xE2\x80\xA2") return trim(s.substr(3));
  if (!s.empty() && (s[0] == '-' || s[0] == '*')) return trim(s.substr(1));
  std::size_t i = 0;
  while (i < s.size() && std::isdigit(static_cast<unsigned char>(s[i]))) ++i;
  if (i > 0 && i < s.size() && (s[i] == '.' || s[i] == ')') && i + 1 < s.size() && s[i + 1] == ' ') {
    return trim(s.substr(i + 1));
  }
  return s;
}

}  // namespace

std::vector<std::string> parse_sentence_list(std::string_view response) {
  std::string_view r = trim(response);
  // Drop a surrounding code fence.
  if (r.substr(0, 3) == "```") {
    const auto nl = r.find('\n');
    r = nl == std::string_view::npos ? std::string_view{} : r.substr(nl + 1);
    if (const auto end = r.rfind("```"); end != std::string_view::npos) r = r.substr(0, end);
    r = trim(r);
  }
  std::vector<std::string> out;
  if (r.empty() || lower(r) == "none") return out;
  if (r.front() == '[') {
    json j;
    try {
      j = json::parse(r);
    } catch (const json::parse_error& e) {
      throw AnnotatorError(std::string("extraction response is not a JSON array: ") + e.what());
    }
    for (const auto& v : j) {
      if (!v.is_string()) throw AnnotatorError("extraction array must hold strings");
      out.push_back(v.get<std::string>());
    }
    return out;
  }
  std::size_t pos = 0;
  while (pos <= r.size()) {
    auto nl = r.find('\n', pos);
    if (nl == std::string_view::npos) nl = r.size();
    auto line = unquote(strip_bullet(r.substr(pos, nl - pos)));
    if (!trim(line).empty()) out.emplace_back(trim(line));
    pos = nl + 1;
  }
  return out;
}

ExtractionResult anchor_sentences(const ReasoningTrace& trace, std::span<const std::string> sentences) {
  std::vector<std::pair<Anchor, std::string>> flat;
  for (const auto& step : trace.steps) {
    for (const auto& s : step.sentences) flat.push_back({{s.step_index, s.sentence_index}, normalize_whitespace(s.text)});
  }
  ExtractionResult r;
  std::size_t cursor = 0;
  for (const auto& raw : sentences) {
    ++r.returned;
    const std::string want = normalize_whitespace(raw);
    std::size_t i = cursor;
    while (i < flat.size() && flat[i].second != want) ++i;
    if (want.empty() || i == flat.size()) {
      ++r.no_match;
      continue;
    }
    r.candidates.push_back({trace.sentence(flat[i].first).text, flat[i].first, false});
    cursor = i + 1;
  }
  return r;
}

ExtractionResult extract_activations(const ReasoningTrace& trace, AnnotatorClient& client) {
  const auto response = client.complete(PromptId::activation_extraction, trace.raw_text);
  const auto sentences = parse_sentence_list(response);
  return anchor_sentences(trace, sentences);
}

bool parse_filter_response(std::string_view response) {
  const auto r = trim(response);
  if (r == "1") return true;
  if (r == "0") return false;
  throw AnnotatorError("filter response must be 1 or 0, got '" + std::string(r.substr(0, 40)) + "'");
}

FilterResult filter_activations(std::span<const ActivationCandidate> candidates, AnnotatorClient& client) {
  FilterResult out;
  for (auto c : candidates) {
    c.verified = parse_filter_response(client.complete(PromptId::activation_filter, c.sentence_text));
    (c.verified ? out.kept : out.hard_negatives).push_back(std::move(c));
  }
  return out;
}

// --- outcomes ----------------------------------------------------------------------------

const char* to_string(Outcome o) {
  switch (o) {
    case Outcome::necessary: return "NECESSARY";
    case Outcome::unnecessary: return "UNNECESSARY";
    case Outcome::inconclusive: return "INCONCLUSIVE";
  }
  return "?";
}

Outcome parse_outcome(std::string_view response) {
  std::size_t i = 0;
  while (i < response.size()) {
    while (i < response.size() && !std::isalpha(static_cast<unsigned char>(response[i]))) ++i;
    std::size_t j = i;
    while (j < response.size() && std::isalpha(static_cast<unsigned char>(response[j]))) ++j;
    const auto word = lower(response.substr(i, j - i));
    if (word == "necessary") return Outcome::necessary;
    if (word == "unnecessary") return Outcome::unnecessary;
    if (word == "inconclusive") return Outcome::inconclusive;
    i = j;
  }
  throw AnnotatorError("outcome response has no label: '" + std::string(trim(response).substr(0, 60)) + "'");
}

std::string Episode::prompt_content() const {
  std::string ctx = before.text;
  if (!ctx.empty()) ctx += '\n';
  ctx += anchor_sentence;
  ctx += after;
  return "Onset sentence:\n" + anchor_sentence + "\n\nContext window:\n" + ctx;
}

Episode build_episode(const ReasoningTrace& trace, Anchor anchor, const OutcomeConfig& config) {
  const auto& s = trace.sentence(anchor);
  Episode e;
  e.before = extract_context(trace, anchor, config.before);
  e.anchor_sentence = s.text;
  const std::size_t last =
      std::min(static_cast<std::size_t>(anchor.step) + config.after_steps, trace.steps.size() - 1);
  const std::size_t end = trace.steps[last].span.end;
  e.after = trace.raw_text.substr(s.span.end, end - s.span.end);
  return e;
}

std::string unit_id(std::string_view model, std::string_view problem_id, Anchor anchor) {
  return std::string(model) + "/" + std::string(problem_id) + "/s" + std::to_string(anchor.step) + "." +
         std::to_string(anchor.sentence);
}

OutcomeResult annotate_outcome(const ActivationCandidate& candidate, const ReasoningTrace& trace,
                               std::string_view model, AnnotatorClient& client, const OutcomeConfig& config) {
  const auto episode = build_episode(trace, candidate.anchor, config);
  const auto response = client.complete(PromptId::outcome_annotation, episode.prompt_content());
  OutcomeResult r;
  r.outcome = parse_outcome(response);
  r.evidence = std::string(trim(response));
  if (r.outcome == Outcome::inconclusive || trim(episode.before.text).empty()) return r;
  ExperienceUnit u;
  u.id = unit_id(model, trace.problem_id, candidate.anchor);
  u.context = episode.before.text;
  u.label = r.outcome == Outcome::necessary ? Label::necessary : Label::unnecessary;
  u.source = {trace.problem_id, std::string(model), candidate.anchor};
  u.annotator = client.config().model_name;
  r.unit = std::move(u);
  return r;
}

// --- pipeline ------------------------------------------------------------------------------

nlohmann::ordered_json PipelineReport::to_json() const {
  nlohmann::ordered_json j;
  j["traces"] = traces;
  j["returned"] = returned;
  j["no_match"] = no_match;
  j["candidates"] = candidates;
  j["verified"] = verified;
  j["hard_negatives"] = hard_negatives;
  j["necessary"] = necessary;
  j["unnecessary"] = unnecessary;
  j["inconclusive"] = inconclusive;
  j["empty_context"] = empty_context;
  j["errors"] = errors;
  return j;
}

namespace {

struct RolloutOutcome {
  std::vector<ExperienceUnit> units;
  TrainingSources training;
  PipelineReport report;
};

RolloutOutcome annotate_rollout(const Rollout& rollout, AnnotatorClient& client, const PipelineConfig& config) {
  RolloutOutcome out;
  const auto trace = segment_trace(rollout.problem_id, rollout.raw_text);
  const std::string model = rollout.model.empty() ? "model" : rollout.model;
  auto ex = extract_activations(trace, client);
  out.report.returned = ex.returned;
  out.report.no_match = ex.no_match;
  out.report.candidates = static_cast<int>(ex.candidates.size());
  auto fr = filter_activations(ex.candidates, client);
  out.report.verified = static_cast<int>(fr.kept.size());
  out.report.hard_negatives = static_cast<int>(fr.hard_negatives.size());

  auto labeled = [&](const ActivationCandidate& c, int label) {
    return LabeledSentence{c.sentence_text, extract_context(trace, c.anchor, config.outcome.before).text, label};
  };
  for (const auto& c : fr.hard_negatives) out.training.hard_negatives.push_back(labeled(c, 0));
  std::set<Anchor> extracted;
  for (const auto& c : ex.candidates) extracted.insert(c.anchor);
  for (const auto& step : trace.steps) {
    for (const auto& s : step.sentences) {
      const Anchor a{s.step_index, s.sentence_index};
      if (!extracted.count(a)) out.training.easy_pool.push_back(labeled({s.text, a, false}, 0));
    }
  }
  for (const auto& c : fr.kept) {
    out.training.positives.push_back(labeled(c, 1));
    auto r = annotate_outcome(c, trace, model, client, config.outcome);
    switch (r.outcome) {
      case Outcome::necessary: ++out.report.necessary; break;
      case Outcome::unnecessary: ++out.report.unnecessary; break;
      case Outcome::inconclusive: ++out.report.inconclusive; break;
    }
    if (r.unit) {
      out.units.push_back(std::move(*r.unit));
    } else if (r.outcome != Outcome::inconclusive) {
      ++out.report.empty_context;
    }
  }
  return out;
}

template <class T>
void append(std::vector<T>& dst, std::vector<T>& src) {
  dst.insert(dst.end(), std::make_move_iterator(src.begin()), std::make_move_iterator(src.end()));
}

}  // namespace

PipelineResult run_pipeline(std::span<const Rollout> rollouts, AnnotatorClient& client, const PipelineConfig& config) {
  std::vector<RolloutOutcome> parts(rollouts.size());
  const int n = static_cast<int>(rollouts.size());
  const int threads = config.workers > 0 ? config.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    try {
      parts[i] = annotate_rollout(rollouts[i], client, config);
    } catch (const Error& e) {
      parts[i] = RolloutOutcome{};
      parts[i].report.errors.push_back(rollouts[i].problem_id + ": " + e.what());
    }
  }
  PipelineResult result;
  auto& rep = result.report;
  rep.traces = n;
  for (auto& p : parts) {
    append(result.units, p.units);
    append(result.training.positives, p.training.positives);
    append(result.training.hard_negatives, p.training.hard_negatives);
    append(result.training.easy_pool, p.training.easy_pool);
    rep.returned += p.report.returned;
    rep.no_match += p.report.no_match;
    rep.candidates += p.report.candidates;
    rep.verified += p.report.verified;
    rep.hard_negatives += p.report.hard_negatives;
    rep.necessary += p.report.necessary;
    rep.unnecessary += p.report.unnecessary;
    rep.inconclusive += p.report.inconclusive;
    rep.empty_context += p.report.empty_context;
    append(rep.errors, p.report.errors);
  }
  return result;
}

// --- census ------------------------------------------------------------------------------------

char to_letter(ReflectionType t) { return static_cast<char>('a' + static_cast<int>(t)); }

bool parse_reflective(std::string_view response) {
  auto r = lower(trim(response));
  while (!r.empty() && (r.back() == '.' || r.back() == '!')) r.pop_back();
  if (r == "true") return true;
  if (r == "false") return false;
  throw AnnotatorError("reflection identifier must answer True or False, got '" + r.substr(0, 40) + "'");
}

ReflectionType parse_reflection_type(std::string_view response) {
  const auto r = trim(response);
  if (!r.empty()) {
    const char c = static_cast<char>(std::tolower(static_cast<unsigned char>(r[0])));
    const bool alone = r.size() == 1 || r[1] == '.' || r[1] == ')' || r[1] == ' ' || r[1] == ':';
    if (c >= 'a' && c <= 'd' && alone) return static_cast<ReflectionType>(c - 'a');
  }
  throw AnnotatorError("reflection type must be a, b, c or d, got '" + std::string(r.substr(0, 40)) + "'");
}

namespace {
double pct(int num, int den) { return den == 0 ? 0.0 : 100.0 * num / den; }
}  // namespace

double CensusReport::reflective_pct() const { return pct(reflective, steps); }
double CensusReport::rethink_pct() const { return pct(types[2], types[0] + types[1] + types[2]); }
double CensusReport::recheck_pct() const { return pct(types[0] + types[1], types[0] + types[1] + types[2]); }
double CensusReport::corrective_pct() const { return pct(types[0], types[0] + types[1]); }
double CensusReport::confirmatory_pct() const { return pct(types[1], types[0] + types[1]); }

std::string CensusReport::markdown() const {
  char buf[512];
  std::string out = "| measure | count | percent |\n|---|---:|---:|\n";
  auto row = [&](const char* name, int count, double p) {
    std::snprintf(buf, sizeof buf, "| %s | %d | %.1f |\n", name, count, p);
    out += buf;
  };
  row("reflective steps", reflective, reflective_pct());
  row("rethink", types[2], rethink_pct());
  row("recheck", types[0] + types[1], recheck_pct());
  row("corrective recheck", types[0], corrective_pct());
  row("confirmatory recheck", types[1], confirmatory_pct());
  row("unable to classify", types[3], pct(types[3], reflective));
  std::snprintf(buf, sizeof buf, "\nsteps: %d\n", steps);
  out += buf;
  return out;
}

nlohmann::ordered_json CensusReport::to_json() const {
  nlohmann::ordered_json j;
  j["steps"] = steps;
  j["reflective"] = reflective;
  j["types"] = {{"a", types[0]}, {"b", types[1]}, {"c", types[2]}, {"d", types[3]}};
  j["reflective_pct"] = reflective_pct();
  j["rethink_pct"] = rethink_pct();
  j["recheck_pct"] = recheck_pct();
  j["corrective_pct"] = corrective_pct();
  j["confirmatory_pct"] = confirmatory_pct();
  return j;
}

std::string reflection_type_content(const ReasoningTrace& trace, int step, std::size_t later_steps) {
  std::string out = "Earlier reasoning step:\n";
  out += step > 0 ? trace.steps[step - 1].text : std::string("(none)");
  out += "\n\nLater context:\n";
  std::string later;
  for (std::size_t k = step + 1; k < trace.steps.size() && k <= step + later_steps; ++k) {
    if (!later.empty()) later += "\n\n";
    later += trace.steps[k].text;
  }
  out += later.empty() ? "(none)" : later;
  out += "\n\nStep to classify:\n" + trace.steps[step].text;
  return out;
}

CensusReport reflection_census(std::span<const ReasoningTrace> traces, AnnotatorClient& client,
                               const CensusConfig& config) {
  std::vector<std::vector<StepCensus>> parts(traces.size());
  std::vector<std::string> errors(traces.size());
  const int n = static_cast<int>(traces.size());
  const int threads = config.workers > 0 ? config.workers : omp_get_max_threads();
#pragma omp parallel for schedule(dynamic) num_threads(threads)
  for (int i = 0; i < n; ++i) {
    try {
      const auto& t = traces[i];
      for (const auto& step : t.steps) {
        StepCensus row{t.problem_id, step.index, false, std::nullopt};
        row.reflective = parse_reflective(client.complete(PromptId::reflection_identifier, step.text));
        if (row.reflective) {
          row.type = parse_reflection_type(
              client.complete(PromptId::reflection_type, reflection_type_content(t, step.index, config.later_steps)));
        }
        parts[i].push_back(std::move(row));
      }
    } catch (const Error& e) {
      errors[i] = traces[i].problem_id + ": " + e.what();
    }
  }
  for (const auto& e : errors) {
    if (!e.empty()) throw AnnotatorError("census failed for " + e);
  }
  CensusReport r;
  for (auto& p : parts) {
    for (auto& row : p) {
      ++r.steps;
      if (row.reflective) ++r.reflective;
      if (row.type) ++r.types[static_cast<int>(*row.type)];
      r.rows.push_back(std::move(row));
    }
  }
  return r;
}

Agreement cohen_kappa(const std::vector<std::vector<long>>& m) {
  const std::size_t k = m.size();
  for (const auto& row : m) {
    if (row.size() != k) throw std::invalid_argument("confusion matrix must be square");
  }
  Agreement a;
  long diag = 0;
  std::vector<long> rows(k, 0), cols(k, 0);
  for (std::size_t i = 0; i < k; ++i) {
    for (std::size_t j = 0; j < k; ++j) {
      if (m[i][j] < 0) throw std::invalid_argument("negative count in confusion matrix");
      a.n += m[i][j];
      rows[i] += m[i][j];
      cols[j] += m[i][j];
      if (i == j) diag += m[i][j];
    }
  }
  if (a.n == 0) throw std::invalid_argument("empty confusion matrix");
  const double n = static_cast<double>(a.n);
  a.observed = diag / n;
  double pe = 0.0;
  for (std::size_t i = 0; i < k; ++i) pe += (rows[i] / n) * (cols[i] / n);
  a.kappa = pe >= 1.0 ? (a.observed >= 1.0 ? 1.0 : 0.0) : (a.observed - pe) / (1.0 - pe);
  return a;
}

std::vector<std::vector<long>> census_confusion(const CensusReport& census, const std::filesystem::path& human_labels) {
  std::map<std::pair<std::string, int>, ReflectionType> llm;
  for (const auto& r : census.rows) {
    if (r.type) llm[{r.problem_id, r.step}] = *r.type;
  }
  std::ifstream in(human_labels);
  if (!in) throw Error("cannot open " + human_labels.string());
  std::vector<std::vector<long>> m(4, std::vector<long>(4, 0));
  std::string line;
  std::size_t no = 0;
  while (std::getline(in, line)) {
    ++no;
    if (trim(line).empty()) continue;
    try {
      auto j = json::parse(line);
      const auto human = parse_reflection_type(j.at("label").get<std::string>());
      auto it = llm.find({j.at("problem_id").get<std::string>(), j.at("step").get<int>()});
      if (it != llm.end()) ++m[static_cast<int>(human)][static_cast<int>(it->second)];
    } catch (const json::exception& e) {
      throw MalformedRecord(no, e.what());
    } catch (const AnnotatorError& e) {
      throw MalformedRecord(no, e.what());
    }
  }
  return m;
}

}  // namespace recheck
