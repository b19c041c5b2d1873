#include "recheck/detector.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <random>
#include <stdexcept>

#include "http_util.hpp"
#include "httplib.h"
#include "json.hpp"
#include "recheck/errors.hpp"

namespace recheck {

void DetectorConfig::validate() const {
  if (threshold < 0.0 || threshold > 1.0) throw std::invalid_argument("detector threshold must be in [0,1]");
  if (timeout_ms <= 0) throw std::invalid_argument("detector timeout_ms must be positive");
  if (kind == DetectorKind::remote && (!endpoint || endpoint->empty())) {
    throw std::invalid_argument("remote detector needs an endpoint");
  }
  if (kind == DetectorKind::lexical && endpoint) {
    throw std::invalid_argument("lexical detector takes no endpoint");
  }
}

namespace {

bool is_word_char(char c) {
  return (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || (c >= 'A' && c <= 'Z');
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

// `pattern` ending in '*' matches as a prefix (stem); otherwise as a whole word
// or phrase.
bool contains_cue(std::string_view text, std::string_view pattern) {
  const bool stem = !pattern.empty() && pattern.back() == '*';
  if (stem) pattern.remove_suffix(1);
  std::size_t pos = 0;
  while ((pos = text.find(pattern, pos)) != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_word_char(text[pos - 1]);
    const std::size_t end = pos + pattern.size();
    const bool right_ok = stem || end == text.size() || !is_word_char(text[end]);
    if (left_ok && right_ok) return true;
    ++pos;
  }
  return false;
}

bool starts_with_any(std::string_view text, std::initializer_list<std::string_view> openers) {
  for (auto o : openers) {
    if (text.substr(0, o.size()) == o && (text.size() == o.size() || !is_word_char(text[o.size()]))) {
      return true;
    }
  }
  return false;
}

constexpr std::string_view kVerificationCues[] = {
    "check*",        "re-check*",     "recheck*",        "double-check*",    "double check*",
    "verif*",        "confirm*",      "counterexample*", "counter-example*", "recomput*",
    "re-comput*",    "recalculat*",   "re-calculat*",    "plug in",          "plug it*",
    "plug this*",    "plug that*",    "plug the*",       "plugging*",        "plug back",
    "test whether",  "see if this holds", "see if it holds", "see if this works",
    "see if it works", "see if that works", "see if that holds", "make sure", "sanity*",
};

constexpr std::string_view kSelfReference[] = {
    "let me", "let's", "let us", "i should", "i need to", "i'll", "wait", "hold on", "to be safe",
};

constexpr double kStrongCue = 0.6;
constexpr double kExtraCue = 0.1;
constexpr double kSelfRef = 0.15;
constexpr double kSelfRefCap = 0.3;
constexpr double kConclusionPenalty = 0.2;
constexpr double kForwardPenalty = 0.4;
constexpr double kStrategyPenalty = 0.4;
constexpr double kOutcomePenalty = 0.6;

}  // namespace

double LexicalDetector::score(std::string_view sentence) const {
  const std::string s = lower(trim(sentence));
  std::string_view text = s;

  int cues = 0;
  for (auto cue : kVerificationCues) {
    if (contains_cue(text, cue)) ++cues;
  }
  // "compute this again", "calculate it again"
  const bool recompute_again =
      contains_cue(text, "again") && (contains_cue(text, "comput*") || contains_cue(text, "calculat*") ||
                                       contains_cue(text, "evaluat*") || contains_cue(text, "redo*"));
  if (recompute_again) ++cues;

  double score = 0.0;
  if (cues > 0) score += kStrongCue + kExtraCue * (cues - 1);

  double self = 0.0;
  for (auto cue : kSelfReference) {
    if (contains_cue(text, cue)) self += kSelfRef;
  }
  score += std::min(self, kSelfRefCap);

  // Stating the outcome of a check is not the start of one.
  if (contains_cue(text, "checks out") || contains_cue(text, "checked out")) score -= kOutcomePenalty;
  if (starts_with_any(text, {"therefore", "thus", "hence"})) score -= kConclusionPenalty;
  if (!recompute_again &&
      starts_with_any(text, {"compute", "we obtain", "we get", "we have", "calculate", "now compute",
                             "next, compute", "now we compute"})) {
    score -= kForwardPenalty;
  }
  if (contains_cue(text, "alternatively") || contains_cue(text, "maybe try") ||
      contains_cue(text, "another approach") || contains_cue(text, "instead")) {
    score -= kStrategyPenalty;
  }
  return std::clamp(score, 0.0, 1.0);
}

DetectionResult LexicalDetector::detect(std::string_view sentence, const ContextWindow&) {
  const auto t0 = std::chrono::steady_clock::now();
  DetectionResult r;
  r.score = score(sentence);
  r.is_recheck_activation = r.score >= threshold_;
  r.detector_id = "lexical/1";
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

struct RemoteDetector::Connection {
  explicit Connection(const std::string& base, int timeout_ms) : client(base) {
    const auto sec = timeout_ms / 1000;
    const auto usec = (timeout_ms % 1000) * 1000;
    client.set_connection_timeout(sec, usec);
    client.set_read_timeout(sec, usec);
    client.set_write_timeout(sec, usec);
    client.set_keep_alive(true);
  }
  httplib::Client client;
};

RemoteDetector::RemoteDetector(DetectorConfig config) : config_(std::move(config)) {
  config_.validate();
  auto url = detail::split_url(*config_.endpoint);
  base_ = url.base;
  path_ = url.path.empty() ? "/v1/detect" : url.path;
}

RemoteDetector::~RemoteDetector() = default;

std::unique_ptr<RemoteDetector::Connection> RemoteDetector::acquire() {
  {
    std::lock_guard lock(mu_);
    if (!idle_.empty()) {
      auto c = std::move(idle_.back());
      idle_.pop_back();
      return c;
    }
  }
  return std::make_unique<Connection>(base_, config_.timeout_ms);
}

void RemoteDetector::release(std::unique_ptr<Connection> c) {
  std::lock_guard lock(mu_);
  idle_.push_back(std::move(c));
}

DetectionResult RemoteDetector::call(std::string_view sentence, std::string_view context) {
  const nlohmann::json body{{"sentence", sentence}, {"context", context}};
  auto conn = acquire();
  auto res = conn->client.Post(path_, body.dump(), "application/json");
  if (!res) {
    const auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read) {
      throw DetectorTimeout("detector request timed out: " + httplib::to_string(err));
    }
    throw RemoteUnavailable("detector request failed: " + httplib::to_string(err));
  }
  release(std::move(conn));
  if (res->status < 200 || res->status >= 300) {
    throw RemoteUnavailable("detector returned HTTP " + std::to_string(res->status));
  }
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::parse_error&) {
    throw RemoteUnavailable("detector response is not JSON");
  }
  if (!j.is_object() || !j.contains("probability") || !j["probability"].is_number() ||
      !j.contains("model_version") || !j["model_version"].is_string()) {
    throw RemoteUnavailable("detector response violates schema");
  }
  const double p = j["probability"].get<double>();
  if (!(p >= 0.0 && p <= 1.0)) throw RemoteUnavailable("detector probability outside [0,1]");
  DetectionResult r;
  r.score = p;
  r.is_recheck_activation = p >= config_.threshold;
  r.detector_id = "remote/" + j["model_version"].get<std::string>();
  return r;
}

DetectionResult RemoteDetector::detect(std::string_view sentence, const ContextWindow& context) {
  const auto t0 = std::chrono::steady_clock::now();
  DetectionResult r;
  try {
    r = call(sentence, context.text);
  } catch (const Error&) {
    if (config_.fallback == Fallback::fail_closed) throw;
    r = DetectionResult{false, 0.0, "remote/fail-open", 0.0};
  }
  r.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::unique_ptr<RecheckDetector> make_detector(const DetectorConfig& config) {
  config.validate();
  if (config.kind == DetectorKind::remote) return std::make_unique<RemoteDetector>(config);
  return std::make_unique<LexicalDetector>(config.threshold);
}

DetectionResult detect(const Sentence& sentence, const ContextWindow& preceding,
                       const DetectorConfig& config) {
  return make_detector(config)->detect(sentence.text, preceding);
}

std::vector<LabeledSentence> build_detector_training_set(const TrainingSources& sources,
                                                         std::uint64_t seed, TrainingSetCounts* counts) {
  const std::size_t positives = sources.positives.size();
  const std::size_t negatives = 3 * positives;
  std::size_t hard = std::min(negatives / 2, sources.hard_negatives.size());
  std::size_t easy = negatives - hard;
  if (easy > sources.easy_pool.size()) {
    hard += easy - sources.easy_pool.size();
    easy = sources.easy_pool.size();
  }
  if (hard > sources.hard_negatives.size()) {
    throw InsufficientNegatives("need " + std::to_string(negatives) + " negatives, have " +
                                std::to_string(sources.hard_negatives.size()) + " hard and " +
                                std::to_string(sources.easy_pool.size()) + " easy");
  }

  std::mt19937_64 rng(seed);
  auto sample = [&rng](std::vector<LabeledSentence> pool, std::size_t n, int label) {
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(n);
    for (auto& row : pool) row.label = label;
    return pool;
  };

  std::vector<LabeledSentence> rows;
  rows.reserve(positives + negatives);
  for (auto row : sources.positives) {
    row.label = 1;
    rows.push_back(std::move(row));
  }
  for (auto& row : sample(sources.hard_negatives, hard, 0)) rows.push_back(std::move(row));
  for (auto& row : sample(sources.easy_pool, easy, 0)) rows.push_back(std::move(row));
  std::shuffle(rows.begin(), rows.end(), rng);
  if (counts) *counts = {positives, hard, easy};
  return rows;
}

void write_training_set(const std::filesystem::path& path, std::span<const LabeledSentence> rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : rows) {
    out << nlohmann::json{{"sentence", r.sentence}, {"context", r.context}, {"label", r.label}}.dump()
        << '\n';
  }
}

}  // namespace recheck
