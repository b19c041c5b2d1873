#pragma once

// Offline pool construction: an annotator client with a content-addressed
// cache, activation extraction / filtering / outcome labeling, the reflection
// census and agreement statistics.

#include <array>
#include <atomic>
#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recheck/detector.hpp"
#include "recheck/pool.hpp"
#include "recheck/trace.hpp"

namespace recheck {

enum class PromptId { reflection_identifier, reflection_type, activation_extraction, activation_filter, outcome_annotation };

inline constexpr std::array<PromptId, 5> kAllPrompts{PromptId::reflection_identifier, PromptId::reflection_type,
                                                     PromptId::activation_extraction, PromptId::activation_filter,
                                                     PromptId::outcome_annotation};

const char* to_string(PromptId id);
PromptId parse_prompt_id(std::string_view s);

/// The shipped prompt texts; `dir` holds one `<prompt_id>.md` per prompt.
struct PromptSet {
  std::map<PromptId, std::string> texts;

  static PromptSet load(const std::filesystem::path& dir);
  static std::filesystem::path default_dir();
  const std::string& text(PromptId id) const;
};

enum class AnnotatorMode { live, replay };

struct AnnotatorConfig {
  std::string endpoint;  // base URL of an OpenAI-compatible server (live)
  std::string model_name = "gpt-5";
  std::optional<std::string> api_key;
  std::filesystem::path cache_dir;
  std::filesystem::path prompt_dir = PromptSet::default_dir();
  AnnotatorMode mode = AnnotatorMode::replay;
  int max_attempts = 3;  // transport errors, 429 and 5xx only
  int backoff_ms = 250;  // doubled per attempt
  int timeout_ms = 120000;

  void validate() const;  // throws std::invalid_argument
};

std::string sha256_hex(std::string_view data);

/// Sends (system prompt, user content) pairs to the annotator. Every response
/// is cached under <cache_dir>/<prompt_id>.jsonl keyed by a hash of both
/// texts; a key is written once. Replay mode answers from the cache only and
/// never opens a connection. Safe to share between threads.
class AnnotatorClient {
 public:
  explicit AnnotatorClient(AnnotatorConfig config);

  /// Raw response text. Throws AnnotatorError.
  std::string complete(PromptId prompt, std::string_view content);

  static std::string cache_key(std::string_view system, std::string_view content);

  const AnnotatorConfig& config() const noexcept { return config_; }
  const PromptSet& prompts() const noexcept { return prompts_; }
  int network_calls() const noexcept { return network_calls_; }
  int cache_hits() const noexcept { return cache_hits_; }

 private:
  std::string call_live(const std::string& system, std::string_view content);
  void load_cache();

  AnnotatorConfig config_;
  PromptSet prompts_;
  std::mutex mu_;
  std::map<PromptId, std::unordered_map<std::string, std::string>> cache_;
  std::atomic<int> network_calls_{0};
  std::atomic<int> cache_hits_{0};
};

// --- activations -----------------------------------------------------------------

struct ActivationCandidate {
  std::string sentence_text;  // verbatim trace sentence
  Anchor anchor;
  bool verified = false;
};

/// Sentences from an extraction response: a JSON array of strings, or one
/// sentence per line with optional bullets, numbering and quotes. "NONE" or
/// "[]" means no sentences. Throws AnnotatorError on an unparseable array.
std::vector<std::string> parse_sentence_list(std::string_view response);

/// Anchors each sentence to its first whitespace-normalized match after the
/// previous match. Unmatched sentences are counted in `no_match`.
struct ExtractionResult {
  std::vector<ActivationCandidate> candidates;
  int returned = 0;
  int no_match = 0;
};
ExtractionResult anchor_sentences(const ReasoningTrace& trace, std::span<const std::string> sentences);

ExtractionResult extract_activations(const ReasoningTrace& trace, AnnotatorClient& client);

/// "1" or "0" after trimming; anything else is an AnnotatorError.
bool parse_filter_response(std::string_view response);

struct FilterResult {
  std::vector<ActivationCandidate> kept;            // verified = true
  std::vector<ActivationCandidate> hard_negatives;  // rejected by the filter
};
FilterResult filter_activations(std::span<const ActivationCandidate> candidates, AnnotatorClient& client);

// --- outcomes -------------------------------------------------------------------

enum class Outcome { necessary, unnecessary, inconclusive };
const char* to_string(Outcome o);

/// The first outcome word (whole word, case-insensitive) in the response;
/// none raises AnnotatorError.
Outcome parse_outcome(std::string_view response);

struct OutcomeConfig {
  WindowSpec before;        // also the stored unit context
  std::size_t after_steps = 4;
};

struct Episode {
  ContextWindow before;
  std::string anchor_sentence;
  std::string after;  // rest of the anchor step plus `after_steps` steps

  std::string prompt_content() const;
};

Episode build_episode(const ReasoningTrace& trace, Anchor anchor, const OutcomeConfig& config);

struct OutcomeResult {
  Outcome outcome = Outcome::inconclusive;
  std::string evidence;                 // trimmed annotator response
  std::optional<ExperienceUnit> unit;   // absent for inconclusive or empty context
};

std::string unit_id(std::string_view model, std::string_view problem_id, Anchor anchor);

OutcomeResult annotate_outcome(const ActivationCandidate& candidate, const ReasoningTrace& trace,
                               std::string_view model, AnnotatorClient& client, const OutcomeConfig& config);

// --- batch pipeline -----------------------------------------------------------------

struct PipelineConfig {
  OutcomeConfig outcome;
  int workers = 0;  // 0: OpenMP default
};

struct PipelineReport {
  int traces = 0;
  int returned = 0;
  int no_match = 0;
  int candidates = 0;
  int verified = 0;
  int hard_negatives = 0;
  int necessary = 0;
  int unnecessary = 0;
  int inconclusive = 0;
  int empty_context = 0;
  std::vector<std::string> errors;  // per-rollout AnnotatorError messages

  nlohmann::ordered_json to_json() const;
};

struct PipelineResult {
  std::vector<ExperienceUnit> units;  // rollout order, then anchor order
  TrainingSources training;           // positives, hard negatives, never-extracted sentences
  PipelineReport report;
};

/// Runs extract, filter and outcome over every rollout. A rollout whose
/// annotation fails is skipped and reported; completed calls stay cached, so
/// a rerun resumes where it stopped.
PipelineResult run_pipeline(std::span<const Rollout> rollouts, AnnotatorClient& client, const PipelineConfig& config);

// --- reflection census ----------------------------------------------------------------

enum class ReflectionType { corrective, confirmatory, rethink, unclassified };  // a, b, c, d
char to_letter(ReflectionType t);

/// "True"/"False", case-insensitive, trimmed.
bool parse_reflective(std::string_view response);
/// A single letter a-d, optionally followed by "." and the label name.
ReflectionType parse_reflection_type(std::string_view response);

struct StepCensus {
  std::string problem_id;
  int step = 0;
  bool reflective = false;
  std::optional<ReflectionType> type;
};

struct CensusReport {
  std::vector<StepCensus> rows;
  int steps = 0;
  int reflective = 0;
  std::array<int, 4> types{};  // indexed by ReflectionType

  double reflective_pct() const;
  double rethink_pct() const;       // among classified reflective steps
  double recheck_pct() const;
  double corrective_pct() const;    // among rechecks
  double confirmatory_pct() const;
  std::string markdown() const;
  nlohmann::ordered_json to_json() const;
};

struct CensusConfig {
  std::size_t later_steps = 2;  // context after the step for the type prompt
  int workers = 0;
};

/// Type prompt content: the previous step, the step, and a few later steps.
std::string reflection_type_content(const ReasoningTrace& trace, int step, std::size_t later_steps);

CensusReport reflection_census(std::span<const ReasoningTrace> traces, AnnotatorClient& client,
                               const CensusConfig& config = {});

struct Agreement {
  long n = 0;
  double observed = 0.0;
  double kappa = 0.0;
};

/// Cohen's kappa for a square confusion matrix (rows: rater A, cols: rater B).
Agreement cohen_kappa(const std::vector<std::vector<long>>& confusion);

/// Human labels as JSONL {problem_id, step, label: a|b|c|d}; compares them
/// with the census rows they share and returns the 4x4 confusion matrix.
std::vector<std::vector<long>> census_confusion(const CensusReport& census, const std::filesystem::path& human_labels);

}  // namespace recheck
