#pragma once

// Per-rollout suppression state machine: detection, retrieval, vote, cooldown.

#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recheck/detector.hpp"
#include "recheck/pool.hpp"
#include "recheck/trace.hpp"

namespace recheck {

enum class Mode { base, full_suppress, eds };

const char* to_string(Mode m);
Mode parse_mode(std::string_view s);  // "base" | "full" | "full_suppress" | "eds"

inline constexpr std::string_view kDefaultSignal =
    "This result does not require further checking, let me proceed to the next step.";

struct ControllerConfig {
  Mode mode = Mode::eds;
  double tau = 0.8;
  int k = 30;
  int min_evidence = 5;
  bool strict_threshold = false;  // p > tau instead of p >= tau
  int cooldown_steps = 3;
  std::string signal_text = std::string(kDefaultSignal);
  WindowSpec window;
  DetectorConfig detector;

  void validate() const;  // throws std::invalid_argument
};

enum class Action { none, inject };

struct SuppressionDecision {
  Anchor anchor;
  bool detected = false;
  double detector_score = 0.0;
  std::optional<NecessityEstimate> estimate;
  Action action = Action::none;
  std::optional<std::string> signal_text;
  bool cooldown_flag = false;  // detection skipped because of cooldown
  std::optional<std::string> evidence_error;
};

struct ControllerState {
  int cooldown_remaining = 0;
  std::vector<SuppressionDecision> events;
  Anchor current_anchor;
  int cooldown_resets = 0;

  int detections() const;
  int injections() const;
  friend bool operator==(const ControllerState&, const ControllerState&);
};

/// What the controller sees of the newest complete sentence.
struct SentenceView {
  Anchor anchor;
  std::string_view text;
  std::string_view trace_so_far;        // raw text, at least up to the sentence
  std::span<const Span> step_spans;     // steps up to and including the anchor's
  std::size_t begin = 0;                // sentence start offset in trace_so_far
};

/// One step of the state machine. Detector errors follow the detector's own
/// fallback policy; errors while gathering eds evidence degrade to no action.
SuppressionDecision on_sentence(ControllerState& state, const SentenceView& sentence, RecheckDetector& detector,
                                const ExperiencePool* pool, const ControllerConfig& config);

void on_step_boundary(ControllerState& state);

const std::string& signal_for(const ControllerConfig& config);

/// Warning text when the signal neither asserts closure nor redirects forward.
std::optional<std::string> lint_signal(std::string_view signal);

/// Convenience wrapper owning state, detector and a pool reference.
class SuppressionController {
 public:
  SuppressionController(ControllerConfig config, std::unique_ptr<RecheckDetector> detector,
                        const ExperiencePool* pool);

  const SuppressionDecision& on_sentence(const SentenceView& sentence);
  void on_step_boundary();

  const ControllerState& state() const noexcept { return state_; }
  const ControllerConfig& config() const noexcept { return config_; }

 private:
  ControllerConfig config_;
  std::unique_ptr<RecheckDetector> detector_;
  const ExperiencePool* pool_;
  ControllerState state_;
};

nlohmann::ordered_json decision_to_json(const SuppressionDecision& d);
void write_decision_log(std::ostream& out, std::span<const SuppressionDecision> decisions);

}  // namespace recheck
