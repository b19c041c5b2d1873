#include "recheck/controller.hpp"

#include <algorithm>
#include <stdexcept>

#include "recheck/errors.hpp"

namespace recheck {

const char* to_string(Mode m) {
  switch (m) {
    case Mode::base: return "base";
    case Mode::full_suppress: return "full_suppress";
    case Mode::eds: return "eds";
  }
  return "?";
}

Mode parse_mode(std::string_view s) {
  if (s == "base") return Mode::base;
  if (s == "full" || s == "full_suppress") return Mode::full_suppress;
  if (s == "eds") return Mode::eds;
  throw std::invalid_argument("unknown mode '" + std::string(s) + "'");
}

void ControllerConfig::validate() const {
  if (mode == Mode::base) return;
  if (signal_text.empty()) throw std::invalid_argument("signal_text must be non-empty");
  if (cooldown_steps < 0) throw std::invalid_argument("cooldown_steps must be non-negative");
  detector.validate();
  if (mode == Mode::eds) {
    if (k < 1) throw std::invalid_argument("k must be at least 1");
    if (min_evidence < 0) throw std::invalid_argument("min_evidence must be non-negative");
    if (!(tau >= 0.0)) throw std::invalid_argument("tau must be non-negative");
  }
}

int ControllerState::detections() const {
  return static_cast<int>(std::count_if(events.begin(), events.end(), [](auto& e) { return e.detected; }));
}

int ControllerState::injections() const {
  return static_cast<int>(
      std::count_if(events.begin(), events.end(), [](auto& e) { return e.action == Action::inject; }));
}

namespace {

bool same_estimate(const std::optional<NecessityEstimate>& a, const std::optional<NecessityEstimate>& b) {
  if (a.has_value() != b.has_value()) return false;
  if (!a) return true;
  return a->p_unnec == b->p_unnec && a->k_used == b->k_used && a->suppress == b->suppress && a->tau == b->tau;
}

}  // namespace

bool operator==(const ControllerState& x, const ControllerState& y) {
  if (x.cooldown_remaining != y.cooldown_remaining || x.cooldown_resets != y.cooldown_resets ||
      x.current_anchor != y.current_anchor || x.events.size() != y.events.size()) {
    return false;
  }
  for (std::size_t i = 0; i < x.events.size(); ++i) {
    const auto& a = x.events[i];
    const auto& b = y.events[i];
    if (a.anchor != b.anchor || a.detected != b.detected || a.action != b.action ||
        a.cooldown_flag != b.cooldown_flag || a.signal_text != b.signal_text || !same_estimate(a.estimate, b.estimate)) {
      return false;
    }
  }
  return true;
}

SuppressionDecision on_sentence(ControllerState& state, const SentenceView& s, RecheckDetector& detector,
                                const ExperiencePool* pool, const ControllerConfig& config) {
  state.current_anchor = s.anchor;
  SuppressionDecision d;
  d.anchor = s.anchor;
  if (config.mode == Mode::base) {
    state.events.push_back(d);
    return d;
  }
  if (state.cooldown_remaining > 0) {
    d.cooldown_flag = true;
    state.events.push_back(d);
    return d;
  }

  ContextWindow ctx;
  if (detector.wants_context()) ctx = window_before(s.trace_so_far, s.step_spans, s.anchor, s.begin, config.window);
  const auto det = detector.detect(s.text, ctx);
  d.detected = det.is_recheck_activation;
  d.detector_score = det.score;

  bool inject = false;
  if (d.detected) {
    if (config.mode == Mode::full_suppress) {
      inject = true;
    } else {
      try {
        if (!pool) throw EmptyPool("no experience pool loaded");
        if (!detector.wants_context()) {
          ctx = window_before(s.trace_so_far, s.step_spans, s.anchor, s.begin, config.window);
        }
        const auto hits = pool->retrieve(ctx.text, config.k);
        d.estimate = estimate_necessity(hits, config.tau, config.min_evidence, config.strict_threshold);
        inject = d.estimate->suppress;
      } catch (const std::exception& e) {
        d.evidence_error = e.what();
        inject = false;
      }
    }
  }
  if (inject) {
    d.action = Action::inject;
    d.signal_text = config.signal_text;
    state.cooldown_remaining = config.cooldown_steps;
    ++state.cooldown_resets;
  }
  state.events.push_back(d);
  return d;
}

void on_step_boundary(ControllerState& state) {
  if (state.cooldown_remaining > 0) --state.cooldown_remaining;
}

const std::string& signal_for(const ControllerConfig& config) { return config.signal_text; }

std::optional<std::string> lint_signal(std::string_view signal) {
  std::string s(signal);
  for (char& c : s) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  auto has_any = [&](std::initializer_list<std::string_view> words) {
    return std::any_of(words.begin(), words.end(), [&](auto w) { return s.find(w) != std::string::npos; });
  };
  const bool closure = has_any({"does not require", "doesn't require", "no need", "not necessary", "unnecessary",
                                "correct", "confirmed", "verified", "is fine", "is right", "settled", "holds",
                                "enough", "no further"});
  const bool forward = has_any({"proceed", "move on", "moving on", "next step", "continue", "go on", "go ahead",
                                "carry on", "keep going"});
  if (closure || forward) return std::nullopt;
  return "signal asserts neither closure nor a forward step; weak signals tend to re-trigger rechecks";
}

SuppressionController::SuppressionController(ControllerConfig config, std::unique_ptr<RecheckDetector> detector,
                                             const ExperiencePool* pool)
    : config_(std::move(config)), detector_(std::move(detector)), pool_(pool) {
  config_.validate();
  if (!detector_) detector_ = make_detector(config_.detector);
}

const SuppressionDecision& SuppressionController::on_sentence(const SentenceView& sentence) {
  recheck::on_sentence(state_, sentence, *detector_, pool_, config_);
  return state_.events.back();
}

void SuppressionController::on_step_boundary() { recheck::on_step_boundary(state_); }

nlohmann::ordered_json decision_to_json(const SuppressionDecision& d) {
  nlohmann::ordered_json j;
  j["anchor"] = {d.anchor.step, d.anchor.sentence};
  j["detected"] = d.detected;
  j["p_unnec"] = d.estimate ? nlohmann::ordered_json(d.estimate->p_unnec) : nlohmann::ordered_json(nullptr);
  j["k_used"] = d.estimate ? d.estimate->k_used : 0;
  j["action"] = d.action == Action::inject ? "inject" : "none";
  j["cooldown_flag"] = d.cooldown_flag;
  return j;
}

void write_decision_log(std::ostream& out, std::span<const SuppressionDecision> decisions) {
  for (const auto& d : decisions) out << decision_to_json(d).dump() << '\n';
}

}  // namespace recheck
