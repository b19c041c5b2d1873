#pragma once

// Recheck-activation detection: does a sentence start re-verifying an
// intermediate result the model already stated?

#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "recheck/trace.hpp"

namespace recheck {

enum class DetectorKind { lexical, remote };
enum class Fallback { fail_open, fail_closed };

struct DetectorConfig {
  DetectorKind kind = DetectorKind::lexical;
  double threshold = 0.5;
  std::optional<std::string> endpoint;  // required iff kind == remote
  int timeout_ms = 2000;
  Fallback fallback = Fallback::fail_open;

  void validate() const;  // throws std::invalid_argument
};

struct DetectionResult {
  bool is_recheck_activation = false;
  double score = 0.0;
  std::string detector_id;
  double latency_ms = 0.0;
};

class RecheckDetector {
 public:
  virtual ~RecheckDetector() = default;
  virtual DetectionResult detect(std::string_view sentence, const ContextWindow& context) = 0;
  /// Whether detect() reads the context; lets callers skip building it.
  virtual bool wants_context() const { return false; }
};

/// Weighted cue matcher. Positive cues are verification verbs ("check",
/// "verify", "recompute", "plug in", ...); guards subtract for conclusion
/// openers, first-time computation and strategy shifts. Pure function of its
/// input.
class LexicalDetector final : public RecheckDetector {
 public:
  explicit LexicalDetector(double threshold = 0.5) : threshold_(threshold) {}

  DetectionResult detect(std::string_view sentence, const ContextWindow& context) override;
  double score(std::string_view sentence) const;
  double threshold() const noexcept { return threshold_; }

 private:
  double threshold_;
};

/// Client for POST /v1/detect. Holds a small pool of keep-alive connections so
/// concurrent sessions can share one instance.
class RemoteDetector final : public RecheckDetector {
 public:
  explicit RemoteDetector(DetectorConfig config);
  ~RemoteDetector() override;

  DetectionResult detect(std::string_view sentence, const ContextWindow& context) override;
  bool wants_context() const override { return true; }

 private:
  struct Connection;
  std::unique_ptr<Connection> acquire();
  void release(std::unique_ptr<Connection> c);
  DetectionResult call(std::string_view sentence, std::string_view context);

  DetectorConfig config_;
  std::string base_;
  std::string path_;
  std::mutex mu_;
  std::vector<std::unique_ptr<Connection>> idle_;
};

std::unique_ptr<RecheckDetector> make_detector(const DetectorConfig& config);

/// One-shot detection with a freshly built detector.
DetectionResult detect(const Sentence& sentence, const ContextWindow& preceding,
                       const DetectorConfig& config);

// --- detector training data ------------------------------------------------

struct LabeledSentence {
  std::string sentence;
  std::string context;
  int label = 0;  // 1 = recheck activation
};

struct TrainingSources {
  std::vector<LabeledSentence> positives;       // confirmed activations
  std::vector<LabeledSentence> hard_negatives;  // extracted, then rejected by the filter
  std::vector<LabeledSentence> easy_pool;       // ordinary non-verification sentences
};

struct TrainingSetCounts {
  std::size_t positives = 0;
  std::size_t hard = 0;
  std::size_t easy = 0;
};

/// 1:3 positive:negative with negatives split evenly between hard and easy;
/// easy negatives backfill missing hard ones (and vice versa). Deterministic
/// for a fixed seed. Throws InsufficientNegatives.
std::vector<LabeledSentence> build_detector_training_set(const TrainingSources& sources,
                                                         std::uint64_t seed,
                                                         TrainingSetCounts* counts = nullptr);

void write_training_set(const std::filesystem::path& path, std::span<const LabeledSentence> rows);

}  // namespace recheck
