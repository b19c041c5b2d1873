#pragma once

// Benchmark runner, answer grading and report emission.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "recheck/controller.hpp"
#include "recheck/gateway.hpp"

namespace recheck {

struct Problem {
  std::string problem_id;
  std::string question;
  std::string reference_answer;
};

/// JSONL {problem_id, question, reference_answer}. Throws MalformedRecord.
std::vector<Problem> read_dataset(const std::filesystem::path& path);

// --- answers ------------------------------------------------------------------------

/// Last \boxed{...} after the think block, else the last one anywhere, else
/// the final non-empty line. Surrounding whitespace and "$" are stripped.
/// Throws NoAnswer on an empty completion.
std::string extract_answer(std::string_view completion, const ThinkDelimiters& delimiters = {});

/// Normal form for exact-match grading: LaTeX wrappers removed, fractions as
/// a/b, radicals as sqrt(x), numbers reduced to lowest terms.
std::string canonicalize_answer(std::string_view answer);
bool answers_match(std::string_view answer, std::string_view reference);

// --- runs ---------------------------------------------------------------------------

inline constexpr std::string_view kRecordSchema = "recheck-records/1";

struct RunRecord {
  std::string dataset;
  std::string problem_id;
  int sample = 0;
  Mode mode = Mode::base;
  std::optional<double> tau;  // eds only
  std::uint64_t seed = 0;
  std::string final_answer;
  bool correct = false;
  std::int64_t trace_tokens = 0;
  TokenCountMode token_mode = TokenCountMode::backend;
  int detections = 0;
  int suppressions = 0;
  std::int64_t completion_chars = 0;
  std::int64_t injected_chars = 0;
  double wall_time_ms = 0.0;
  std::optional<std::string> error;
};

nlohmann::ordered_json record_to_json(const RunRecord& r);
RunRecord record_from_json(const nlohmann::json& j);
void write_records(const std::filesystem::path& path, std::span<const RunRecord> records);
std::vector<RunRecord> read_records(const std::filesystem::path& path);

struct BenchmarkConfig {
  std::string dataset_name = "dataset";
  std::vector<Mode> modes{Mode::base, Mode::full_suppress, Mode::eds};
  std::vector<double> taus{0.8};  // eds runs once per value
  ControllerConfig controller;
  /// Replay: `fixture` names a directory with one <problem_id>.json per problem.
  BackendConfig backend;
  int samples = 1;
  std::uint64_t seed = 0;
  int workers = 0;  // 0: OpenMP default
};

using BackendFactory = std::function<std::unique_ptr<Backend>(const Problem& problem, int sample)>;

/// Deterministic per (problem, sample); shared by every mode so length deltas are paired.
std::uint64_t sample_seed(std::uint64_t base_seed, std::string_view problem_id, int sample);

/// Problem x sample x mode (x tau for eds). Failures are recorded on the
/// record and the run continues. Records come back sorted by
/// (problem_id, sample, mode, tau).
std::vector<RunRecord> run_benchmark(std::span<const Problem> problems, const BenchmarkConfig& config,
                                     const ExperiencePool* pool, const BackendFactory& factory = {});

// --- reports -----------------------------------------------------------------------------

double round_to(double value, int decimals);
/// (value - base) / base * 100, rounded to one decimal.
double percent_change(double base, double value);

struct SummaryRow {
  std::string dataset;
  Mode mode = Mode::base;
  std::optional<double> tau;
  int records = 0;
  int errors = 0;
  double accuracy = 0.0;  // Pass@1 in percent over successful records
  double avg_length = 0.0;
  double avg_detections = 0.0;
  double avg_suppressions = 0.0;
  std::optional<double> acc_delta_points;  // vs the dataset's base row
  std::optional<double> len_delta_pct;
};

struct BenchmarkReport {
  std::vector<SummaryRow> rows;  // by dataset, then base, full_suppress, eds by tau
  std::string token_mode;        // counting mode of the lengths, or "mixed"
};

BenchmarkReport summarize(std::span<const RunRecord> records);
/// Fills the delta columns of every row from the base row of its dataset.
void compute_deltas(BenchmarkReport& report);

std::string report_csv(const BenchmarkReport& report);
/// Accuracy and length columns for base, full-suppress and eds (the tau
/// closest to 0.8), deltas in parentheses.
std::string report_markdown(const BenchmarkReport& report);
/// Accuracy and length reduction against tau for one dataset's eds rows.
std::string sweep_svg(const BenchmarkReport& report, std::string_view dataset);
/// Average detections per rollout, one bar per mode.
std::string activation_svg(const BenchmarkReport& report, std::string_view dataset);
/// summary.csv, table.md, and per-dataset sweep and activation SVGs.
void write_report(const BenchmarkReport& report, const std::filesystem::path& out_dir);

}  // namespace recheck
