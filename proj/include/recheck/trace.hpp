#pragma once

// Reasoning traces: step/sentence segmentation, stable addressing, context
// windows and token accounting. Everything here is a pure value type.

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

namespace recheck {

/// Half-open byte range [begin, end) into a trace's raw text.
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const noexcept { return end - begin; }
  bool contains(std::size_t pos) const noexcept { return pos >= begin && pos < end; }
  bool overlaps(Span other) const noexcept { return begin < other.end && other.begin < end; }
  friend bool operator==(Span, Span) = default;
};

/// (step_index, sentence_index) address of a sentence.
struct Anchor {
  int step = 0;
  int sentence = 0;
  friend auto operator<=>(Anchor, Anchor) = default;
};

struct Sentence {
  int step_index = 0;
  int sentence_index = 0;
  std::string text;      // trimmed, never empty
  Span span;             // absolute offsets into the raw text
  std::string trailing;  // whitespace up to the next sentence of the same step
};

struct Step {
  int index = 0;
  std::string text;  // trimmed step content
  std::vector<Sentence> sentences;
  Span span;
  std::string separator;  // raw text from span.end up to the next step (or EOF)
};

enum class TokenCountMode { backend, whitespace_estimate };

struct ReasoningTrace {
  std::string problem_id;
  std::string raw_text;
  std::string leading;  // raw text before the first step
  std::vector<Step> steps;
  std::int64_t token_count = 0;
  TokenCountMode token_mode = TokenCountMode::whitespace_estimate;

  const Sentence& sentence(Anchor a) const;  // throws InvalidAnchor
  std::size_t sentence_count() const noexcept;
};

enum class WindowUnit { steps, characters };

struct WindowSpec {
  WindowUnit unit = WindowUnit::steps;
  std::size_t size = 4;
  // Upper bound on the window length in steps mode; 0 disables it.
  std::size_t hard_cap_chars = 2000;
};

struct ContextWindow {
  std::string text;
  Anchor anchor;
  WindowSpec spec;
  Span span;
};

// --- segmentation ---------------------------------------------------------

/// Splits on blank-line gaps: a gap is a maximal whitespace run containing
/// "\n\n". Step text is the trimmed content between gaps; whitespace-only
/// fragments are dropped. Sentences are left empty.
std::vector<Step> segment_steps(std::string_view raw_text);

/// Sentence split inside one step. Spans are absolute (offset by step.span).
std::vector<Sentence> segment_sentences(const Step& step);

/// Full segmentation: steps, sentences, separators and token estimate.
ReasoningTrace segment_trace(std::string problem_id, std::string raw_text);

/// Rebuilds raw_text from leading + steps + separators.
std::string reassemble(const ReasoningTrace& trace);

/// Rebuilds a step's text from its sentences and their trailing whitespace.
std::string reassemble(const Step& step);

/// Offset of the end of the next sentence in `text` starting at `from`, where
/// `from` must be a sentence start. Returns nullopt when more input is needed
/// to decide; with `at_eof` the remainder is always a sentence. The returned
/// span excludes surrounding whitespace.
std::optional<Span> scan_sentence(std::string_view text, std::size_t from, bool at_eof);

// --- context windows ------------------------------------------------------

/// Window over `raw` ending right before `anchor_begin`, given the spans of
/// all steps up to and including the anchor's step.
ContextWindow window_before(std::string_view raw, std::span<const Span> step_spans, Anchor anchor,
                            std::size_t anchor_begin, const WindowSpec& spec);

ContextWindow extract_context(const ReasoningTrace& trace, Anchor anchor, const WindowSpec& spec);

// --- incremental segmentation ---------------------------------------------

struct SegmentEvent {
  enum class Kind { sentence, step_boundary };
  Kind kind = Kind::sentence;
  Span span;      // sentence span, or the gap for a step boundary
  Anchor anchor;  // for sentences
};

/// Streaming counterpart of segment_trace. Feeding the same text in any chunking
/// yields the same sentence spans and anchors as the batch functions.
class StreamSegmenter {
 public:
  std::vector<SegmentEvent> feed(std::string_view chunk);
  std::vector<SegmentEvent> finish();

  /// Drops everything after `pos`, which must be the end of an emitted
  /// sentence; later sentences and steps are forgotten. Used when generation
  /// is interrupted at a boundary.
  void truncate(std::size_t pos);

  const std::string& text() const noexcept { return text_; }
  std::span<const Span> step_spans() const noexcept { return steps_; }
  int current_step() const noexcept { return static_cast<int>(steps_.size()) - 1; }

 private:
  std::vector<SegmentEvent> drain(bool at_eof);

  std::string text_;
  std::size_t cursor_ = 0;  // start of the not-yet-emitted region
  std::vector<Span> steps_;
  int next_sentence_ = 0;
  std::vector<SegmentEvent> emitted_;  // sentence events, in order
  bool finished_ = false;
};

// --- misc -----------------------------------------------------------------

std::int64_t estimate_tokens(std::string_view text);
const char* to_string(TokenCountMode mode);

std::string normalize_whitespace(std::string_view s);
std::string_view trim(std::string_view s);

struct ThinkDelimiters {
  std::string open = "<think>";
  std::string close = "</think>";
};

/// Content between the think markers when present, else the whole completion.
std::string think_content(std::string_view completion, const ThinkDelimiters& delims);

// --- rollout dumps (JSON lines) -------------------------------------------

struct Rollout {
  std::string problem_id;
  std::string raw_text;
  std::string model;
  nlohmann::json meta = nlohmann::json::object();
};

std::vector<Rollout> read_rollouts(const std::filesystem::path& path);
void write_rollouts(const std::filesystem::path& path, std::span<const Rollout> rollouts);

}  // namespace recheck
