#include "recheck/trace.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include "recheck/errors.hpp"

namespace recheck {

namespace {

bool is_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}
bool is_terminal(char c) { return c == '.' || c == '!' || c == '?'; }
bool is_closer(char c) { return c == ')' || c == ']' || c == '"' || c == '\''; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_alpha(char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z'); }

// A lone period that is part of a decimal number or a single-letter
// abbreviation ("e.g.", "x.") does not end a sentence.
bool guarded_period(std::string_view t, std::size_t from, std::size_t i, std::size_t run_end) {
  if (t[i] != '.' || run_end != i + 1) return false;
  if (i > from && is_digit(t[i - 1]) && i + 1 < t.size() && is_digit(t[i + 1])) return true;
  if (i > from && is_alpha(t[i - 1])) {
    if (i - 1 == from) return true;
    char before = t[i - 2];
    return !is_alpha(before) && !is_digit(before);
  }
  return false;
}

}  // namespace

std::optional<Span> scan_sentence(std::string_view t, std::size_t from, bool at_eof) {
  const std::size_t n = t.size();
  if (from >= n) return std::nullopt;
  bool dollar = false;
  bool display = false;
  int paren_math = 0;
  std::size_t i = from;
  while (i < n) {
    const char c = t[i];
    if (c == '\\' && i + 1 < n) {
      const char d = t[i + 1];
      if (d == '(' || d == '[') {
        ++paren_math;
      } else if ((d == ')' || d == ']') && paren_math > 0) {
        --paren_math;
      }
      i += 2;
      continue;
    }
    if (c == '$') {
      if (i + 1 < n && t[i + 1] == '$') {
        display = !display;
        i += 2;
      } else {
        dollar = !dollar;
        ++i;
      }
      continue;
    }
    const bool in_math = dollar || display || paren_math > 0;
    if (!in_math && is_terminal(c)) {
      std::size_t j = i + 1;
      while (j < n && (is_terminal(t[j]) || is_closer(t[j]))) ++j;
      if (j == n) {
        if (at_eof) return Span{from, j};
        return std::nullopt;
      }
      if (is_space(t[j]) && !guarded_period(t, from, i, j)) return Span{from, j};
      i = j;
      continue;
    }
    if (is_space(c)) {
      std::size_t j = i;
      bool gap = false;
      while (j < n && is_space(t[j])) {
        if (t[j] == '\n' && j + 1 < n && t[j + 1] == '\n') gap = true;
        ++j;
      }
      if (gap) return Span{from, i};
      if (j == n) {
        if (at_eof) return Span{from, i};
        return std::nullopt;
      }
      i = j;
      continue;
    }
    ++i;
  }
  if (at_eof) return Span{from, n};
  return std::nullopt;
}

std::vector<Step> segment_steps(std::string_view raw) {
  std::vector<Span> fragments;
  const std::size_t n = raw.size();
  std::size_t frag_start = 0;
  std::size_t i = 0;
  while (i < n) {
    if (!is_space(raw[i])) {
      ++i;
      continue;
    }
    std::size_t j = i;
    bool gap = false;
    while (j < n && is_space(raw[j])) {
      if (raw[j] == '\n' && j + 1 < n && raw[j + 1] == '\n') gap = true;
      ++j;
    }
    if (gap) {
      fragments.push_back({frag_start, i});
      frag_start = j;
    }
    i = j;
  }
  fragments.push_back({frag_start, n});

  std::vector<Step> steps;
  for (Span f : fragments) {
    while (f.begin < f.end && is_space(raw[f.begin])) ++f.begin;
    while (f.end > f.begin && is_space(raw[f.end - 1])) --f.end;
    if (f.begin == f.end) continue;
    Step step;
    step.index = static_cast<int>(steps.size());
    step.span = f;
    step.text = std::string(raw.substr(f.begin, f.size()));
    steps.push_back(std::move(step));
  }
  for (std::size_t k = 0; k < steps.size(); ++k) {
    const std::size_t next = k + 1 < steps.size() ? steps[k + 1].span.begin : n;
    steps[k].separator = std::string(raw.substr(steps[k].span.end, next - steps[k].span.end));
  }
  return steps;
}

std::vector<Sentence> segment_sentences(const Step& step) {
  std::vector<Sentence> out;
  std::string_view t = step.text;
  std::size_t pos = 0;
  while (pos < t.size()) {
    while (pos < t.size() && is_space(t[pos])) ++pos;
    if (pos == t.size()) break;
    auto span = scan_sentence(t, pos, /*at_eof=*/true);
    Sentence s;
    s.step_index = step.index;
    s.sentence_index = static_cast<int>(out.size());
    s.text = std::string(t.substr(span->begin, span->size()));
    s.span = {step.span.begin + span->begin, step.span.begin + span->end};
    std::size_t next = span->end;
    while (next < t.size() && is_space(t[next])) ++next;
    s.trailing = std::string(t.substr(span->end, next - span->end));
    out.push_back(std::move(s));
    pos = next;
  }
  return out;
}

ReasoningTrace segment_trace(std::string problem_id, std::string raw_text) {
  ReasoningTrace trace;
  trace.problem_id = std::move(problem_id);
  trace.raw_text = std::move(raw_text);
  trace.steps = segment_steps(trace.raw_text);
  for (auto& step : trace.steps) step.sentences = segment_sentences(step);
  const std::size_t lead = trace.steps.empty() ? trace.raw_text.size() : trace.steps.front().span.begin;
  trace.leading = trace.raw_text.substr(0, lead);
  trace.token_count = estimate_tokens(trace.raw_text);
  trace.token_mode = TokenCountMode::whitespace_estimate;
  return trace;
}

std::string reassemble(const ReasoningTrace& trace) {
  std::string out = trace.leading;
  for (const auto& step : trace.steps) {
    out += step.text;
    out += step.separator;
  }
  return out;
}

std::string reassemble(const Step& step) {
  std::string out;
  for (const auto& s : step.sentences) {
    out += s.text;
    out += s.trailing;
  }
  return out;
}

const Sentence& ReasoningTrace::sentence(Anchor a) const {
  if (a.step < 0 || a.step >= static_cast<int>(steps.size())) {
    throw InvalidAnchor("step " + std::to_string(a.step) + " out of range");
  }
  const auto& sentences = steps[a.step].sentences;
  if (a.sentence < 0 || a.sentence >= static_cast<int>(sentences.size())) {
    throw InvalidAnchor("sentence " + std::to_string(a.sentence) + " out of range in step " +
                        std::to_string(a.step));
  }
  return sentences[a.sentence];
}

std::size_t ReasoningTrace::sentence_count() const noexcept {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.sentences.size();
  return n;
}

ContextWindow window_before(std::string_view raw, std::span<const Span> step_spans, Anchor anchor,
                            std::size_t anchor_begin, const WindowSpec& spec) {
  if (anchor.step < 0 || static_cast<std::size_t>(anchor.step) >= step_spans.size()) {
    throw InvalidAnchor("anchor step outside known steps");
  }
  const std::size_t end = anchor_begin;
  std::size_t start = 0;
  if (spec.unit == WindowUnit::steps) {
    const int first = std::max(0, anchor.step - static_cast<int>(spec.size));
    start = step_spans[first].begin;
    if (spec.hard_cap_chars > 0 && end - start > spec.hard_cap_chars) {
      start = end - spec.hard_cap_chars;
      // Never start in the middle of a word.
      if (start > 0 && !is_space(raw[start - 1])) {
        while (start < end && !is_space(raw[start])) ++start;
      }
      while (start < end && is_space(raw[start])) ++start;
    }
  } else {
    start = end > spec.size ? end - spec.size : 0;
    // Extend the cut left to the start of the step it falls in; a cut in a gap
    // moves right to the next step.
    for (int k = anchor.step; k >= 0; --k) {
      const Span s = step_spans[k];
      if (start >= s.begin) {
        if (start < s.end || k == anchor.step) {
          start = std::min(s.begin, end);
        } else {
          start = step_spans[k + 1].begin;
        }
        break;
      }
      if (k == 0) start = s.begin;
    }
  }
  start = std::min(start, end);
  std::size_t stop = end;
  while (stop > start && is_space(raw[stop - 1])) --stop;
  ContextWindow w;
  w.text = std::string(raw.substr(start, stop - start));
  w.anchor = anchor;
  w.spec = spec;
  w.span = {start, stop};
  return w;
}

ContextWindow extract_context(const ReasoningTrace& trace, Anchor anchor, const WindowSpec& spec) {
  const Sentence& s = trace.sentence(anchor);
  std::vector<Span> spans;
  spans.reserve(anchor.step + 1);
  for (int k = 0; k <= anchor.step; ++k) spans.push_back(trace.steps[k].span);
  return window_before(trace.raw_text, spans, anchor, s.span.begin, spec);
}

std::vector<SegmentEvent> StreamSegmenter::feed(std::string_view chunk) {
  text_.append(chunk);
  return drain(false);
}

std::vector<SegmentEvent> StreamSegmenter::finish() {
  finished_ = true;
  return drain(true);
}

void StreamSegmenter::truncate(std::size_t pos) {
  auto it = std::find_if(emitted_.rbegin(), emitted_.rend(), [&](const SegmentEvent& e) { return e.span.end == pos; });
  if (it == emitted_.rend()) throw Error("segmenter can only be truncated at an emitted sentence end");
  const Anchor a = it->anchor;
  emitted_.erase(it.base(), emitted_.end());
  steps_.resize(static_cast<std::size_t>(a.step) + 1);
  steps_.back().end = pos;
  next_sentence_ = a.sentence + 1;
  text_.resize(pos);
  cursor_ = pos;
  finished_ = false;
}

std::vector<SegmentEvent> StreamSegmenter::drain(bool at_eof) {
  std::vector<SegmentEvent> events;
  const std::size_t n = text_.size();
  while (true) {
    std::size_t p = cursor_;
    bool gap = false;
    while (p < n && is_space(text_[p])) {
      if (text_[p] == '\n' && p + 1 < n && text_[p + 1] == '\n') gap = true;
      ++p;
    }
    if (p >= n) break;
    auto span = scan_sentence(text_, p, at_eof);
    if (!span) break;
    if (steps_.empty() || gap) {
      if (!steps_.empty()) {
        events.push_back({SegmentEvent::Kind::step_boundary, Span{cursor_, p}, {}});
      }
      steps_.push_back({p, p});
      next_sentence_ = 0;
    }
    Anchor a{current_step(), next_sentence_++};
    steps_.back().end = span->end;
    events.push_back({SegmentEvent::Kind::sentence, *span, a});
    emitted_.push_back(events.back());
    cursor_ = span->end;
  }
  return events;
}

std::int64_t estimate_tokens(std::string_view text) {
  std::int64_t words = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++words;
    }
  }
  return static_cast<std::int64_t>(std::llround(static_cast<double>(words) * 1.3));
}

const char* to_string(TokenCountMode mode) {
  return mode == TokenCountMode::backend ? "backend" : "whitespace_x1.3";
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  return s;
}

std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : trim(s)) {
    if (is_space(c)) {
      pending_space = true;
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::string think_content(std::string_view completion, const ThinkDelimiters& delims) {
  const auto open = completion.find(delims.open);
  if (open != std::string_view::npos) {
    const auto body = open + delims.open.size();
    const auto close = completion.find(delims.close, body);
    return std::string(completion.substr(body, close == std::string_view::npos ? std::string_view::npos
                                                                              : close - body));
  }
  // Chat templates that put the open marker in the prompt leave only the close.
  const auto close = completion.find(delims.close);
  if (close != std::string_view::npos) return std::string(completion.substr(0, close));
  return std::string(completion);
}

std::vector<Rollout> read_rollouts(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open rollouts file " + path.string());
  std::vector<Rollout> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw MalformedRecord(lineno, e.what());
    }
    if (!j.is_object() || !j.contains("problem_id") || !j.contains("raw_text") ||
        !j["raw_text"].is_string()) {
      throw MalformedRecord(lineno, "rollout needs problem_id and raw_text");
    }
    Rollout r;
    r.problem_id = j["problem_id"].is_string() ? j["problem_id"].get<std::string>()
                                               : j["problem_id"].dump();
    r.raw_text = j["raw_text"].get<std::string>();
    r.model = j.value("model", "");
    if (j.contains("meta")) r.meta = j["meta"];
    out.push_back(std::move(r));
  }
  return out;
}

void write_rollouts(const std::filesystem::path& path, std::span<const Rollout> rollouts) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write rollouts file " + path.string());
  for (const auto& r : rollouts) {
    nlohmann::json j{{"problem_id", r.problem_id}, {"raw_text", r.raw_text}, {"model", r.model},
                     {"meta", r.meta}};
    out << j.dump() << '\n';
  }
}

}  // namespace recheck
