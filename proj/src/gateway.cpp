#include "recheck/gateway.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <stdexcept>

#include "recheck/errors.hpp"

namespace recheck {

const char* to_string(ContinuationStyle s) {
  return s == ContinuationStyle::raw_completion ? "raw_completion" : "assistant_prefill";
}

ContinuationStyle parse_continuation_style(std::string_view s) {
  if (s == "raw_completion" || s == "raw") return ContinuationStyle::raw_completion;
  if (s == "assistant_prefill" || s == "prefill") return ContinuationStyle::assistant_prefill;
  throw std::invalid_argument("unknown continuation style '" + std::string(s) + "'");
}

void BackendConfig::validate() const {
  if (kind == BackendKind::live && (!base_url || base_url->empty())) {
    throw std::invalid_argument("live backend needs base_url");
  }
  if (kind == BackendKind::replay && !fixture) throw std::invalid_argument("replay backend needs a fixture path");
  if (sampling.max_tokens < 1) throw std::invalid_argument("max_tokens must be positive");
  if (max_requests < 1) throw std::invalid_argument("max_requests must be positive");
  if (think_delimiters && (think_delimiters->open.empty() || think_delimiters->close.empty())) {
    throw std::invalid_argument("think delimiters must be non-empty");
  }
}

void BackendConfig::apply_env() {
  if (!base_url) {
    if (const char* v = std::getenv("RECHECK_BASE_URL"); v && *v) base_url = v;
  }
  if (!api_key) {
    if (const char* v = std::getenv("RECHECK_API_KEY"); v && *v) api_key = v;
  }
}

// --- replay fixture -------------------------------------------------------------

std::string ReplayFixture::default_text() const {
  std::string out;
  for (const auto& t : default_stream) out += t;
  return out;
}

namespace {

std::string concat(const std::vector<std::string>& tokens) {
  std::string out;
  for (const auto& t : tokens) out += t;
  return out;
}

std::vector<std::size_t> token_starts(const std::vector<std::string>& tokens) {
  std::vector<std::size_t> starts;
  std::size_t pos = 0;
  for (const auto& t : tokens) {
    starts.push_back(pos);
    pos += t.size();
  }
  starts.push_back(pos);
  return starts;
}

bool is_boundary(const std::vector<std::size_t>& starts, std::size_t offset) {
  return std::binary_search(starts.begin(), starts.end(), offset);
}

// Tokens covering text from char `from` on; the first may be a partial token.
void append_from(const std::vector<std::string>& tokens, const std::vector<std::size_t>& starts, std::size_t from,
                 std::vector<std::string>& out) {
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const std::size_t b = starts[i], e = starts[i + 1];
    if (e <= from) continue;
    if (b >= from) {
      out.push_back(tokens[i]);
    } else {
      out.push_back(tokens[i].substr(from - b));
    }
  }
}

}  // namespace

void ReplayFixture::validate() const {
  const std::string text = default_text();
  const auto starts = token_starts(default_stream);
  std::size_t prev_end = 0;
  for (const auto& [offset, br] : branches) {
    const std::string ns = concat(br.not_suppressed);
    if (offset > text.size() || !is_boundary(starts, offset)) {
      throw std::invalid_argument("fixture " + id + ": branch offset " + std::to_string(offset) +
                                  " is not a token boundary of the default stream");
    }
    if (offset < prev_end) throw std::invalid_argument("fixture " + id + ": overlapping branches");
    if (text.compare(offset, ns.size(), ns) != 0) {
      throw std::invalid_argument("fixture " + id + ": not_suppressed at " + std::to_string(offset) +
                                  " does not match the default stream");
    }
    if (!is_boundary(starts, offset + ns.size())) {
      throw std::invalid_argument("fixture " + id + ": branch at " + std::to_string(offset) +
                                  " rejoins inside a token");
    }
    prev_end = offset + ns.size();
  }
}

ReplayFixture replay_fixture_from_json(const nlohmann::json& j, std::string id) {
  auto tokens = [](const nlohmann::json& arr, const char* what) {
    if (!arr.is_array()) throw std::invalid_argument(std::string(what) + " must be an array of strings");
    std::vector<std::string> out;
    for (const auto& t : arr) {
      if (!t.is_string()) throw std::invalid_argument(std::string(what) + " must be an array of strings");
      out.push_back(t.get<std::string>());
    }
    return out;
  };
  ReplayFixture f;
  f.id = j.value("id", id);
  f.prompt = j.value("prompt", "");
  if (!j.contains("default_stream")) throw std::invalid_argument("fixture needs default_stream");
  f.default_stream = tokens(j["default_stream"], "default_stream");
  if (j.contains("branches")) {
    for (const auto& [key, val] : j["branches"].items()) {
      std::size_t offset = 0;
      try {
        std::size_t used = 0;
        offset = std::stoull(key, &used);
        if (used != key.size()) throw std::invalid_argument(key);
      } catch (const std::exception&) {
        throw std::invalid_argument("branch key '" + key + "' is not a byte offset");
      }
      ReplayBranch b;
      b.suppressed = tokens(val.at("suppressed"), "suppressed");
      b.not_suppressed = tokens(val.at("not_suppressed"), "not_suppressed");
      f.branches.emplace(offset, std::move(b));
    }
  }
  for (const auto& [key, val] : j.items()) {
    if (key != "id" && key != "prompt" && key != "default_stream" && key != "branches") f.extra[key] = val;
  }
  f.validate();
  return f;
}

ReplayFixture load_replay_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open fixture " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error("fixture " + path.string() + ": " + e.what());
  }
  return replay_fixture_from_json(j, path.stem().string());
}

// --- replay backend ---------------------------------------------------------------

ReplayBackend::ReplayBackend(ReplayFixture fixture, std::vector<std::string> injections, std::size_t read_batch)
    : fixture_(std::move(fixture)), injections_(std::move(injections)), read_batch_(std::max<std::size_t>(1, read_batch)) {
  fixture_.validate();
}

namespace {

struct ReplayCursor {
  bool in_branch = false;
  std::size_t offset = 0;  // default char offset, or the branch key
  std::size_t within = 0;  // chars of the suppressed branch already consumed
};

struct ReplayMatcher {
  const std::string& text;
  const std::map<std::size_t, ReplayBranch>& branches;
  const std::map<std::size_t, std::string>& suppressed_text;
  const std::map<std::size_t, std::size_t>& rejoin;
  const std::vector<std::string>& injections;
  std::string_view prefix;

  std::optional<ReplayCursor> match(std::size_t d, std::size_t p) const {
    while (true) {
      if (p == prefix.size()) return ReplayCursor{false, d, 0};
      if (auto it = suppressed_text.find(d); it != suppressed_text.end()) {
        for (const auto& inj : injections) {
          if (prefix.substr(p, inj.size()) != inj) continue;
          const std::size_t q = p + inj.size();
          const std::string& s = it->second;
          const std::size_t rem = prefix.size() - q;
          if (rem <= s.size()) {
            if (s.compare(0, rem, prefix.substr(q)) == 0) return ReplayCursor{true, d, rem};
          } else if (prefix.compare(q, s.size(), s) == 0) {
            if (auto r = match(rejoin.at(d), q + s.size())) return r;
          }
        }
      }
      if (d < text.size() && prefix[p] == text[d]) {
        ++d;
        ++p;
      } else {
        return std::nullopt;
      }
    }
  }
};

}  // namespace

StreamResult ReplayBackend::stream(const GenerationRequest& request, const TokenSink& sink) {
  ++requests_;
  if (!fixture_.prompt.empty() && !request.prompt.empty() && request.prompt != fixture_.prompt) {
    throw UnknownPrefix("fixture " + fixture_.id + ": prompt does not match");
  }
  const std::string text = fixture_.default_text();
  const auto starts = token_starts(fixture_.default_stream);
  std::map<std::size_t, std::string> suppressed;
  std::map<std::size_t, std::size_t> rejoin;
  for (const auto& [o, b] : fixture_.branches) {
    suppressed[o] = concat(b.suppressed);
    rejoin[o] = o + concat(b.not_suppressed).size();
  }
  ReplayMatcher m{text, fixture_.branches, suppressed, rejoin, injections_, request.prefix};
  const auto cursor = m.match(0, 0);
  if (!cursor) {
    throw UnknownPrefix("fixture " + fixture_.id + ": continuation prefix matches no branch path");
  }

  std::vector<std::string> tokens;
  if (cursor->in_branch) {
    const auto& br = fixture_.branches.at(cursor->offset);
    append_from(br.suppressed, token_starts(br.suppressed), cursor->within, tokens);
    append_from(fixture_.default_stream, starts, rejoin.at(cursor->offset), tokens);
  } else {
    append_from(fixture_.default_stream, starts, cursor->offset, tokens);
  }

  StreamResult result;
  std::size_t limit = tokens.size();
  if (request.max_tokens > 0 && static_cast<std::size_t>(request.max_tokens) < limit) {
    limit = static_cast<std::size_t>(request.max_tokens);
    result.finish = StreamResult::Finish::length;
  }
  for (std::size_t i = 0; i < limit; i += read_batch_) {
    const std::size_t n = std::min(read_batch_, limit - i);
    if (!sink(std::span<const std::string>(tokens.data() + i, n))) {
      result.finish = StreamResult::Finish::cancelled;
      result.completion_tokens = static_cast<std::int64_t>(i + n);
      return result;
    }
  }
  result.completion_tokens = static_cast<std::int64_t>(limit);
  return result;
}

std::unique_ptr<Backend> make_backend(const BackendConfig& config, const std::vector<std::string>& injections) {
  config.validate();
  if (config.kind == BackendKind::live) return std::make_unique<LiveBackend>(config);
  return std::make_unique<ReplayBackend>(load_replay_fixture(*config.fixture), injections);
}

// --- session -----------------------------------------------------------------------

std::string injection_text(std::string_view signal) { return " " + std::string(signal); }

namespace {

// Length of the longest proper prefix of `marker` that ends `text`.
std::size_t partial_marker_suffix(std::string_view text, std::string_view marker) {
  for (std::size_t len = std::min(text.size(), marker.size() - 1); len > 0; --len) {
    if (text.substr(text.size() - len) == marker.substr(0, len)) return len;
  }
  return 0;
}

class Session {
 public:
  Session(const BackendConfig& bc, SuppressionController& ctl, std::string problem_id)
      : bc_(bc), ctl_(ctl), problem_id_(std::move(problem_id)) {
    scope_ = bc_.think_delimiters ? Scope::awaiting_open : Scope::inside;
  }

  SessionResult run(const std::string& prompt, Backend& backend, const SessionOptions& opt) {
    while (true) {
      if (usage_.requests >= bc_.max_requests) {
        throw BudgetExceeded("session needed more than " + std::to_string(bc_.max_requests) + " backend requests");
      }
      const std::int64_t kept = usage_.tokens_streamed - usage_.tokens_discarded;
      const std::int64_t remaining = bc_.sampling.max_tokens - kept;
      if (remaining <= 0) {
        truncated_ = true;
        break;
      }
      GenerationRequest req;
      req.prompt = prompt;
      req.messages = opt.messages;
      req.prefix = completion_;
      req.max_tokens = static_cast<int>(remaining);
      req.seed = opt.seed;
      ++usage_.requests;
      pending_.reset();
      const auto res = backend.stream(req, [this](std::span<const std::string> batch) { return on_batch(batch); });
      if (res.completion_tokens) {
        usage_.backend_completion_tokens = usage_.backend_completion_tokens.value_or(0) + *res.completion_tokens;
      }
      if (pending_) {
        apply_injection();
        continue;
      }
      if (res.finish == StreamResult::Finish::length) {
        truncated_ = true;
        break;
      }
      // Natural end: the trailing text is a complete sentence.
      close_scope_at_eof();
      if (pending_) {
        apply_injection();
        continue;
      }
      break;
    }
    return finish();
  }

 private:
  enum class Scope { awaiting_open, inside, after };

  bool on_batch(std::span<const std::string> batch) {
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::size_t token_start = completion_.size();
      completion_ += batch[i];
      ++usage_.tokens_streamed;
      usage_.chars_streamed += static_cast<std::int64_t>(batch[i].size());
      advance_scope();
      if (pending_) {
        // Everything past the boundary was streamed but is thrown away.
        for (std::size_t j = i + 1; j < batch.size(); ++j) {
          completion_ += batch[j];
          ++usage_.tokens_streamed;
          usage_.chars_streamed += static_cast<std::int64_t>(batch[j].size());
          ++usage_.tokens_discarded;
        }
        if (token_start >= pending_->boundary) ++usage_.tokens_discarded;
        return false;
      }
    }
    return true;
  }

  void advance_scope() {
    if (scope_ == Scope::awaiting_open) {
      const auto& open = bc_.think_delimiters->open;
      std::size_t k = 0;
      while (k < completion_.size() && std::isspace(static_cast<unsigned char>(completion_[k]))) ++k;
      std::string_view rest = std::string_view(completion_).substr(k);
      if (rest.size() < open.size() && std::string_view(open).substr(0, rest.size()) == rest) return;
      scope_begin_ = rest.substr(0, open.size()) == open ? k + open.size() : 0;
      fed_ = scope_begin_;
      scope_ = Scope::inside;
    }
    if (scope_ != Scope::inside) return;
    if (bc_.think_delimiters) {
      const auto& close = bc_.think_delimiters->close;
      const std::size_t from = fed_ >= close.size() ? fed_ - (close.size() - 1) : scope_begin_;
      const auto c = completion_.find(close, std::max(from, scope_begin_));
      if (c != std::string::npos) {
        feed_to(c);
        scope_end_ = c;
        scope_ = Scope::after;
        handle(seg_.finish());
        return;
      }
      feed_to(completion_.size() - partial_marker_suffix(completion_, close));
      return;
    }
    feed_to(completion_.size());
  }

  void close_scope_at_eof() {
    if (scope_ == Scope::awaiting_open) {
      scope_begin_ = 0;
      fed_ = 0;
      scope_ = Scope::inside;
    }
    if (scope_ != Scope::inside) return;
    feed_to(completion_.size());
    scope_end_ = completion_.size();
    scope_ = Scope::after;
    handle(seg_.finish());
  }

  void feed_to(std::size_t end) {
    if (end <= fed_) return;
    auto events = seg_.feed(std::string_view(completion_).substr(fed_, end - fed_));
    fed_ = end;
    handle(events);
  }

  void handle(const std::vector<SegmentEvent>& events) {
    for (const auto& e : events) {
      if (pending_) return;
      if (e.kind == SegmentEvent::Kind::step_boundary) {
        ctl_.on_step_boundary();
        continue;
      }
      const Span abs{e.span.begin + scope_begin_, e.span.end + scope_begin_};
      const bool injected = std::any_of(injections_.begin(), injections_.end(), [&](const Injection& inj) {
        return abs.overlaps(Span{inj.offset, inj.offset + inj.text.size()});
      });
      if (injected) continue;
      const std::string_view text = std::string_view(seg_.text()).substr(e.span.begin, e.span.size());
      const SentenceView view{e.anchor, text, seg_.text(), seg_.step_spans(), e.span.begin};
      const auto& d = ctl_.on_sentence(view);
      if (d.detected) ++detections_;
      if (d.action == Action::inject) pending_ = Pending{abs.end, e.span.end, d.anchor, *d.signal_text};
    }
  }

  void apply_injection() {
    const auto p = *pending_;
    pending_.reset();
    usage_.chars_discarded += static_cast<std::int64_t>(completion_.size() - p.boundary);
    completion_.resize(p.boundary);
    seg_.truncate(p.seg_boundary);
    fed_ = p.boundary;
    scope_ = Scope::inside;
    scope_end_.reset();
    const std::string inj = injection_text(p.signal);
    injections_.push_back({completion_.size(), inj, p.anchor});
    completion_ += inj;
    usage_.chars_injected += static_cast<std::int64_t>(inj.size());
    usage_.tokens_injected += estimate_tokens(inj);
    ++suppressions_;
    // The injected text joins the segmenter like generated text but is never
    // surfaced to the controller (see handle()).
    feed_to(completion_.size());
  }

  SessionResult finish() {
    SessionResult r;
    r.completion = completion_;
    const std::size_t begin = std::min(scope_begin_, completion_.size());
    const std::size_t end = scope_end_ ? *scope_end_ : completion_.size();
    r.trace = segment_trace(problem_id_, completion_.substr(begin, end - begin));
    r.trace.token_count = usage_.tokens_streamed - usage_.tokens_discarded + usage_.tokens_injected;
    r.trace.token_mode = TokenCountMode::backend;
    r.decisions = ctl_.state().events;
    r.injections = injections_;
    r.usage = usage_;
    r.truncated = truncated_;
    r.detections = detections_;
    r.suppressions = suppressions_;
    return r;
  }

  struct Pending {
    std::size_t boundary;      // absolute, in completion_
    std::size_t seg_boundary;  // in segmenter text
    Anchor anchor;
    std::string signal;
  };

  const BackendConfig& bc_;
  SuppressionController& ctl_;
  std::string problem_id_;
  std::string completion_;
  StreamSegmenter seg_;
  Scope scope_;
  std::size_t scope_begin_ = 0;
  std::optional<std::size_t> scope_end_;
  std::size_t fed_ = 0;
  std::optional<Pending> pending_;
  std::vector<Injection> injections_;
  SessionUsage usage_;
  bool truncated_ = false;
  int detections_ = 0;
  int suppressions_ = 0;
};

}  // namespace

SessionResult run_session(const std::string& prompt, Backend& backend, const BackendConfig& backend_config,
                          SuppressionController& controller, const SessionOptions& options) {
  Session s(backend_config, controller, options.problem_id);
  return s.run(prompt, backend, options);
}

}  // namespace recheck
