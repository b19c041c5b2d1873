#pragma once

// Generation gateway: streams from a backend, feeds complete sentences to the
// controller, and performs interrupt-and-continue injections.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "recheck/controller.hpp"
#include "recheck/trace.hpp"

namespace recheck {

enum class BackendKind { live, replay };
enum class ContinuationStyle { raw_completion, assistant_prefill };

const char* to_string(ContinuationStyle s);
ContinuationStyle parse_continuation_style(std::string_view s);

struct SamplingParams {
  double temperature = 0.6;
  double top_p = 0.95;
  int max_tokens = 32768;
};

struct BackendConfig {
  BackendKind kind = BackendKind::replay;
  std::optional<std::string> base_url;  // live: scheme://host[:port][/prefix]
  std::optional<std::string> api_key;
  std::string model;
  SamplingParams sampling;
  std::optional<ThinkDelimiters> think_delimiters;
  ContinuationStyle continuation_style = ContinuationStyle::raw_completion;
  std::optional<std::filesystem::path> fixture;  // replay
  int timeout_ms = 120000;
  int max_requests = 64;  // initial request plus continuations per session

  void validate() const;  // throws std::invalid_argument
  /// Fills base_url and api_key from RECHECK_BASE_URL / RECHECK_API_KEY when unset.
  void apply_env();
};

struct GenerationRequest {
  std::string prompt;                 // raw prompt, or the user turn for chat
  nlohmann::json messages;            // optional chat history (array); empty means [{user: prompt}]
  std::string prefix;                 // committed completion text to continue from
  int max_tokens = 0;
  std::optional<std::uint64_t> seed;
};

struct StreamResult {
  enum class Finish { stop, length, cancelled };
  Finish finish = Finish::stop;
  std::optional<std::int64_t> completion_tokens;  // backend-reported usage, if any
};

/// Receives a batch of tokens as delivered by one read; return false to
/// cancel the stream.
using TokenSink = std::function<bool(std::span<const std::string> tokens)>;

class Backend {
 public:
  virtual ~Backend() = default;
  virtual StreamResult stream(const GenerationRequest& request, const TokenSink& sink) = 0;
};

// --- replay ----------------------------------------------------------------

struct ReplayBranch {
  std::vector<std::string> suppressed;
  std::vector<std::string> not_suppressed;
};

struct ReplayFixture {
  std::string id;
  std::string prompt;
  std::vector<std::string> default_stream;
  std::map<std::size_t, ReplayBranch> branches;  // keyed by byte offset into the default text
  nlohmann::json extra = nlohmann::json::object();  // expected values and other metadata

  std::string default_text() const;
  /// Checks offsets against token boundaries and branch texts against the default.
  void validate() const;
};

ReplayFixture load_replay_fixture(const std::filesystem::path& path);
ReplayFixture replay_fixture_from_json(const nlohmann::json& j, std::string id = {});

/// Deterministic branching script. A continuation prefix is matched as
/// default text with zero or more "<injection><suppressed branch>" detours,
/// each taken at a branch offset and rejoining the default right after the
/// branch's not-suppressed block.
class ReplayBackend final : public Backend {
 public:
  ReplayBackend(ReplayFixture fixture, std::vector<std::string> injections, std::size_t read_batch = 1);
  StreamResult stream(const GenerationRequest& request, const TokenSink& sink) override;

  int requests() const noexcept { return requests_; }
  const ReplayFixture& fixture() const noexcept { return fixture_; }

 private:
  ReplayFixture fixture_;
  std::vector<std::string> injections_;
  std::size_t read_batch_;
  std::atomic<int> requests_{0};
};

// --- live ------------------------------------------------------------------

/// OpenAI-compatible streaming client for /v1/completions (raw_completion) or
/// /v1/chat/completions (assistant_prefill). Cancelling from the sink aborts
/// the HTTP read.
class LiveBackend final : public Backend {
 public:
  explicit LiveBackend(BackendConfig config);
  StreamResult stream(const GenerationRequest& request, const TokenSink& sink) override;

 private:
  BackendConfig config_;
};

std::unique_ptr<Backend> make_backend(const BackendConfig& config, const std::vector<std::string>& injections);

// --- sessions --------------------------------------------------------------

/// Text appended to the completion for a signal: a single space, then the signal.
std::string injection_text(std::string_view signal);

struct Injection {
  std::size_t offset = 0;  // in the completion text, where the injected text starts
  std::string text;
  Anchor anchor;
};

struct SessionUsage {
  int requests = 0;
  std::int64_t tokens_streamed = 0;
  std::int64_t tokens_discarded = 0;
  std::int64_t chars_streamed = 0;
  std::int64_t chars_discarded = 0;
  std::int64_t chars_injected = 0;
  std::int64_t tokens_injected = 0;  // whitespace estimate of injected text
  std::optional<std::int64_t> backend_completion_tokens;
};

struct SessionResult {
  std::string completion;  // everything generated plus injections, markers included
  ReasoningTrace trace;    // segmented think content
  std::vector<SuppressionDecision> decisions;
  std::vector<Injection> injections;
  SessionUsage usage;
  bool truncated = false;  // ended on max_tokens
  int detections = 0;
  int suppressions = 0;
};

struct SessionOptions {
  std::string problem_id;
  nlohmann::json messages;  // forwarded to chat backends
  std::optional<std::uint64_t> seed;
};

/// Runs one generation under the controller. Throws BackendError,
/// ContinuationUnsupported or BudgetExceeded.
SessionResult run_session(const std::string& prompt, Backend& backend, const BackendConfig& backend_config,
                          SuppressionController& controller, const SessionOptions& options = {});

// --- proxy -----------------------------------------------------------------

struct ProxyConfig {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 picks a free port
  BackendConfig upstream;
  ControllerConfig controller;
  const ExperiencePool* pool = nullptr;
  int avg_recheck_tokens = 200;  // per suppression, for X-Tokens-Saved-Estimate
  /// Test hook: builds the upstream backend per request instead of make_backend.
  std::function<std::unique_ptr<Backend>()> backend_factory;
};

class ProxyServer {
 public:
  explicit ProxyServer(ProxyConfig config);
  ~ProxyServer();
  ProxyServer(const ProxyServer&) = delete;
  ProxyServer& operator=(const ProxyServer&) = delete;

  /// Binds and serves on a background thread; returns the bound port.
  int start();
  /// Binds and serves on the calling thread until stop().
  void serve_forever();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Serves a replay fixture behind OpenAI-compatible streaming endpoints, so the
/// live client and the proxy can be exercised without a model.
class ReplayUpstreamServer {
 public:
  ReplayUpstreamServer(ReplayFixture fixture, std::vector<std::string> injections, std::string host = "127.0.0.1");
  ~ReplayUpstreamServer();
  int start(int port = 0);
  void serve_forever(int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace recheck
