// HTTP side of the gateway: the OpenAI-compatible streaming client, the
// intervening proxy and a replay upstream server.

#include <atomic>
#include <chrono>
#include <mutex>
#include <thread>

#include "http_util.hpp"
#include "httplib.h"
#include "recheck/errors.hpp"
#include "recheck/gateway.hpp"

namespace recheck {

namespace {

using nlohmann::json;

std::string endpoint_path(const std::string& prefix, bool chat) {
  std::string p = prefix;
  if (p.size() >= 3 && p.compare(p.size() - 3, 3, "/v1") == 0) p.resize(p.size() - 3);
  return p + (chat ? "/v1/chat/completions" : "/v1/completions");
}

json chat_messages(const GenerationRequest& req) {
  json msgs = req.messages.is_array() && !req.messages.empty()
                  ? req.messages
                  : json::array({{{"role", "user"}, {"content", req.prompt}}});
  if (!req.prefix.empty()) msgs.push_back({{"role", "assistant"}, {"content", req.prefix}});
  return msgs;
}

// Incremental server-sent-events reader: returns complete "data:" payloads.
class SseReader {
 public:
  std::vector<std::string> push(std::string_view bytes) {
    buf_.append(bytes);
    std::vector<std::string> out;
    while (true) {
      std::size_t cut = std::string::npos, skip = 0;
      for (const char* sep : {"\r\n\r\n", "\n\n"}) {
        const auto at = buf_.find(sep);
        if (at < cut) {
          cut = at;
          skip = std::strlen(sep);
        }
      }
      if (cut == std::string::npos) break;
      const std::string event = buf_.substr(0, cut);
      buf_.erase(0, cut + skip);
      std::string data;
      std::size_t pos = 0;
      while (pos <= event.size()) {
        auto nl = event.find('\n', pos);
        if (nl == std::string::npos) nl = event.size();
        std::string_view line(event.data() + pos, nl - pos);
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.substr(0, 5) == "data:") {
          line.remove_prefix(5);
          if (!line.empty() && line.front() == ' ') line.remove_prefix(1);
          if (!data.empty()) data += '\n';
          data += line;
        }
        pos = nl + 1;
      }
      if (!data.empty()) out.push_back(std::move(data));
    }
    return out;
  }

 private:
  std::string buf_;
};

void set_timeouts(httplib::Client& c, int timeout_ms) {
  const auto sec = timeout_ms / 1000;
  const auto usec = (timeout_ms % 1000) * 1000;
  c.set_connection_timeout(sec, usec);
  c.set_read_timeout(sec, usec);
  c.set_write_timeout(sec, usec);
}

}  // namespace

// --- live client ---------------------------------------------------------------

LiveBackend::LiveBackend(BackendConfig config) : config_(std::move(config)) {
  config_.apply_env();
  config_.validate();
}

StreamResult LiveBackend::stream(const GenerationRequest& request, const TokenSink& sink) {
  const bool chat = config_.continuation_style == ContinuationStyle::assistant_prefill;
  const auto url = detail::split_url(*config_.base_url);
  httplib::Client client(url.base);
  set_timeouts(client, config_.timeout_ms);

  json body{{"model", config_.model},
            {"stream", true},
            {"max_tokens", request.max_tokens > 0 ? request.max_tokens : config_.sampling.max_tokens},
            {"temperature", config_.sampling.temperature},
            {"top_p", config_.sampling.top_p},
            {"stream_options", {{"include_usage", true}}}};
  if (request.seed) body["seed"] = *request.seed;
  if (chat) {
    body["messages"] = chat_messages(request);
    if (!request.prefix.empty()) {
      body["continue_final_message"] = true;
      body["add_generation_prompt"] = false;
    }
  } else {
    body["prompt"] = request.prompt + request.prefix;
  }

  httplib::Request req;
  req.method = "POST";
  req.path = endpoint_path(url.path, chat);
  req.body = body.dump();
  req.set_header("Content-Type", "application/json");
  req.set_header("Accept", "text/event-stream");
  if (config_.api_key) req.set_header("Authorization", "Bearer " + *config_.api_key);

  int status = 0;
  std::string error_body;
  SseReader sse;
  StreamResult result;
  bool cancelled = false, done = false;
  std::string protocol_error;

  req.response_handler = [&](const httplib::Response& r) {
    status = r.status;
    return true;
  };
  req.content_receiver = [&](const char* data, std::size_t n, std::uint64_t, std::uint64_t) {
    if (status < 200 || status >= 300) {
      error_body.append(data, n);
      return true;
    }
    std::vector<std::string> batch;
    for (auto& payload : sse.push(std::string_view(data, n))) {
      if (payload == "[DONE]") {
        done = true;
        continue;
      }
      json ev;
      try {
        ev = json::parse(payload);
      } catch (const json::parse_error&) {
        protocol_error = "upstream sent a non-JSON event";
        return false;
      }
      if (ev.contains("usage") && ev["usage"].is_object() && ev["usage"].contains("completion_tokens")) {
        result.completion_tokens = ev["usage"]["completion_tokens"].get<std::int64_t>();
      }
      if (!ev.contains("choices") || !ev["choices"].is_array() || ev["choices"].empty()) continue;
      const auto& c = ev["choices"][0];
      std::string text;
      if (chat) {
        if (c.contains("delta") && c["delta"].contains("content") && c["delta"]["content"].is_string()) {
          text = c["delta"]["content"].get<std::string>();
        }
      } else if (c.contains("text") && c["text"].is_string()) {
        text = c["text"].get<std::string>();
      }
      if (!text.empty()) batch.push_back(std::move(text));
      if (c.contains("finish_reason") && c["finish_reason"].is_string() && c["finish_reason"] == "length") {
        result.finish = StreamResult::Finish::length;
      }
    }
    if (!batch.empty() && !sink(batch)) {
      cancelled = true;
      return false;
    }
    return true;
  };

  httplib::Response res;
  httplib::Error err = httplib::Error::Success;
  const bool ok = client.send(req, res, err);
  if (cancelled) {
    result.finish = StreamResult::Finish::cancelled;
    return result;
  }
  if (!protocol_error.empty()) throw BackendError(protocol_error);
  if (!ok && status == 0) throw BackendError("upstream request failed: " + httplib::to_string(err));
  if (status < 200 || status >= 300) {
    if (status == 400 && chat && !request.prefix.empty()) {
      throw ContinuationUnsupported("upstream rejected assistant prefill: " + error_body);
    }
    throw BackendError("upstream returned HTTP " + std::to_string(status) + ": " + error_body);
  }
  if (!ok) throw BackendError("upstream stream broke: " + httplib::to_string(err));
  (void)done;
  return result;
}

// --- proxy -----------------------------------------------------------------------

namespace {

json error_json(const std::string& message, const std::string& type) {
  return {{"error", {{"message", message}, {"type", type}}}};
}

std::string sse_event(const json& j) { return "data: " + j.dump() + "\n\n"; }

}  // namespace

struct ProxyServer::Impl {
  ProxyConfig config;
  httplib::Server server;
  std::thread thread;
  std::atomic<int> request_counter{0};

  void handle(const httplib::Request& req, httplib::Response& res, bool chat) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error& e) {
      res.status = 400;
      res.set_content(error_json(std::string("request body is not JSON: ") + e.what(), "invalid_request_error").dump(),
                      "application/json");
      return;
    }
    std::string prompt;
    json messages;
    if (chat) {
      if (!body.is_object() || !body.contains("messages") || !body["messages"].is_array()) {
        res.status = 400;
        res.set_content(error_json("messages must be an array", "invalid_request_error").dump(), "application/json");
        return;
      }
      messages = body["messages"];
      for (const auto& m : messages) {
        if (!m.is_object() || !m.contains("role") || !m.contains("content") || !m["content"].is_string()) {
          res.status = 400;
          res.set_content(error_json("each message needs role and string content", "invalid_request_error").dump(),
                          "application/json");
          return;
        }
        if (m["role"] == "user") prompt = m["content"].get<std::string>();
      }
      if (prompt.empty()) {
        res.status = 400;
        res.set_content(error_json("no user message", "invalid_request_error").dump(), "application/json");
        return;
      }
    } else {
      if (!body.is_object() || !body.contains("prompt") || !body["prompt"].is_string()) {
        res.status = 400;
        res.set_content(error_json("prompt must be a string", "invalid_request_error").dump(), "application/json");
        return;
      }
      prompt = body["prompt"].get<std::string>();
    }
    const bool stream = body.value("stream", false);

    BackendConfig upstream = config.upstream;
    if (body.contains("max_tokens") && body["max_tokens"].is_number_integer()) {
      upstream.sampling.max_tokens = body["max_tokens"].get<int>();
    }
    if (body.contains("temperature") && body["temperature"].is_number()) {
      upstream.sampling.temperature = body["temperature"].get<double>();
    }
    if (body.contains("top_p") && body["top_p"].is_number()) upstream.sampling.top_p = body["top_p"].get<double>();

    SessionResult result;
    try {
      auto backend = config.backend_factory ? config.backend_factory()
                                            : make_backend(upstream, {injection_text(signal_for(config.controller))});
      SuppressionController controller(config.controller, nullptr, config.pool);
      SessionOptions opt;
      opt.problem_id = "proxy-" + std::to_string(request_counter++);
      opt.messages = messages;
      if (body.contains("seed") && body["seed"].is_number_unsigned()) opt.seed = body["seed"].get<std::uint64_t>();
      result = run_session(prompt, *backend, upstream, controller, opt);
    } catch (const std::invalid_argument& e) {
      res.status = 400;
      res.set_content(error_json(e.what(), "invalid_request_error").dump(), "application/json");
      return;
    } catch (const Error& e) {
      res.status = 502;
      res.set_content(error_json(e.what(), "upstream_error").dump(), "application/json");
      return;
    }

    const std::int64_t saved = static_cast<std::int64_t>(result.suppressions) * config.avg_recheck_tokens;
    res.set_header("X-Recheck-Detections", std::to_string(result.detections));
    res.set_header("X-Suppressions", std::to_string(result.suppressions));
    res.set_header("X-Tokens-Saved-Estimate", std::to_string(saved));

    const std::string id = "recheck-" + std::to_string(request_counter.load());
    const auto created = std::chrono::duration_cast<std::chrono::seconds>(
                             std::chrono::system_clock::now().time_since_epoch())
                             .count();
    const std::string model = body.value("model", config.upstream.model);
    const char* finish = result.truncated ? "length" : "stop";
    const json usage{{"completion_tokens", result.trace.token_count},
                     {"recheck", {{"detections", result.detections},
                                  {"suppressions", result.suppressions},
                                  {"requests", result.usage.requests},
                                  {"tokens_discarded", result.usage.tokens_discarded}}}};
    if (!stream) {
      json choice{{"index", 0}, {"finish_reason", finish}};
      if (chat) {
        choice["message"] = {{"role", "assistant"}, {"content", result.completion}};
      } else {
        choice["text"] = result.completion;
      }
      json out{{"id", id},
               {"object", chat ? "chat.completion" : "text_completion"},
               {"created", created},
               {"model", model},
               {"choices", json::array({choice})},
               {"usage", usage}};
      res.set_content(out.dump(), "application/json");
      return;
    }
    // The session is fully buffered before anything is sent.
    std::string sse;
    json first{{"index", 0}, {"finish_reason", nullptr}};
    json last{{"index", 0}, {"finish_reason", finish}};
    if (chat) {
      first["delta"] = {{"role", "assistant"}, {"content", result.completion}};
      last["delta"] = json::object();
    } else {
      first["text"] = result.completion;
      last["text"] = "";
    }
    const char* object = chat ? "chat.completion.chunk" : "text_completion";
    sse += sse_event({{"id", id}, {"object", object}, {"created", created}, {"model", model},
                      {"choices", json::array({first})}});
    sse += sse_event({{"id", id}, {"object", object}, {"created", created}, {"model", model},
                      {"choices", json::array({last})}, {"usage", usage}});
    sse += "data: [DONE]\n\n";
    res.set_content(sse, "text/event-stream");
  }
};

ProxyServer::ProxyServer(ProxyConfig config) : impl_(std::make_unique<Impl>()) {
  config.controller.validate();
  if (!config.backend_factory) {
    config.upstream.apply_env();
    config.upstream.validate();
  }
  impl_->config = std::move(config);
  auto* impl = impl_.get();
  impl_->server.Post("/v1/chat/completions",
                     [impl](const httplib::Request& q, httplib::Response& r) { impl->handle(q, r, true); });
  impl_->server.Post("/v1/completions",
                     [impl](const httplib::Request& q, httplib::Response& r) { impl->handle(q, r, false); });
  impl_->server.Get("/healthz", [](const httplib::Request&, httplib::Response& r) {
    r.set_content("{\"status\":\"ok\"}", "application/json");
  });
}

ProxyServer::~ProxyServer() { stop(); }

int ProxyServer::start() {
  int port = impl_->config.port;
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->config.host);
  } else if (!impl_->server.bind_to_port(impl_->config.host, port)) {
    port = -1;
  }
  if (port < 0) throw Error("cannot bind " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  impl_->thread = std::thread([impl = impl_.get()] { impl->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void ProxyServer::serve_forever() {
  if (!impl_->server.listen(impl_->config.host, impl_->config.port)) {
    throw Error("cannot listen on " + impl_->config.host + ":" + std::to_string(impl_->config.port));
  }
}

void ProxyServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

// --- replay upstream ---------------------------------------------------------------

struct ReplayUpstreamServer::Impl {
  ReplayFixture fixture;
  std::vector<std::string> injections;
  std::string host;
  httplib::Server server;
  std::thread thread;

  void serve(const httplib::Request& req, httplib::Response& res, bool chat) {
    json body;
    try {
      body = json::parse(req.body);
    } catch (const json::parse_error&) {
      res.status = 400;
      res.set_content(error_json("bad json", "invalid_request_error").dump(), "application/json");
      return;
    }
    GenerationRequest g;
    if (chat) {
      const auto& msgs = body.value("messages", json::array());
      if (!msgs.empty() && msgs.back().value("role", "") == "assistant") {
        if (!body.value("continue_final_message", false)) {
          res.status = 400;
          res.set_content(error_json("assistant prefill needs continue_final_message", "invalid_request_error").dump(),
                          "application/json");
          return;
        }
        g.prefix = msgs.back().value("content", "");
      }
    } else {
      const std::string prompt = body.value("prompt", "");
      if (prompt.compare(0, fixture.prompt.size(), fixture.prompt) != 0) {
        res.status = 404;
        res.set_content(error_json("prompt does not match the fixture", "invalid_request_error").dump(),
                        "application/json");
        return;
      }
      g.prefix = prompt.substr(fixture.prompt.size());
    }
    g.max_tokens = body.value("max_tokens", 0);

    std::vector<std::string> tokens;
    StreamResult r;
    try {
      ReplayBackend backend(fixture, injections);
      r = backend.stream(g, [&](std::span<const std::string> b) {
        tokens.insert(tokens.end(), b.begin(), b.end());
        return true;
      });
    } catch (const UnknownPrefix& e) {
      res.status = 409;
      res.set_content(error_json(e.what(), "unknown_prefix").dump(), "application/json");
      return;
    }
    const bool length = r.finish == StreamResult::Finish::length;
    const auto n = static_cast<std::int64_t>(tokens.size());
    res.set_chunked_content_provider(
        "text/event-stream",
        [tokens = std::move(tokens), chat, length, n, i = std::size_t{0}](std::size_t, httplib::DataSink& sink) mutable {
          if (i < tokens.size()) {
            json choice{{"index", 0}, {"finish_reason", nullptr}};
            if (chat) {
              choice["delta"] = {{"content", tokens[i]}};
            } else {
              choice["text"] = tokens[i];
            }
            const auto ev = sse_event({{"choices", json::array({choice})}});
            ++i;
            return sink.write(ev.data(), ev.size());
          }
          json choice{{"index", 0}, {"finish_reason", length ? "length" : "stop"}};
          if (chat) {
            choice["delta"] = json::object();
          } else {
            choice["text"] = "";
          }
          const auto ev = sse_event({{"choices", json::array({choice})}, {"usage", {{"completion_tokens", n}}}}) +
                          "data: [DONE]\n\n";
          sink.write(ev.data(), ev.size());
          sink.done();
          return true;
        });
  }
};

ReplayUpstreamServer::ReplayUpstreamServer(ReplayFixture fixture, std::vector<std::string> injections,
                                           std::string host)
    : impl_(std::make_unique<Impl>()) {
  fixture.validate();
  impl_->fixture = std::move(fixture);
  impl_->injections = std::move(injections);
  impl_->host = std::move(host);
  auto* impl = impl_.get();
  impl_->server.Post("/v1/completions",
                     [impl](const httplib::Request& q, httplib::Response& r) { impl->serve(q, r, false); });
  impl_->server.Post("/v1/chat/completions",
                     [impl](const httplib::Request& q, httplib::Response& r) { impl->serve(q, r, true); });
}

ReplayUpstreamServer::~ReplayUpstreamServer() { stop(); }

int ReplayUpstreamServer::start(int port) {
  if (port == 0) {
    port = impl_->server.bind_to_any_port(impl_->host);
  } else if (!impl_->server.bind_to_port(impl_->host, port)) {
    port = -1;
  }
  if (port < 0) throw Error("cannot bind replay upstream");
  impl_->thread = std::thread([impl = impl_.get()] { impl->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return port;
}

void ReplayUpstreamServer::serve_forever(int port) {
  if (!impl_->server.listen(impl_->host, port)) throw Error("cannot listen on port " + std::to_string(port));
}

void ReplayUpstreamServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace recheck
