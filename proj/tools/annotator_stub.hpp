#pragma once

// Rule-based stand-in for the annotator LLM behind an OpenAI-compatible
// chat-completions endpoint. Used by the tests and by the fixture recorder;
// its answers are deterministic functions of the request.

#include <atomic>
#include <functional>
#include <mutex>
#include <string>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "recheck/annotation.hpp"
#include "recheck/detector.hpp"

namespace stub {

inline bool has_any(std::string_view text, std::initializer_list<std::string_view> words) {
  std::string low(text);
  for (auto& c : low) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  for (auto w : words) {
    if (low.find(w) != std::string::npos) return true;
  }
  return false;
}

inline bool strategy_like(std::string_view s) {
  return has_any(s, {"alternatively", "another approach", "maybe try", "instead", "different approach"});
}

inline bool correction_like(std::string_view s) {
  return has_any(s, {"i was wrong", "mistake", "should be", "that's wrong", "that is wrong", "not correct", "fix this",
                     "error in", "miscalculated"});
}

inline bool confirmation_like(std::string_view s) {
  return has_any(s, {"checks out", "same result", "same answer", "confirmed", "consistent", "still get", "is correct",
                     "holds", "matches"});
}

inline std::string_view section_after(std::string_view content, std::string_view header) {
  const auto at = content.find(header);
  return at == std::string_view::npos ? std::string_view{} : content.substr(at + header.size());
}

/// Highest lexical score over the sentences of a passage.
inline double max_sentence_score(std::string_view text) {
  static thread_local recheck::LexicalDetector lexical;
  double best = 0.0;
  auto trace = recheck::segment_trace("stub", std::string(text));
  for (const auto& step : trace.steps) {
    for (const auto& s : step.sentences) best = std::max(best, lexical.score(s.text));
  }
  return best;
}

/// The answer the rules give for one prompt.
inline std::string answer(recheck::PromptId prompt, std::string_view content) {
  using recheck::PromptId;
  static thread_local recheck::LexicalDetector lexical;
  auto score = [](std::string_view s) { return lexical.score(s); };
  switch (prompt) {
    case PromptId::activation_extraction: {
      // Liberal on purpose: anything cue-like is returned and the filter sorts it out.
      auto trace = recheck::segment_trace("stub", std::string(content));
      nlohmann::json out = nlohmann::json::array();
      for (const auto& step : trace.steps) {
        for (const auto& s : step.sentences) {
          if (score(s.text) >= 0.5 || has_any(s.text, {"let me", "maybe try", "alternatively"})) out.push_back(s.text);
        }
      }
      return out.dump();
    }
    case PromptId::activation_filter:
      return score(content) >= 0.5 && !strategy_like(content) ? "1" : "0";
    case PromptId::outcome_annotation: {
      // Only the text after the onset sentence decides.
      auto ctx = section_after(content, "Context window:\n");
      auto onset = section_after(content, "Onset sentence:\n");
      onset = onset.substr(0, onset.find("\n\nContext window:"));
      const auto at = ctx.find(onset);
      auto after = at == std::string_view::npos ? ctx : ctx.substr(at + onset.size());
      // Judge on the rest of the step and the one after it.
      after = recheck::trim(after);
      if (auto gap = after.find("\n\n"); gap != std::string_view::npos) {
        if (auto second = after.find("\n\n", gap + 2); second != std::string_view::npos) after = after.substr(0, second);
      }
      if (correction_like(after)) return "NECESSARY";
      if (confirmation_like(after)) return "UNNECESSARY";
      return "INCONCLUSIVE";
    }
    case PromptId::reflection_identifier:
      return max_sentence_score(content) >= 0.5 || strategy_like(content) || has_any(content, {"wait,"}) ? "True"
                                                                                                  : "False";
    case PromptId::reflection_type: {
      auto step = section_after(content, "Step to classify:\n");
      auto later = section_after(content, "Later context:\n");
      later = later.substr(0, later.find("\n\nStep to classify:"));
      if (strategy_like(step)) return "c";
      if (max_sentence_score(step) < 0.5) return "d";
      return correction_like(step) || correction_like(later) ? "a" : "b";
    }
  }
  return "";
}

/// Serves `answer` (or an override) on /v1/chat/completions.
class AnnotatorStub {
 public:
  AnnotatorStub() : prompts_(recheck::PromptSet::load(recheck::PromptSet::default_dir())) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      ++requests;
      if (fail_next > 0) {
        --fail_next;
        res.status = fail_status;
        res.set_content("{\"error\":\"scripted failure\"}", "application/json");
        return;
      }
      auto body = nlohmann::json::parse(req.body);
      const auto system = body["messages"][0]["content"].get<std::string>();
      const auto user = body["messages"][1]["content"].get<std::string>();
      std::optional<recheck::PromptId> id;
      for (const auto& [pid, text] : prompts_.texts) {
        if (text == system) id = pid;
      }
      if (!id) {
        res.status = 400;
        return;
      }
      std::string content;
      {
        std::lock_guard lock(mu_);
        content = override_ ? override_(*id, user) : std::string{};
      }
      if (content.empty()) content = answer(*id, user);
      nlohmann::json out{{"choices", {{{"index", 0}, {"message", {{"role", "assistant"}, {"content", content}}}}}}};
      res.set_content(out.dump(), "application/json");
    });
  }
  ~AnnotatorStub() { stop(); }

  int start() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }
  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }
  std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }

  /// Non-empty return values replace the rule-based answer.
  void set_override(std::function<std::string(recheck::PromptId, const std::string&)> f) {
    std::lock_guard lock(mu_);
    override_ = std::move(f);
  }

  std::atomic<int> requests{0};
  std::atomic<int> fail_next{0};
  int fail_status = 500;

 private:
  recheck::PromptSet prompts_;
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mu_;
  std::function<std::string(recheck::PromptId, const std::string&)> override_;
};

}  // namespace stub
