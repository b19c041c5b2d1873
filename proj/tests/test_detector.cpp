#include <atomic>
#include <chrono>
#include <thread>

#include "doctest.h"
#include "httplib.h"
#include "recheck/detector.hpp"
#include "recheck/errors.hpp"
#include "test_support.hpp"

using namespace recheck;

namespace {

bool fires(std::string_view s) {
  LexicalDetector d;
  return d.detect(s, ContextWindow{}).is_recheck_activation;
}

}  // namespace

TEST_CASE("lexical detector examples") {
  CHECK(fires("Wait, but let me check if that answer makes sense."));
  CHECK_FALSE(fires("Numbers divisible by 3 and 23: lcm(3,23)=69."));
  CHECK_FALSE(fires("Let me think again."));
  CHECK(fires("Let me recompute the sum to be safe."));
  CHECK_FALSE(fires("So the check out total checks out."));
  CHECK_FALSE(fires("Alternatively, we could check a different approach instead."));
  CHECK_FALSE(fires("Compute 17 * 3 = 51."));
  CHECK(fires("Let me compute this again."));
}

TEST_CASE("lexical detector agrees with the prompt asset examples") {
  auto golden = testsupport::prompt_examples();
  REQUIRE(golden.positives.size() == 10);
  REQUIRE(golden.negatives.size() >= 8);
  for (auto& s : golden.positives) CHECK_MESSAGE(fires(s), s);
  for (auto& s : golden.negatives) CHECK_MESSAGE(!fires(s), s);
  for (const char* s : {"Maybe try coordinates.", "Consider symmetry.", "Let me try coordinates.", "Thus it is 5."}) {
    CHECK_MESSAGE(!fires(s), s);
  }
}

TEST_CASE("property: detection is deterministic and monotone in threshold") {
  const char* sentences[] = {"Let me check.", "Wait.", "Let me verify that this holds.", "Compute x.",
                             "Therefore, let me double check the sum.", "Hmm, plug in x = 2."};
  for (auto s : sentences) {
    bool prev = true;
    for (double t = 0.0; t <= 1.0001; t += 0.05) {
      LexicalDetector d(t);
      auto r1 = d.detect(s, {});
      auto r2 = d.detect(s, {});
      CHECK(r1.score == r2.score);
      CHECK(r1.is_recheck_activation == (r1.score >= t));
      CHECK(r1.score >= 0.0);
      CHECK(r1.score <= 1.0);
      CHECK_FALSE(r1.detector_id.empty());
      if (!prev) CHECK_FALSE(r1.is_recheck_activation);
      prev = r1.is_recheck_activation;
    }
  }
}

TEST_CASE("detector config validation") {
  DetectorConfig c;
  CHECK_NOTHROW(c.validate());
  c.kind = DetectorKind::remote;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c.endpoint = "http://127.0.0.1:1/v1/detect";
  CHECK_NOTHROW(c.validate());
  c.threshold = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  DetectorConfig lex;
  lex.endpoint = "http://x";
  CHECK_THROWS_AS(lex.validate(), std::invalid_argument);
}

TEST_CASE("remote detector client") {
  httplib::Server srv;
  std::atomic<int> calls{0};
  srv.Post("/v1/detect", [&](const httplib::Request& req, httplib::Response& res) {
    ++calls;
    auto j = nlohmann::json::parse(req.body);
    const std::string s = j.at("sentence");
    if (s == "bad-status") {
      res.status = 500;
      return;
    }
    if (s == "bad-schema") {
      res.set_content(R"({"prob": 0.3})", "application/json");
      return;
    }
    if (s == "out-of-range") {
      res.set_content(R"({"probability": 1.7, "model_version": "t"})", "application/json");
      return;
    }
    if (s == "slow") std::this_thread::sleep_for(std::chrono::milliseconds(600));
    const double p = j.at("context") == "ctx" ? 0.9 : 0.2;
    res.set_content(nlohmann::json{{"probability", p}, {"model_version", "toy-1"}}.dump(), "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();

  DetectorConfig c;
  c.kind = DetectorKind::remote;
  c.endpoint = "http://127.0.0.1:" + std::to_string(port) + "/v1/detect";
  c.timeout_ms = 300;
  ContextWindow ctx;
  ctx.text = "ctx";

  SUBCASE("threshold applied to returned probability") {
    RemoteDetector d(c);
    auto r = d.detect("hello", ctx);
    CHECK(r.is_recheck_activation);
    CHECK(r.score == doctest::Approx(0.9));
    CHECK(r.detector_id == "remote/toy-1");
    CHECK_FALSE(d.detect("hello", ContextWindow{}).is_recheck_activation);
  }
  SUBCASE("fail closed raises typed errors") {
    c.fallback = Fallback::fail_closed;
    RemoteDetector d(c);
    CHECK_THROWS_AS(d.detect("bad-status", ctx), RemoteUnavailable);
    CHECK_THROWS_AS(d.detect("bad-schema", ctx), RemoteUnavailable);
    CHECK_THROWS_AS(d.detect("out-of-range", ctx), RemoteUnavailable);
    CHECK_THROWS_AS(d.detect("slow", ctx), DetectorTimeout);
  }
  SUBCASE("fail open maps failure to no activation") {
    RemoteDetector d(c);
    auto r = d.detect("bad-status", ctx);
    CHECK_FALSE(r.is_recheck_activation);
    CHECK(r.detector_id == "remote/fail-open");
    CHECK_FALSE(d.detect("slow", ctx).is_recheck_activation);
  }
  SUBCASE("concurrent use shares one client") {
    c.timeout_ms = 5000;
    c.fallback = Fallback::fail_closed;
    RemoteDetector d(c);
    std::vector<std::thread> ts;
    std::atomic<int> positives{0};
    for (int i = 0; i < 8; ++i) {
      ts.emplace_back([&] {
        for (int j = 0; j < 5; ++j) positives += d.detect("hello", ctx).is_recheck_activation ? 1 : 0;
      });
    }
    for (auto& t : ts) t.join();
    CHECK(positives == 40);
  }
  srv.stop();
  th.join();

  c.fallback = Fallback::fail_closed;
  RemoteDetector down(c);
  CHECK_THROWS_AS(down.detect("hello", ctx), Error);
}

TEST_CASE("detector training set shape") {
  auto rows = [](int n, const char* tag) {
    std::vector<LabeledSentence> v;
    for (int i = 0; i < n; ++i) v.push_back({std::string(tag) + std::to_string(i), "", 0});
    return v;
  };
  SUBCASE("ample corpus") {
    TrainingSources src{rows(1000, "p"), rows(2000, "h"), rows(5000, "e")};
    TrainingSetCounts counts;
    auto set = build_detector_training_set(src, 42, &counts);
    CHECK(set.size() == 4000);
    CHECK(counts.hard == 1500);
    CHECK(counts.easy == 1500);
    auto again = build_detector_training_set(src, 42);
    REQUIRE(again.size() == set.size());
    for (std::size_t i = 0; i < set.size(); ++i) CHECK(again[i].sentence == set[i].sentence);
    int pos = 0;
    for (auto& r : set) pos += r.label;
    CHECK(pos == 1000);
  }
  SUBCASE("easy backfills missing hard negatives") {
    TrainingSources src{rows(10, "p"), rows(5, "h"), rows(100, "e")};
    TrainingSetCounts counts;
    auto set = build_detector_training_set(src, 1, &counts);
    CHECK(set.size() == 40);
    CHECK(counts.hard == 5);
    CHECK(counts.easy == 25);
  }
  SUBCASE("insufficient") {
    TrainingSources src{rows(10, "p"), rows(5, "h"), rows(5, "e")};
    CHECK_THROWS_AS(build_detector_training_set(src, 1), InsufficientNegatives);
  }
}
