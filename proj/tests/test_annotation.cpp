#include <fstream>

#include "annotator_stub.hpp"
#include "doctest.h"
#include "recheck/annotation.hpp"
#include "recheck/errors.hpp"
#include "test_support.hpp"

using namespace recheck;

namespace {

const std::string kRolloutA =
    "We need 12*7 first. 12*7 = 84.\n\n"
    "Wait, but let me check if that answer makes sense. 12*7 is 84 again, so it checks out.\n\n"
    "Now add 10 to get 94.\n\n"
    "Let me double-check the arithmetic here. 84 + 10 = 95, so I was wrong, it should be 94 not 95.\n\n"
    "Alternatively, maybe try splitting 12 into 10 and 2.\n\n"
    "So the answer is 94.";

const std::string kRolloutB =
    "The area is 6*5 = 30.\n\n"
    "Let me verify this result again.\n\n"
    "So the area is 30.";

std::vector<Rollout> rollouts() {
  return {{"pA", kRolloutA, "demo", {}}, {"pB", kRolloutB, "demo", {}}};
}

AnnotatorConfig live_config(const std::string& url, const std::filesystem::path& cache) {
  AnnotatorConfig c;
  c.endpoint = url;
  c.cache_dir = cache;
  c.mode = AnnotatorMode::live;
  c.backoff_ms = 1;
  c.timeout_ms = 10000;
  return c;
}

}  // namespace

TEST_CASE("sha256") {
  CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  CHECK(AnnotatorClient::cache_key("a", "bc") != AnnotatorClient::cache_key("ab", "c"));
}

TEST_CASE("prompt assets load") {
  auto set = PromptSet::load(PromptSet::default_dir());
  CHECK(set.texts.size() == 5);
  CHECK(set.text(PromptId::activation_filter).find("Return ONLY a single character: 1 or 0.") != std::string::npos);
  CHECK(set.text(PromptId::reflection_type).find("Only output: a, b, c, or d.") != std::string::npos);
  CHECK(set.text(PromptId::outcome_annotation).find("If unclear, label INCONCLUSIVE.") != std::string::npos);
  CHECK(parse_prompt_id("outcome_annotation") == PromptId::outcome_annotation);
}

TEST_CASE("parse_sentence_list") {
  CHECK(parse_sentence_list("[\"A.\", \"B.\"]") == std::vector<std::string>{"A.", "B."});
  CHECK(parse_sentence_list("```json\n[\"A.\"]\n```") == std::vector<std::string>{"A."});
  CHECK(parse_sentence_list("- \"Let me check.\"\n2. Verify it.\n\n\xE2\x80\x9C" "Confirm.\xE2\x80\x9D") ==
        std::vector<std::string>{"Let me check.", "Verify it.", "Confirm."});
  CHECK(parse_sentence_list("NONE").empty());
  CHECK(parse_sentence_list("[]").empty());
  CHECK_THROWS_AS(parse_sentence_list("[1, 2]"), AnnotatorError);
  CHECK_THROWS_AS(parse_sentence_list("[\"open"), AnnotatorError);
}

TEST_CASE("verbatim anchoring") {
  auto trace = segment_trace("p", kRolloutA);
  SUBCASE("an activation sentence anchors to its trace position") {
    std::vector<std::string> got{"Wait, but let me check if that answer makes sense."};
    auto r = anchor_sentences(trace, got);
    REQUIRE(r.candidates.size() == 1);
    CHECK(r.candidates[0].anchor == Anchor{1, 0});
  }
  SUBCASE("paraphrases are dropped and counted") {
    std::vector<std::string> got{"Let me check whether the answer makes sense.",
                                 "Let me  double-check the\narithmetic here."};
    auto r = anchor_sentences(trace, got);
    CHECK(r.no_match == 1);
    REQUIRE(r.candidates.size() == 1);
    CHECK(r.candidates[0].anchor == Anchor{3, 0});
    CHECK(r.candidates[0].sentence_text == "Let me double-check the arithmetic here.");
  }
  SUBCASE("duplicates get distinct anchors") {
    auto dup = segment_trace("p", "Let me check. 1+1=2.\n\nLet me check. 2+2=4.");
    std::vector<std::string> got{"Let me check.", "Let me check.", "Let me check."};
    auto r = anchor_sentences(dup, got);
    REQUIRE(r.candidates.size() == 2);
    CHECK(r.candidates[0].anchor == Anchor{0, 0});
    CHECK(r.candidates[1].anchor == Anchor{1, 0});
    CHECK(r.no_match == 1);
  }
}

TEST_CASE("response parsers") {
  CHECK(parse_filter_response(" 1\n"));
  CHECK_FALSE(parse_filter_response("0"));
  CHECK_THROWS_AS(parse_filter_response("yes"), AnnotatorError);
  CHECK(parse_outcome("UNNECESSARY") == Outcome::unnecessary);
  CHECK(parse_outcome("Label: NECESSARY (the value changed)") == Outcome::necessary);
  CHECK(parse_outcome("inconclusive.") == Outcome::inconclusive);
  CHECK_THROWS_AS(parse_outcome("It is needed"), AnnotatorError);
  CHECK(parse_reflective("True"));
  CHECK_FALSE(parse_reflective(" false."));
  CHECK_THROWS_AS(parse_reflective("maybe"), AnnotatorError);
  CHECK(parse_reflection_type("c") == ReflectionType::rethink);
  CHECK(parse_reflection_type("a. Successful Correctness Repair Action") == ReflectionType::corrective);
  CHECK_THROWS_AS(parse_reflection_type("e"), AnnotatorError);
  CHECK_THROWS_AS(parse_reflection_type("because"), AnnotatorError);
}

TEST_CASE("episode windows") {
  std::string raw;
  for (int i = 0; i < 10; ++i) raw += "Step " + std::to_string(i) + " text.\n\n";
  raw += "Let me check step nine. Fine.";
  auto trace = segment_trace("p", raw);
  OutcomeConfig cfg;
  cfg.before = {WindowUnit::steps, 2};
  cfg.after_steps = 4;
  auto e = build_episode(trace, {4, 0}, cfg);
  CHECK(e.before.text == "Step 2 text.\n\nStep 3 text.");
  CHECK(e.anchor_sentence == "Step 4 text.");
  CHECK(e.after == "\n\nStep 5 text.\n\nStep 6 text.\n\nStep 7 text.\n\nStep 8 text.");
  auto tail = build_episode(trace, {10, 0}, cfg);
  CHECK(tail.after == " Fine.");
  CHECK(unit_id("qwq", "aime-3", {4, 1}) == "qwq/aime-3/s4.1");
}

TEST_CASE("replay mode never touches the network") {
  auto dir = testsupport::scratch_dir("replay");
  AnnotatorConfig c;
  c.cache_dir = dir;
  c.endpoint = "http://127.0.0.1:1";
  AnnotatorClient client(c);
  CHECK_THROWS_AS(client.complete(PromptId::activation_filter, "Let me check."), AnnotatorError);
  CHECK(client.network_calls() == 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("live client: cache, retries and content errors") {
  stub::AnnotatorStub server;
  server.start();
  auto dir = testsupport::scratch_dir("live");

  SUBCASE("responses are cached write-once and replayable") {
    AnnotatorClient client(live_config(server.url(), dir));
    CHECK(client.complete(PromptId::activation_filter, "Let me double-check the arithmetic here.") == "1");
    CHECK(client.complete(PromptId::activation_filter, "Let me double-check the arithmetic here.") == "1");
    CHECK(client.complete(PromptId::activation_filter, "Maybe try coordinates.") == "0");
    CHECK(server.requests == 2);
    CHECK(client.cache_hits() == 1);
    AnnotatorConfig rc;
    rc.cache_dir = dir;
    AnnotatorClient replay(rc);
    CHECK(replay.complete(PromptId::activation_filter, "Maybe try coordinates.") == "0");
    CHECK(replay.network_calls() == 0);
    std::ifstream in(dir / "activation_filter.jsonl");
    int lines = 0;
    for (std::string l; std::getline(in, l);) ++lines;
    CHECK(lines == 2);
  }
  SUBCASE("transport and 5xx errors are retried") {
    server.fail_next = 2;
    AnnotatorClient client(live_config(server.url(), dir));
    CHECK(client.complete(PromptId::activation_filter, "Let me verify that.") == "1");
    CHECK(client.network_calls() == 3);
  }
  SUBCASE("three failures give up") {
    server.fail_next = 3;
    server.fail_status = 429;
    AnnotatorClient client(live_config(server.url(), dir));
    CHECK_THROWS_AS(client.complete(PromptId::activation_filter, "Let me verify that."), AnnotatorError);
    CHECK(client.network_calls() == 3);
  }
  SUBCASE("malformed content fails at once") {
    server.set_override([](PromptId, const std::string&) { return std::string("yes"); });
    AnnotatorClient client(live_config(server.url(), dir));
    std::vector<ActivationCandidate> cands{{"Let me double-check the arithmetic here.", {0, 0}, false}};
    CHECK_THROWS_AS(filter_activations(cands, client), AnnotatorError);
    CHECK(client.network_calls() == 1);
  }
  SUBCASE("client errors are not retried") {
    server.fail_next = 1;
    server.fail_status = 401;
    AnnotatorClient client(live_config(server.url(), dir));
    CHECK_THROWS_AS(client.complete(PromptId::activation_filter, "x"), AnnotatorError);
    CHECK(client.network_calls() == 1);
  }
  server.stop();
  std::filesystem::remove_all(dir);
}

TEST_CASE("outcome labels") {
  stub::AnnotatorStub server;
  server.start();
  auto dir = testsupport::scratch_dir("outcome");
  AnnotatorClient client(live_config(server.url(), dir));
  auto trace = segment_trace("pA", kRolloutA);
  OutcomeConfig cfg;

  auto confirm = annotate_outcome({"Wait, but let me check if that answer makes sense.", {1, 0}, true}, trace, "demo",
                                  client, cfg);
  CHECK(confirm.outcome == Outcome::unnecessary);
  REQUIRE(confirm.unit);
  CHECK(confirm.unit->label == Label::unnecessary);
  CHECK(confirm.unit->id == "demo/pA/s1.0");
  CHECK(confirm.unit->context == "We need 12*7 first. 12*7 = 84.");

  auto fix = annotate_outcome({"Let me double-check the arithmetic here.", {3, 0}, true}, trace, "demo", client, cfg);
  CHECK(fix.outcome == Outcome::necessary);
  REQUIRE(fix.unit);
  CHECK(fix.unit->label == Label::necessary);

  auto cut = segment_trace("pC", "We have 5 apples.\n\nLet me verify the count.");
  auto open = annotate_outcome({"Let me verify the count.", {1, 0}, true}, cut, "demo", client, cfg);
  CHECK(open.outcome == Outcome::inconclusive);
  CHECK_FALSE(open.unit);
  server.stop();
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline: verbatim units, discard rule, replay determinism") {
  stub::AnnotatorStub server;
  server.start();
  auto dir = testsupport::scratch_dir("pipeline");
  const auto rs = rollouts();
  PipelineConfig cfg;
  PipelineResult live_result;
  {
    AnnotatorClient client(live_config(server.url(), dir / "cache"));
    live_result = run_pipeline(rs, client, cfg);
  }
  const auto& rep = live_result.report;
  CHECK(rep.errors.empty());
  CHECK(rep.hard_negatives >= 1);  // the strategy sentence
  CHECK(rep.inconclusive >= 1);    // rollout B never shows the outcome
  CHECK(live_result.units.size() == static_cast<std::size_t>(rep.necessary + rep.unnecessary - rep.empty_context));
  for (const auto& u : live_result.units) {
    const auto& r = u.source.problem_id == "pA" ? rs[0] : rs[1];
    auto trace = segment_trace(r.problem_id, r.raw_text);
    const auto& s = trace.sentence(u.source.anchor);
    CHECK(r.raw_text.find(s.text) != std::string::npos);
    CHECK(u.id == unit_id("demo", r.problem_id, u.source.anchor));
    CHECK(u.context == extract_context(trace, u.source.anchor, cfg.outcome.before).text);
  }
  CHECK(live_result.training.positives.size() == static_cast<std::size_t>(rep.verified));

  const int calls = server.requests;
  server.stop();
  AnnotatorConfig rc;
  rc.cache_dir = dir / "cache";
  for (int run = 0; run < 2; ++run) {
    AnnotatorClient replay(rc);
    auto again = run_pipeline(rs, replay, cfg);
    CHECK(replay.network_calls() == 0);
    write_pool(dir / ("pool" + std::to_string(run) + ".jsonl"), ExperiencePool::build(again.units));
  }
  write_pool(dir / "pool_live.jsonl", ExperiencePool::build(live_result.units));
  CHECK(testsupport::slurp(dir / "pool0.jsonl") == testsupport::slurp(dir / "pool1.jsonl"));
  CHECK(testsupport::slurp(dir / "pool0.jsonl") == testsupport::slurp(dir / "pool_live.jsonl"));
  CHECK(calls > 0);
  std::filesystem::remove_all(dir);
}

TEST_CASE("pipeline keeps going past a failing rollout") {
  auto dir = testsupport::scratch_dir("resume");
  AnnotatorConfig rc;
  rc.cache_dir = dir;
  AnnotatorClient replay(rc);
  auto r = run_pipeline(rollouts(), replay, {});
  CHECK(r.report.errors.size() == 2);
  CHECK(r.units.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("reflection census") {
  stub::AnnotatorStub server;
  server.start();
  auto dir = testsupport::scratch_dir("census");
  AnnotatorClient client(live_config(server.url(), dir));

  SUBCASE("no reflective steps") {
    server.set_override([](PromptId id, const std::string&) {
      return id == PromptId::reflection_identifier ? std::string("False") : std::string();
    });
    std::vector<ReasoningTrace> traces{segment_trace("p", kRolloutA)};
    auto rep = reflection_census(traces, client);
    CHECK(rep.reflective_pct() == 0.0);
    CHECK(rep.steps == 6);
  }
  SUBCASE("ten steps, four reflective") {
    std::string raw;
    const char* steps[] = {"We set x = 3.",
                           "Let me verify that x = 3 satisfies the equation. It checks out, consistent.",
                           "Then y = 2x = 6.",
                           "Alternatively, maybe try substitution instead.",
                           "So x + y = 9.",
                           "Let me double-check the sum. I was wrong, it should be 9 not 8.",
                           "Next we square it: 81.",
                           "Now divide by 3: 27.",
                           "Let me recompute 81 / 3 to confirm. Still get 27.",
                           "The answer is 27."};
    for (int i = 0; i < 10; ++i) raw += std::string(i ? "\n\n" : "") + steps[i];
    std::vector<ReasoningTrace> traces{segment_trace("p10", raw)};
    auto rep = reflection_census(traces, client);
    CHECK(rep.steps == 10);
    CHECK(rep.reflective == 4);
    CHECK(rep.reflective_pct() == doctest::Approx(40.0));
    CHECK(rep.types[static_cast<int>(ReflectionType::rethink)] == 1);
    CHECK(rep.recheck_pct() == doctest::Approx(75.0));
    CHECK(rep.markdown().find("| reflective steps | 4 | 40.0 |") != std::string::npos);

    // Human labels for the same steps, one disagreement.
    std::ofstream h(dir / "human.jsonl");
    h << R"({"problem_id":"p10","step":1,"label":"b"})" << '\n'
      << R"({"problem_id":"p10","step":3,"label":"c"})" << '\n'
      << R"({"problem_id":"p10","step":5,"label":"a"})" << '\n'
      << R"({"problem_id":"p10","step":8,"label":"a"})" << '\n';
    h.close();
    auto m = census_confusion(rep, dir / "human.jsonl");
    long total = 0;
    for (auto& row : m) for (long v : row) total += v;
    CHECK(total == 4);
    CHECK(cohen_kappa(m).observed == doctest::Approx(0.75));
  }
  server.stop();
  std::filesystem::remove_all(dir);
}

TEST_CASE("cohen kappa") {
  const std::vector<std::vector<long>> table{{47, 1, 1, 5}, {1, 369, 17, 41}, {0, 4, 471, 43}, {0, 0, 0, 0}};
  auto a = cohen_kappa(table);
  CHECK(a.n == 1000);
  CHECK(a.observed == doctest::Approx(0.887));
  CHECK(a.kappa == doctest::Approx(0.81).epsilon(0.005 / 0.81));
  CHECK(cohen_kappa({{5, 0}, {0, 5}}).kappa == doctest::Approx(1.0));
  CHECK(cohen_kappa({{10}}).kappa == doctest::Approx(1.0));
  CHECK_THROWS_AS(cohen_kappa({{1, 2}}), std::invalid_argument);
}
