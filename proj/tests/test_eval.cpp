#include <fstream>
#include <sstream>

#include "doctest.h"
#include "recheck/errors.hpp"
#include "recheck/eval.hpp"
#include "test_support.hpp"

using namespace recheck;
using nlohmann::json;

namespace {

std::vector<std::string> tokens_of(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    std::size_t j = i;
    while (j < text.size() && std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    out.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return out;
}

// Problem n: "What is n+3?" with one verification detour.
json small_fixture(int n) {
  const std::string sum = std::to_string(n + 3);
  const std::string before = "<think>\nWe add " + std::to_string(n) + " and 3 to get " + sum +
                             ".\n\nLet me verify this result again.";
  const std::string verify = " Counting up from " + std::to_string(n) + " three times lands on " + sum +
                             ", which matches the sum we wrote. Subtracting 3 from " + sum + " gives back " +
                             std::to_string(n) + ", and adding the two numbers in the other order gives the same "
                             "total, so nothing changes. It checks out.";
  const std::string after = "\n\nSo the total is " + sum + ".\n</think>\n\nThe answer is \\boxed{" + sum + "}.";
  json j;
  j["prompt"] = "What is " + std::to_string(n) + "+3?";
  j["default_stream"] = tokens_of(before + verify + after);
  j["branches"][std::to_string(before.size())] = {{"suppressed", tokens_of(" Moving on.")},
                                                  {"not_suppressed", tokens_of(verify)}};
  return j;
}

struct SmallSet {
  std::filesystem::path dir;
  std::vector<Problem> problems;
};

SmallSet small_set(int count) {
  SmallSet s;
  s.dir = testsupport::scratch_dir("eval");
  for (int n = 1; n <= count; ++n) {
    const auto id = "p" + std::to_string(n);
    std::ofstream(s.dir / (id + ".json")) << small_fixture(n).dump();
    s.problems.push_back({id, "What is " + std::to_string(n) + "+3?", std::to_string(n + 3)});
  }
  return s;
}

BenchmarkConfig small_config(const SmallSet& s) {
  BenchmarkConfig c;
  c.dataset_name = "small";
  c.backend.kind = BackendKind::replay;
  c.backend.fixture = s.dir;
  c.backend.think_delimiters = ThinkDelimiters{};
  c.backend.sampling.max_tokens = 4096;
  return c;
}

}  // namespace

TEST_CASE("extract_answer") {
  CHECK(extract_answer("<think>\n...\n</think>\n\nThe answer is \\boxed{1233}.") == "1233");
  CHECK(extract_answer("\\boxed{1} then \\boxed{2}") == "2");
  CHECK(extract_answer("<think>\nmaybe \\boxed{7}\n</think>\n\nno box here\nFinal: 9") == "7");
  CHECK(extract_answer("<think>\\boxed{7}</think> \\boxed{8}") == "8");
  CHECK(extract_answer("\\boxed{\\frac{1}{2}}") == "\\frac{1}{2}");
  CHECK(extract_answer("work\n\n  $42$  \n") == "42");
  CHECK_THROWS_AS(extract_answer("   "), NoAnswer);
}

TEST_CASE("canonicalizer pairs") {
  std::ifstream in(testsupport::source_dir() / "tests/data/answer_pairs.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    const auto j = json::parse(line);
    const auto a = j["answer"].get<std::string>(), r = j["reference"].get<std::string>();
    INFO(a, " vs ", r, " -> ", canonicalize_answer(a), " | ", canonicalize_answer(r));
    CHECK(answers_match(a, r) == j["match"].get<bool>());
    CHECK(canonicalize_answer(canonicalize_answer(a)) == canonicalize_answer(a));
    ++n;
  }
  CHECK(n == 50);
}

TEST_CASE("percent change and summarize") {
  CHECK(percent_change(4939, 4110) == doctest::Approx(-16.8));
  CHECK(round_to(98.75 - 95.62, 2) == doctest::Approx(3.13));

  RunRecord r;
  r.dataset = "d";
  r.problem_id = "x";
  r.correct = true;
  r.trace_tokens = 321;
  auto rep = summarize(std::vector<RunRecord>{r});
  REQUIRE(rep.rows.size() == 1);
  CHECK(rep.rows[0].accuracy == 100.0);
  CHECK(rep.rows[0].avg_length == 321.0);
  CHECK_FALSE(rep.rows[0].len_delta_pct);

  RunRecord e = r;
  e.problem_id = "y";
  e.error = "backend down";
  e.trace_tokens = 99999;
  rep = summarize(std::vector<RunRecord>{r, e});
  CHECK(rep.rows[0].records == 2);
  CHECK(rep.rows[0].errors == 1);
  CHECK(rep.rows[0].avg_length == 321.0);
}

TEST_CASE("records round trip") {
  RunRecord r;
  r.dataset = "d";
  r.problem_id = "p";
  r.mode = Mode::eds;
  r.tau = 0.9;
  r.seed = 12345678901234ULL;
  r.final_answer = "1/2";
  r.correct = true;
  r.trace_tokens = 10;
  r.detections = 2;
  r.suppressions = 1;
  r.error = "x";
  const auto back = record_from_json(json::parse(record_to_json(r).dump()));
  CHECK(record_to_json(back) == record_to_json(r));
  auto bad = record_to_json(r);
  bad["schema"] = "recheck-records/0";
  CHECK_THROWS_AS(record_from_json(json::parse(bad.dump())), VersionMismatch);
}

namespace {

struct TableRow {
  std::string label;
  double acc_base, acc_full, acc_full_delta, acc_eds, acc_eds_delta;
  double len_base, len_full, len_full_pct, len_eds, len_eds_pct;
};

std::vector<TableRow> read_table() {
  std::ifstream in(testsupport::source_dir() / "assets/reference/table1.csv");
  std::string line;
  std::getline(in, line);
  std::vector<TableRow> rows;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    REQUIRE(f.size() == 12);
    auto d = [&](int i) { return std::stod(f[i]); };
    rows.push_back({f[0] + " " + f[1], d(2), d(3), d(4), d(5), d(6), d(7), d(8), d(9), d(10), d(11)});
  }
  return rows;
}

}  // namespace

TEST_CASE("table regression over the published absolute columns") {
  const auto rows = read_table();
  REQUIRE(rows.size() == 19);
  std::vector<std::string> mismatched;
  for (const auto& t : rows) {
    BenchmarkReport rep;
    auto row = [&](Mode m, double acc, double len) {
      SummaryRow s;
      s.dataset = t.label;
      s.mode = m;
      s.accuracy = acc;
      s.avg_length = len;
      if (m == Mode::eds) s.tau = 0.8;
      return s;
    };
    rep.rows = {row(Mode::base, t.acc_base, t.len_base), row(Mode::full_suppress, t.acc_full, t.len_full),
                row(Mode::eds, t.acc_eds, t.len_eds)};
    compute_deltas(rep);
    auto check = [&](const char* what, double got, double printed) {
      if (std::abs(got - printed) > 0.1 + 1e-9) mismatched.push_back(t.label + " " + what);
    };
    check("acc full", *rep.rows[1].acc_delta_points, t.acc_full_delta);
    check("acc eds", *rep.rows[2].acc_delta_points, t.acc_eds_delta);
    check("len full", *rep.rows[1].len_delta_pct, t.len_full_pct);
    check("len eds", *rep.rows[2].len_delta_pct, t.len_eds_pct);
  }
  // The printed table is internally inconsistent in exactly these cells (the
  // QwQ-32B AIME2024 lengths repeat the DeepSeek-7B AIME24 ones).
  const std::vector<std::string> known{"DeepSeek-7B AIME25 len eds", "QwQ-32B AIME2024 len full",
                                       "QwQ-32B AIME2024 len eds"};
  CHECK(mismatched == known);
}

TEST_CASE("benchmark on replay fixtures") {
  const auto set = small_set(5);
  auto config = small_config(set);
  config.modes = {Mode::base, Mode::full_suppress};
  const auto records = run_benchmark(set.problems, config, nullptr);
  REQUIRE(records.size() == 10);
  for (const auto& r : records) {
    INFO(r.problem_id, " ", to_string(r.mode), " ", r.error.value_or(""));
    CHECK_FALSE(r.error);
    CHECK(r.correct);
    if (r.mode == Mode::full_suppress) {
      CHECK(r.suppressions == r.detections);
      CHECK(r.detections == 1);
    } else {
      CHECK(r.suppressions == 0);
    }
  }
  // Records are ordered by problem, then mode.
  CHECK(records[0].problem_id == "p1");
  CHECK(records[0].mode == Mode::base);
  CHECK(records[1].mode == Mode::full_suppress);
  CHECK(records[0].seed == records[1].seed);
}

TEST_CASE("eds above one matches base lengths") {
  const auto set = small_set(5);
  auto config = small_config(set);
  config.modes = {Mode::base, Mode::eds};
  config.taus = {1.01};
  auto units = std::vector<ExperienceUnit>{};
  for (int i = 0; i < 10; ++i) {
    ExperienceUnit u;
    u.id = "u" + std::to_string(i);
    u.context = "We add numbers and verify the sum";
    u.label = Label::unnecessary;
    units.push_back(u);
  }
  const auto pool = ExperiencePool::build(units);
  const auto records = run_benchmark(set.problems, config, &pool);
  REQUIRE(records.size() == 10);
  for (std::size_t i = 0; i < records.size(); i += 2) {
    CHECK(records[i].mode == Mode::base);
    CHECK(records[i + 1].trace_tokens == records[i].trace_tokens);
    CHECK(records[i + 1].completion_chars == records[i].completion_chars);
    CHECK(records[i + 1].suppressions == 0);
    CHECK(records[i + 1].detections == 1);
  }
  // The same pool at tau 0.8 suppresses every activation.
  config.taus = {0.8};
  for (const auto& r : run_benchmark(set.problems, config, &pool)) {
    if (r.mode == Mode::eds) CHECK(r.suppressions == 1);
  }
}

TEST_CASE("failing problems become error records") {
  auto set = small_set(2);
  set.problems.push_back({"missing", "?", "0"});
  auto config = small_config(set);
  config.modes = {Mode::base};
  const auto records = run_benchmark(set.problems, config, nullptr);
  REQUIRE(records.size() == 3);
  CHECK(records[0].problem_id == "missing");
  CHECK(records[0].error);
  const auto rep = summarize(records);
  CHECK(rep.rows[0].errors == 1);
  CHECK(rep.rows[0].accuracy == 100.0);
}

TEST_CASE("reports") {
  const auto set = small_set(3);
  auto config = small_config(set);
  config.taus = {0.5, 0.8, 1.0};
  std::vector<ExperienceUnit> units;
  for (int i = 0; i < 10; ++i) {
    ExperienceUnit u;
    u.id = "u" + std::to_string(i);
    u.context = "We add numbers and verify the sum";
    u.label = i < 9 ? Label::unnecessary : Label::necessary;
    units.push_back(u);
  }
  const auto pool = ExperiencePool::build(units);
  const auto records = run_benchmark(set.problems, config, &pool);
  const auto rep = summarize(records);
  REQUIRE(rep.rows.size() == 5);
  CHECK(rep.token_mode == "backend");
  CHECK(*rep.rows[1].len_delta_pct < 0);
  const auto md = report_markdown(rep);
  CHECK(md.find("| small |") != std::string::npos);
  const auto csv = report_csv(rep);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 6);
  const auto svg = sweep_svg(rep, "small");
  CHECK(svg.rfind("<svg", 0) == 0);
  CHECK(svg.find("polyline") != std::string::npos);

  const auto out = testsupport::scratch_dir("report");
  write_records(out / "records.jsonl", records);
  const auto back = read_records(out / "records.jsonl");
  REQUIRE(back.size() == records.size());
  write_report(summarize(back), out);
  CHECK(std::filesystem::exists(out / "summary.csv"));
  CHECK(std::filesystem::exists(out / "table.md"));
  CHECK(std::filesystem::exists(out / "sweep_small.svg"));
  CHECK(std::filesystem::exists(out / "activations_small.svg"));
}
