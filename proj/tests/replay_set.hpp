#pragma once

// The shipped demo pool and branching replay set, shared by the unit tests
// and the acceptance binary.

#include <map>
#include <string>
#include <vector>

#include "recheck/annotation.hpp"
#include "recheck/errors.hpp"
#include "recheck/eval.hpp"
#include "test_support.hpp"

namespace replayset {

inline std::filesystem::path assets() { return testsupport::source_dir() / "assets"; }
inline std::filesystem::path fixture_dir() { return assets() / "replay/fixtures"; }

inline std::vector<recheck::Problem> problems() { return recheck::read_dataset(assets() / "replay/dataset.jsonl"); }

inline const recheck::ExperiencePool& demo_pool() {
  static const auto pool = recheck::read_pool(assets() / "demo/pool.jsonl");
  return pool;
}

inline recheck::BenchmarkConfig config(std::vector<recheck::Mode> modes, std::vector<double> taus = {0.8}) {
  recheck::BenchmarkConfig c;
  c.dataset_name = "replay";
  c.modes = std::move(modes);
  c.taus = std::move(taus);
  c.backend.kind = recheck::BackendKind::replay;
  c.backend.fixture = fixture_dir();
  c.backend.think_delimiters = recheck::ThinkDelimiters{};
  c.backend.sampling.max_tokens = 32768;
  return c;
}

struct SessionRun {
  recheck::SessionResult result;
  recheck::ReplayFixture fixture;
};

/// One session on a fixture with the default controller settings.
inline SessionRun run_one(const recheck::Problem& p, recheck::Mode mode, double tau = 0.8) {
  using namespace recheck;
  const auto cfg = config({mode}, {tau});
  ControllerConfig cc = cfg.controller;
  cc.mode = mode;
  cc.tau = tau;
  SuppressionController controller(cc, nullptr, &demo_pool());
  auto fixture = load_replay_fixture(fixture_dir() / (p.problem_id + ".json"));
  ReplayBackend backend(fixture, {injection_text(signal_for(cc))});
  SessionOptions opt;
  opt.problem_id = p.problem_id;
  return {run_session(p.question, backend, cfg.backend, controller, opt), std::move(fixture)};
}

inline std::string golden(const std::string& problem_id) {
  return testsupport::slurp(assets() / "replay/golden" / (problem_id + ".txt"));
}

/// Replay-mode pipeline over the committed annotator cache.
inline recheck::PipelineResult rebuild_demo_pool(int workers = 0) {
  using namespace recheck;
  AnnotatorConfig cfg;
  cfg.mode = AnnotatorMode::replay;
  cfg.cache_dir = assets() / "demo/annotator_cache";
  AnnotatorClient client(cfg);
  PipelineConfig pc;
  pc.workers = workers;
  auto result = run_pipeline(read_rollouts(assets() / "demo/rollouts.jsonl"), client, pc);
  if (client.network_calls() != 0) throw Error("replay pipeline touched the network");
  return result;
}

/// Total suppressions over the replay set for each tau.
inline std::map<double, int> tau_sweep(const std::vector<double>& taus) {
  using namespace recheck;
  const auto probs = problems();
  const auto records = run_benchmark(probs, config({Mode::eds}, taus), &demo_pool());
  std::map<double, int> out;
  for (double t : taus) out[t] = 0;
  for (const auto& r : records) {
    if (r.error) throw Error(r.problem_id + ": " + *r.error);
    out[*r.tau] += r.suppressions;
  }
  return out;
}

}  // namespace replayset
