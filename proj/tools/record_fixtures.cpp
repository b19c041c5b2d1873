// Records the committed annotator cache and demo pool by running the
// annotation pipeline in live mode against the rule-based stub annotator.
//
//   record_fixtures [--assets DIR]
//
// Run after tools/make_fixtures.py. Rewrites:
//   <assets>/demo/annotator_cache/*.jsonl
//   <assets>/demo/pool.jsonl
//   <assets>/demo/pipeline_report.json
//   <assets>/demo/census.json

#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "annotator_stub.hpp"
#include "recheck/annotation.hpp"
#include "recheck/pool.hpp"

using namespace recheck;

int main(int argc, char** argv) {
  CLI::App app{"record annotator fixtures"};
  std::filesystem::path assets = std::filesystem::path(RECHECK_SOURCE_DIR) / "assets";
  app.add_option("--assets", assets);
  CLI11_PARSE(app, argc, argv);

  const auto demo = assets / "demo";
  const auto cache = demo / "annotator_cache";
  std::filesystem::remove_all(cache);

  stub::AnnotatorStub server;
  server.start();

  AnnotatorConfig cfg;
  cfg.endpoint = server.url();
  cfg.mode = AnnotatorMode::live;
  cfg.cache_dir = cache;
  AnnotatorClient client(cfg);

  const auto rollouts = read_rollouts(demo / "rollouts.jsonl");
  const auto result = run_pipeline(rollouts, client, PipelineConfig{});
  const auto pool = ExperiencePool::build(result.units);
  write_pool(demo / "pool.jsonl", pool);
  std::ofstream(demo / "pipeline_report.json") << result.report.to_json().dump(2) << '\n';

  std::vector<ReasoningTrace> traces;
  for (const auto& r : rollouts) traces.push_back(segment_trace(r.problem_id, r.raw_text));
  const auto census = reflection_census(traces, client);
  std::ofstream(demo / "census.json") << census.to_json().dump(2) << '\n';

  server.stop();
  std::cout << "rollouts " << rollouts.size() << ", units " << pool.units().size() << ", unnecessary_rate "
            << pool.stats().unnecessary_rate << ", annotator calls " << client.network_calls() << '\n'
            << result.report.to_json().dump() << '\n';
  return result.report.errors.empty() ? 0 : 1;
}
