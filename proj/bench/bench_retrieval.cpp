// Serial reference vs OpenMP kernel: BM25 scoring and top-k retrieval over
// synthetic pools of increasing size.

#include <benchmark/benchmark.h>

#include <map>
#include <random>

#include "oracles.hpp"
#include "recheck/pool.hpp"

namespace {

const recheck::ExperiencePool& pool_of(std::size_t n) {
  static std::map<std::size_t, recheck::ExperiencePool> cache;
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;
  std::mt19937_64 rng(n);
  std::vector<recheck::ExperienceUnit> units;
  for (std::size_t i = 0; i < n; ++i) {
    recheck::ExperienceUnit u;
    u.id = "u" + std::to_string(i);
    u.context = oracle::synthetic_text(rng, 40, 160);
    u.label = rng() % 10 < 7 ? recheck::Label::unnecessary : recheck::Label::necessary;
    units.push_back(std::move(u));
  }
  return cache.emplace(n, recheck::ExperiencePool::build(std::move(units))).first->second;
}

std::string query_text() {
  std::mt19937_64 rng(7);
  return oracle::synthetic_text(rng, 60, 60);
}

void score_all(benchmark::State& state, recheck::Kernel kernel) {
  const auto& pool = pool_of(static_cast<std::size_t>(state.range(0)));
  const auto q = recheck::make_query(query_text());
  for (auto _ : state) benchmark::DoNotOptimize(pool.score_all(q, kernel));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

void retrieve(benchmark::State& state, recheck::Kernel kernel) {
  const auto& pool = pool_of(static_cast<std::size_t>(state.range(0)));
  const auto q = query_text();
  for (auto _ : state) benchmark::DoNotOptimize(pool.retrieve(q, 30, kernel));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

}  // namespace

BENCHMARK_CAPTURE(score_all, serial, recheck::Kernel::serial)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);
BENCHMARK_CAPTURE(score_all, parallel, recheck::Kernel::parallel)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);
BENCHMARK_CAPTURE(retrieve, serial, recheck::Kernel::serial)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);
BENCHMARK_CAPTURE(retrieve, parallel, recheck::Kernel::parallel)->RangeMultiplier(4)->Range(1 << 10, 1 << 16);

BENCHMARK_MAIN();
