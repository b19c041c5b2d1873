#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "recheck/pool.hpp"

namespace recheck::detail {

void accumulate_serial(const SparseIndex& index, std::span<const QueryTerm> query, std::span<double> scores);
void accumulate_parallel(const SparseIndex& index, std::span<const QueryTerm> query,
                         std::span<double> scores);

/// Documents with a positive score, best first; ties by ascending rank.
std::vector<std::uint32_t> top_k_serial(std::span<const double> scores, std::span<const std::uint32_t> rank,
                                        std::size_t k);
std::vector<std::uint32_t> top_k_parallel(std::span<const double> scores,
                                          std::span<const std::uint32_t> rank, std::size_t k);

int max_threads();

}  // namespace recheck::detail
