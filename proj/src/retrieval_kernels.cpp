// Term-at-a-time BM25 accumulation and top-k selection. The serial versions
// are the reference; the OpenMP versions must produce bit-identical scores, so
// each document still receives its term contributions in query-term order.

#include "retrieval_kernels.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace recheck::detail {

namespace {

constexpr std::size_t kParallelPostingsMin = 1 << 14;
constexpr std::size_t kParallelDocsMin = 1 << 14;

struct Better {
  std::span<const double> scores;
  std::span<const std::uint32_t> rank;
  bool operator()(std::uint32_t a, std::uint32_t b) const {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return rank[a] < rank[b];
  }
};

void keep_best(std::vector<std::uint32_t>& docs, std::size_t k, const Better& better) {
  if (docs.size() > k) {
    std::partial_sort(docs.begin(), docs.begin() + static_cast<std::ptrdiff_t>(k), docs.end(), better);
    docs.resize(k);
  } else {
    std::sort(docs.begin(), docs.end(), better);
  }
}

}  // namespace

void accumulate_serial(const SparseIndex& index, std::span<const QueryTerm> query,
                       std::span<double> scores) {
  std::fill(scores.begin(), scores.end(), 0.0);
  const double k1 = index.params().k1;
  for (const auto& q : query) {
    const auto postings = index.postings(q.term);
    if (postings.empty()) continue;
    const double idf = index.idf(q.term);
    for (const Posting& p : postings) {
      scores[p.doc] += bm25_term_weight(q.qtf, idf, p.tf, k1, index.length_norm(p.doc));
    }
  }
}

void accumulate_parallel(const SparseIndex& index, std::span<const QueryTerm> query,
                         std::span<double> scores) {
  std::size_t total = 0;
  for (const auto& q : query) total += index.postings(q.term).size();
  if (total < kParallelPostingsMin) {
    accumulate_serial(index, query, scores);
    return;
  }
  const double k1 = index.params().k1;
  const auto n = static_cast<std::int64_t>(scores.size());
#pragma omp parallel
  {
#pragma omp for schedule(static)
    for (std::int64_t d = 0; d < n; ++d) scores[d] = 0.0;
    for (const auto& q : query) {
      const auto postings = index.postings(q.term);
      const double idf = index.idf(q.term);
      const auto m = static_cast<std::int64_t>(postings.size());
      // Postings of one term hit distinct documents; the implicit barrier
      // keeps per-document accumulation in term order.
#pragma omp for schedule(static)
      for (std::int64_t i = 0; i < m; ++i) {
        const Posting& p = postings[i];
        scores[p.doc] += bm25_term_weight(q.qtf, idf, p.tf, k1, index.length_norm(p.doc));
      }
    }
  }
}

std::vector<std::uint32_t> top_k_serial(std::span<const double> scores, std::span<const std::uint32_t> rank,
                                        std::size_t k) {
  std::vector<std::uint32_t> docs;
  for (std::uint32_t d = 0; d < scores.size(); ++d) {
    if (scores[d] > 0.0) docs.push_back(d);
  }
  keep_best(docs, k, Better{scores, rank});
  return docs;
}

std::vector<std::uint32_t> top_k_parallel(std::span<const double> scores,
                                          std::span<const std::uint32_t> rank, std::size_t k) {
  if (scores.size() < kParallelDocsMin) return top_k_serial(scores, rank, k);
  const Better better{scores, rank};
  std::vector<std::uint32_t> merged;
  const auto n = static_cast<std::int64_t>(scores.size());
#pragma omp parallel
  {
    std::vector<std::uint32_t> local;
#pragma omp for schedule(static) nowait
    for (std::int64_t d = 0; d < n; ++d) {
      if (scores[d] > 0.0) local.push_back(static_cast<std::uint32_t>(d));
    }
    keep_best(local, k, better);
#pragma omp critical
    merged.insert(merged.end(), local.begin(), local.end());
  }
  keep_best(merged, k, better);
  return merged;
}

int max_threads() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

}  // namespace recheck::detail
