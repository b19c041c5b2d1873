#pragma once

// Experience pool: labeled verification episodes, a BM25 index over their
// contexts, top-k retrieval and the unnecessary-vote estimate.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "recheck/trace.hpp"

namespace recheck {

enum class Label : int { necessary = 0, unnecessary = 1 };

struct UnitSource {
  std::string problem_id;
  std::string model;
  Anchor anchor;
};

struct ExperienceUnit {
  std::string id;
  std::string context;  // episode text before the activation
  Label label = Label::unnecessary;
  UnitSource source;
  std::string annotator;
};

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Lowercased word runs, number runs ("3.14" stays whole) and single operator
/// symbols (+ - * / = ^ < > ! | %). Other punctuation separates tokens; a
/// hyphen between letters is punctuation.
std::vector<std::string> tokenize(std::string_view text);

struct Posting {
  std::uint32_t doc = 0;
  std::uint32_t tf = 0;
};

/// Inverted index with the document-length statistics BM25 needs.
class SparseIndex {
 public:
  static SparseIndex build(std::span<const std::string> documents, Bm25Params params);

  std::size_t num_docs() const noexcept { return doc_len_.size(); }
  double avgdl() const noexcept { return avgdl_; }
  std::uint32_t doc_length(std::uint32_t doc) const { return doc_len_[doc]; }
  /// k1 * (1 - b + b * dl / avgdl), precomputed per document.
  double length_norm(std::uint32_t doc) const { return norm_[doc]; }
  std::uint32_t df(std::string_view term) const;
  double idf(std::string_view term) const;
  std::span<const Posting> postings(std::string_view term) const;
  std::size_t vocabulary_size() const noexcept { return terms_.size(); }
  const Bm25Params& params() const noexcept { return params_; }

 private:
  struct TermEntry {
    std::vector<Posting> postings;
    double idf = 0.0;
  };
  std::unordered_map<std::string, TermEntry> terms_;
  std::vector<std::uint32_t> doc_len_;
  std::vector<double> norm_;
  double avgdl_ = 0.0;
  Bm25Params params_;
};

/// Shared by the kernels and the test oracle so both evaluate the same
/// floating-point expression.
double bm25_idf(std::size_t num_docs, std::size_t df);
double bm25_term_weight(double qtf, double idf, double tf, double k1, double length_norm);
double bm25_length_norm(double k1, double b, double doc_len, double avgdl);

struct QueryTerm {
  std::string term;
  std::uint32_t qtf = 0;
};

/// Unique query terms in lexicographic order with their multiplicity.
std::vector<QueryTerm> make_query(std::string_view text);

struct Hit {
  std::string unit_id;
  double score = 0.0;
  Label label = Label::unnecessary;
  std::uint32_t unit_index = 0;
};

struct RetrievalResult {
  std::vector<Hit> hits;  // score descending, ties by ascending unit id
  int k_requested = 0;
  int k_returned = 0;
};

struct NecessityEstimate {
  double p_unnec = 0.0;
  int k_used = 0;
  bool suppress = false;
  double tau = 0.0;
};

struct PoolStats {
  std::size_t n = 0;
  double unnecessary_rate = 0.0;
};

enum class Kernel { serial, parallel };

/// Immutable after build; retrieval is read-only and safe to call from many
/// threads at once.
class ExperiencePool {
 public:
  static ExperiencePool build(std::vector<ExperienceUnit> units, Bm25Params params = {});

  RetrievalResult retrieve(std::string_view query, int k, Kernel kernel = Kernel::parallel) const;
  RetrievalResult retrieve(const ContextWindow& query, int k) const { return retrieve(query.text, k); }
  std::vector<RetrievalResult> retrieve_batch(std::span<const std::string> queries, int k) const;

  /// BM25 score of every unit for the query (index order).
  std::vector<double> score_all(std::span<const QueryTerm> query, Kernel kernel) const;

  const std::vector<ExperienceUnit>& units() const noexcept { return units_; }
  const SparseIndex& index() const noexcept { return index_; }
  const PoolStats& stats() const noexcept { return stats_; }
  const Bm25Params& params() const noexcept { return index_.params(); }
  /// Position of each unit in ascending-id order; the retrieval tie-break.
  std::span<const std::uint32_t> id_rank() const noexcept { return id_rank_; }

 private:
  std::vector<ExperienceUnit> units_;
  SparseIndex index_;
  PoolStats stats_;
  std::vector<std::uint32_t> id_rank_;
};

/// Fraction of label-1 hits over the hits actually returned. Suppression
/// needs at least `min_evidence` hits and p_unnec >= tau (or > tau with
/// `strict`). No hits: p_unnec 0, no suppression.
NecessityEstimate estimate_necessity(const RetrievalResult& hits, double tau, int min_evidence,
                                     bool strict = false);

inline constexpr std::string_view kPoolFormat = "recheck-pool/1";

void write_pool(const std::filesystem::path& path, const ExperiencePool& pool);
ExperiencePool read_pool(const std::filesystem::path& path);

void write_units(const std::filesystem::path& path, std::span<const ExperienceUnit> units);
std::vector<ExperienceUnit> read_units(const std::filesystem::path& path);

}  // namespace recheck
