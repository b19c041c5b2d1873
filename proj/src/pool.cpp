#include "recheck/pool.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "json.hpp"
#include "recheck/errors.hpp"
#include "retrieval_kernels.hpp"

namespace recheck {

namespace {

bool is_letter(unsigned char c) { return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || c >= 0x80; }
bool is_digit(unsigned char c) { return c >= '0' && c <= '9'; }
bool is_operator(unsigned char c) {
  switch (c) {
    case '+': case '-': case '*': case '/': case '=': case '^':
    case '<': case '>': case '!': case '|': case '%':
      return true;
    default:
      return false;
  }
}
char to_lower(unsigned char c) { return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : static_cast<char>(c); }

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  const std::size_t n = text.size();
  std::size_t i = 0;
  while (i < n) {
    const auto c = static_cast<unsigned char>(text[i]);
    if (is_letter(c)) {
      std::string word;
      while (i < n && is_letter(static_cast<unsigned char>(text[i]))) word.push_back(to_lower(text[i++]));
      tokens.push_back(std::move(word));
    } else if (is_digit(c)) {
      std::string number;
      while (i < n) {
        const auto d = static_cast<unsigned char>(text[i]);
        if (is_digit(d)) {
          number.push_back(text[i++]);
        } else if (d == '.' && i + 1 < n && is_digit(static_cast<unsigned char>(text[i + 1]))) {
          number.push_back(text[i++]);
        } else {
          break;
        }
      }
      tokens.push_back(std::move(number));
    } else if (is_operator(c)) {
      const bool word_hyphen = c == '-' && i > 0 && i + 1 < n &&
                               is_letter(static_cast<unsigned char>(text[i - 1])) &&
                               is_letter(static_cast<unsigned char>(text[i + 1]));
      if (!word_hyphen) tokens.emplace_back(1, static_cast<char>(c));
      ++i;
    } else {
      ++i;
    }
  }
  return tokens;
}

double bm25_idf(std::size_t num_docs, std::size_t df) {
  const double n = static_cast<double>(num_docs);
  const double f = static_cast<double>(df);
  return std::log(1.0 + (n - f + 0.5) / (f + 0.5));
}

double bm25_length_norm(double k1, double b, double doc_len, double avgdl) {
  return k1 * (1.0 - b + b * (doc_len / avgdl));
}

double bm25_term_weight(double qtf, double idf, double tf, double k1, double length_norm) {
  return qtf * idf * (tf * (k1 + 1.0)) / (tf + length_norm);
}

SparseIndex SparseIndex::build(std::span<const std::string> documents, Bm25Params params) {
  SparseIndex index;
  index.params_ = params;
  index.doc_len_.reserve(documents.size());
  std::uint64_t total = 0;
  for (std::uint32_t d = 0; d < documents.size(); ++d) {
    std::map<std::string, std::uint32_t> counts;
    const auto tokens = tokenize(documents[d]);
    for (const auto& t : tokens) ++counts[t];
    for (auto& [term, tf] : counts) index.terms_[term].postings.push_back({d, tf});
    index.doc_len_.push_back(static_cast<std::uint32_t>(tokens.size()));
    total += tokens.size();
  }
  const std::size_t n = documents.size();
  index.avgdl_ = n == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(n);
  index.norm_.reserve(n);
  for (auto len : index.doc_len_) {
    // An all-empty corpus has avgdl 0; no term can match, so the norm is moot.
    index.norm_.push_back(index.avgdl_ > 0.0 ? bm25_length_norm(params.k1, params.b, len, index.avgdl_)
                                             : params.k1);
  }
  for (auto& [term, entry] : index.terms_) entry.idf = bm25_idf(n, entry.postings.size());
  return index;
}

std::uint32_t SparseIndex::df(std::string_view term) const {
  return static_cast<std::uint32_t>(postings(term).size());
}

double SparseIndex::idf(std::string_view term) const {
  auto it = terms_.find(std::string(term));
  return it == terms_.end() ? 0.0 : it->second.idf;
}

std::span<const Posting> SparseIndex::postings(std::string_view term) const {
  auto it = terms_.find(std::string(term));
  if (it == terms_.end()) return {};
  return it->second.postings;
}

std::vector<QueryTerm> make_query(std::string_view text) {
  std::map<std::string, std::uint32_t> counts;
  for (auto& t : tokenize(text)) ++counts[std::move(t)];
  std::vector<QueryTerm> q;
  q.reserve(counts.size());
  for (auto& [term, n] : counts) q.push_back({term, n});
  return q;
}

ExperiencePool ExperiencePool::build(std::vector<ExperienceUnit> units, Bm25Params params) {
  if (units.empty()) throw EmptyPool("cannot build a pool from zero units");
  std::set<std::string_view> ids;
  std::size_t unnecessary = 0;
  for (const auto& u : units) {
    if (u.context.empty()) throw Error("unit " + u.id + " has an empty context");
    if (!ids.insert(u.id).second) throw Error("duplicate unit id " + u.id);
    if (u.label == Label::unnecessary) ++unnecessary;
  }
  ExperiencePool pool;
  std::vector<std::string> docs;
  docs.reserve(units.size());
  for (const auto& u : units) docs.push_back(u.context);
  pool.index_ = SparseIndex::build(docs, params);
  pool.stats_ = {units.size(), static_cast<double>(unnecessary) / static_cast<double>(units.size())};

  std::vector<std::uint32_t> order(units.size());
  std::iota(order.begin(), order.end(), 0u);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return units[a].id < units[b].id; });
  pool.id_rank_.resize(units.size());
  for (std::uint32_t r = 0; r < order.size(); ++r) pool.id_rank_[order[r]] = r;
  pool.units_ = std::move(units);
  return pool;
}

std::vector<double> ExperiencePool::score_all(std::span<const QueryTerm> query, Kernel kernel) const {
  std::vector<double> scores(units_.size());
  if (kernel == Kernel::serial) {
    detail::accumulate_serial(index_, query, scores);
  } else {
    detail::accumulate_parallel(index_, query, scores);
  }
  return scores;
}

RetrievalResult ExperiencePool::retrieve(std::string_view query, int k, Kernel kernel) const {
  if (units_.empty()) throw EmptyPool("pool has no units");
  if (k < 1) throw std::invalid_argument("k must be at least 1");
  const auto terms = make_query(query);
  const auto scores = score_all(terms, kernel);
  const auto top = kernel == Kernel::serial ? detail::top_k_serial(scores, id_rank_, k)
                                            : detail::top_k_parallel(scores, id_rank_, k);
  RetrievalResult r;
  r.k_requested = k;
  r.hits.reserve(top.size());
  for (auto d : top) r.hits.push_back({units_[d].id, scores[d], units_[d].label, d});
  r.k_returned = static_cast<int>(r.hits.size());
  return r;
}

std::vector<RetrievalResult> ExperiencePool::retrieve_batch(std::span<const std::string> queries,
                                                            int k) const {
  std::vector<RetrievalResult> out(queries.size());
  const auto n = static_cast<std::int64_t>(queries.size());
#pragma omp parallel for schedule(dynamic)
  for (std::int64_t i = 0; i < n; ++i) out[i] = retrieve(queries[i], k, Kernel::serial);
  return out;
}

NecessityEstimate estimate_necessity(const RetrievalResult& hits, double tau, int min_evidence, bool strict) {
  NecessityEstimate e;
  e.tau = tau;
  e.k_used = hits.k_returned;
  if (hits.k_returned <= 0) return e;
  int unnecessary = 0;
  for (int j = 0; j < hits.k_returned; ++j) {
    if (hits.hits[j].label == Label::unnecessary) ++unnecessary;
  }
  e.p_unnec = static_cast<double>(unnecessary) / static_cast<double>(hits.k_returned);
  const bool over = strict ? e.p_unnec > tau : e.p_unnec >= tau;
  e.suppress = hits.k_returned >= min_evidence && over;
  return e;
}

// --- files -------------------------------------------------------------------

namespace {

using ojson = nlohmann::ordered_json;

ojson unit_to_json(const ExperienceUnit& u) {
  return ojson{{"id", u.id},
               {"context", u.context},
               {"label", static_cast<int>(u.label)},
               {"source",
                {{"problem_id", u.source.problem_id},
                 {"model", u.source.model},
                 {"anchor", {u.source.anchor.step, u.source.anchor.sentence}}}},
               {"annotator", u.annotator}};
}

ExperienceUnit unit_from_json(const nlohmann::json& j, std::size_t line) {
  auto need = [&](const char* key) -> const nlohmann::json& {
    if (!j.contains(key)) throw MalformedRecord(line, std::string("missing \"") + key + "\"");
    return j.at(key);
  };
  ExperienceUnit u;
  const auto& id = need("id");
  const auto& ctx = need("context");
  const auto& label = need("label");
  if (!id.is_string() || !ctx.is_string()) throw MalformedRecord(line, "id and context must be strings");
  if (!label.is_number_integer() || (label.get<int>() != 0 && label.get<int>() != 1)) {
    throw MalformedRecord(line, "label must be 0 or 1");
  }
  u.id = id.get<std::string>();
  u.context = ctx.get<std::string>();
  if (u.context.empty()) throw MalformedRecord(line, "empty context");
  u.label = static_cast<Label>(label.get<int>());
  if (j.contains("source")) {
    const auto& s = j["source"];
    if (!s.is_object()) throw MalformedRecord(line, "source must be an object");
    u.source.problem_id = s.value("problem_id", "");
    u.source.model = s.value("model", "");
    if (s.contains("anchor")) {
      const auto& a = s["anchor"];
      if (!a.is_array() || a.size() != 2 || !a[0].is_number_integer() || !a[1].is_number_integer()) {
        throw MalformedRecord(line, "anchor must be [step, sentence]");
      }
      u.source.anchor = {a[0].get<int>(), a[1].get<int>()};
    }
  }
  u.annotator = j.value("annotator", "");
  return u;
}

nlohmann::json parse_line(const std::string& line, std::size_t lineno) {
  try {
    auto j = nlohmann::json::parse(line);
    if (!j.is_object()) throw MalformedRecord(lineno, "expected a JSON object");
    return j;
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedRecord(lineno, e.what());
  }
}

}  // namespace

void write_pool(const std::filesystem::path& path, const ExperiencePool& pool) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write pool file " + path.string());
  const ojson header{{"format", kPoolFormat},
                     {"k1", pool.params().k1},
                     {"b", pool.params().b},
                     {"n", pool.stats().n},
                     {"unnecessary_rate", pool.stats().unnecessary_rate}};
  out << header.dump() << '\n';
  for (const auto& u : pool.units()) out << unit_to_json(u).dump() << '\n';
}

ExperiencePool read_pool(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open pool file " + path.string());
  std::string line;
  std::size_t lineno = 0;
  std::optional<nlohmann::json> header;
  std::vector<ExperienceUnit> units;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto j = parse_line(line, lineno);
    if (!header) {
      if (!j.contains("format") || !j["format"].is_string()) {
        throw MalformedRecord(lineno, "first record must be the pool header");
      }
      if (j["format"].get<std::string>() != kPoolFormat) {
        throw VersionMismatch("pool format " + j["format"].get<std::string>() + ", expected " +
                              std::string(kPoolFormat));
      }
      for (const char* key : {"k1", "b", "n"}) {
        if (!j.contains(key) || !j[key].is_number()) {
          throw MalformedRecord(lineno, std::string("header missing numeric \"") + key + "\"");
        }
      }
      header = std::move(j);
      continue;
    }
    units.push_back(unit_from_json(j, lineno));
  }
  if (!header) throw MalformedRecord(lineno, "empty pool file");
  const auto declared = (*header)["n"].get<std::size_t>();
  if (declared != units.size()) {
    throw MalformedRecord(1, "header declares n=" + std::to_string(declared) + " but file holds " +
                                 std::to_string(units.size()) + " units");
  }
  auto pool = ExperiencePool::build(std::move(units), Bm25Params{(*header)["k1"].get<double>(), (*header)["b"].get<double>()});
  if (header->contains("unnecessary_rate") &&
      std::abs((*header)["unnecessary_rate"].get<double>() - pool.stats().unnecessary_rate) > 1e-9) {
    throw MalformedRecord(1, "header unnecessary_rate does not match the units");
  }
  return pool;
}

void write_units(const std::filesystem::path& path, std::span<const ExperienceUnit> units) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write units file " + path.string());
  for (const auto& u : units) out << unit_to_json(u).dump() << '\n';
}

std::vector<ExperienceUnit> read_units(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open units file " + path.string());
  std::vector<ExperienceUnit> units;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    units.push_back(unit_from_json(parse_line(line, lineno), lineno));
  }
  return units;
}

}  // namespace recheck
