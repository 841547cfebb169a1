#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <span>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "trix/errors.hpp"
#include "trix/kg.hpp"
#include "trix/model.hpp"

namespace trix {

/**
 * Expected rank of `target` under uniformly random tie-breaking:
 * 1 + #{s_i > s_t} + 0.5 #{s_i = s_t}, skipping the target and every index
 * in `excluded`.
 */
template <class T>
double rank_of(std::span<const T> scores, std::size_t target, std::span<const id_t> excluded = {}) {
  if (target >= scores.size()) throw bounds_error("rank target out of range");
  std::vector<bool> skip(scores.size(), false);
  for (id_t i : excluded) {
    if (i >= scores.size()) throw bounds_error("excluded candidate out of range");
    if (i == target) throw validation_error("rank target is masked");
    skip[i] = true;
  }
  const T s = scores[target];
  std::size_t greater = 0, equal = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (i == target || skip[i]) continue;
    if (scores[i] > s) ++greater;
    else if (scores[i] == s) ++equal;
  }
  return 1.0 + static_cast<double>(greater) + 0.5 * static_cast<double>(equal);
}

struct RankMetrics {
  std::size_t count = 0;
  double mrr = 0.0;
  double hits1 = 0.0;
  double hits3 = 0.0;
  double hits10 = 0.0;
};

inline RankMetrics summarize(std::span<const double> ranks) {
  RankMetrics m;
  m.count = ranks.size();
  if (ranks.empty()) return m;
  for (double r : ranks) {
    m.mrr += 1.0 / r;
    m.hits1 += r <= 1.0 ? 1.0 : 0.0;
    m.hits3 += r <= 3.0 ? 1.0 : 0.0;
    m.hits10 += r <= 10.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(ranks.size());
  m.mrr /= n;
  m.hits1 /= n;
  m.hits3 /= n;
  m.hits10 /= n;
  return m;
}

enum class Direction : std::uint8_t { TAIL, HEAD, RELATION };

inline const char* to_string(Direction d) {
  switch (d) {
    case Direction::TAIL: return "tail";
    case Direction::HEAD: return "head";
    case Direction::RELATION: return "relation";
  }
  return "?";
}

struct RankRecord {
  Triple query;
  Direction direction = Direction::TAIL;
  double rank_raw = 0.0;
  double rank_filtered = 0.0;
};

struct RankingReport {
  Task task = Task::ENTITY;
  std::vector<RankRecord> records;
  /// Keyed "raw/tail", "filtered/mean", "raw/relation", ...
  std::map<std::string, RankMetrics> metrics;
  /// Queries left out (relation task: head == tail has no relation query).
  std::size_t skipped = 0;

  const RankMetrics& at(const std::string& key) const {
    auto it = metrics.find(key);
    if (it == metrics.end()) throw config_error("no metric group '" + key + "'");
    return it->second;
  }
};

/**
 * Known-true answers used for filtered ranking. Triples are inserted with
 * their inverses, so head queries are answered through the inverse relation.
 */
class FilterIndex {
 public:
  FilterIndex() = default;

  explicit FilterIndex(const KnowledgeGraph& g) {
    for (const Triple& t : g.triples()) insert_one(t, g.num_relations_base());
  }

  /// Adds base-relation triples (and their inverses) over the graph's ids.
  void add_base(std::span<const Triple> triples, id_t num_base) {
    for (const Triple& t : triples) {
      insert_one(t, num_base);
      insert_one({t.tail, t.relation + num_base, t.head}, num_base);
    }
  }

  /// Tails t with (h, r, t) known; sorted.
  std::span<const id_t> tails(id_t h, id_t r) const { return find(tails_, key(h, r)); }
  /// Base relations r with (h, r, t) known; sorted.
  std::span<const id_t> relations(id_t h, id_t t) const { return find(relations_, key(h, t)); }

  void finalize() {
    for (auto* m : {&tails_, &relations_})
      for (auto& [k, v] : *m) {
        std::sort(v.begin(), v.end());
        v.erase(std::unique(v.begin(), v.end()), v.end());
      }
  }

 private:
  static std::uint64_t key(id_t a, id_t b) { return (static_cast<std::uint64_t>(a) << 32) | b; }

  static std::span<const id_t> find(const std::unordered_map<std::uint64_t, std::vector<id_t>>& m,
                                    std::uint64_t k) {
    auto it = m.find(k);
    return it == m.end() ? std::span<const id_t>() : std::span<const id_t>(it->second);
  }

  void insert_one(const Triple& t, id_t num_base) {
    tails_[key(t.head, t.relation)].push_back(t.tail);
    if (t.relation < num_base) relations_[key(t.head, t.tail)].push_back(t.relation);
  }

  std::unordered_map<std::uint64_t, std::vector<id_t>> tails_;
  std::unordered_map<std::uint64_t, std::vector<id_t>> relations_;
};

/// Filter over a graph's observed triples plus every listed query set.
inline FilterIndex make_filter(const KnowledgeGraph& g, std::initializer_list<std::span<const Triple>> query_sets) {
  FilterIndex f(g);
  for (auto qs : query_sets) f.add_base(qs, g.num_relations_base());
  f.finalize();
  return f;
}

struct EvalOptions {
  /// Rank only tail predictions.
  bool tail_only = false;
  /// Evaluate only the first N queries (0 = all).
  std::size_t max_queries = 0;
  std::size_t threads = 1;
};

namespace detail {

inline std::vector<id_t> without(std::span<const id_t> known, id_t target) {
  std::vector<id_t> out;
  out.reserve(known.size());
  for (id_t k : known)
    if (k != target) out.push_back(k);
  return out;
}

template <class Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(threads);
  for (std::size_t w = 0; w < threads; ++w)
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += threads) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

inline void validate_queries(const KnowledgeGraph& g, std::span<const Triple> queries) {
  for (const Triple& q : queries)
    if (q.head >= g.num_entities() || q.tail >= g.num_entities() || q.relation >= g.num_relations_base())
      throw bounds_error("query id out of range for the evaluation graph");
}

inline void aggregate(RankingReport& rep, std::initializer_list<std::pair<std::string, std::vector<Direction>>> groups) {
  for (const auto& [name, dirs] : groups) {
    std::vector<double> raw, filtered;
    for (const auto& r : rep.records)
      if (std::find(dirs.begin(), dirs.end(), r.direction) != dirs.end()) {
        raw.push_back(r.rank_raw);
        filtered.push_back(r.rank_filtered);
      }
    if (raw.empty()) continue;
    rep.metrics["raw/" + name] = summarize(raw);
    rep.metrics["filtered/" + name] = summarize(filtered);
  }
}

}  // namespace detail

/**
 * Ranks the true tail of every query against all entities, and (unless
 * tail-only) the true head through the inverse relation. "mean" groups pool
 * both directions.
 */
template <class T>
RankingReport evaluate_entity(const ModelParams<T>& params, const GraphContext<T>& ctx,
                              std::span<const Triple> queries, const FilterIndex& filter,
                              const EvalOptions& opt = {}) {
  const KnowledgeGraph& g = ctx.graph();
  detail::validate_queries(g, queries);
  if (opt.max_queries && queries.size() > opt.max_queries) queries = queries.first(opt.max_queries);
  const std::size_t per = opt.tail_only ? 1 : 2;
  RankingReport rep;
  rep.task = Task::ENTITY;
  rep.records.resize(queries.size() * per);
  detail::parallel_for(rep.records.size(), opt.threads, [&](std::size_t k) {
    const Triple& q = queries[k / per];
    const bool head = (k % per) == 1;
    const Triple asked = head ? g.inverse(q) : q;
    const auto scores = score_entities(params, ctx, asked.head, asked.relation);
    RankRecord& rec = rep.records[k];
    rec.query = q;
    rec.direction = head ? Direction::HEAD : Direction::TAIL;
    rec.rank_raw = rank_of<T>(scores, asked.tail);
    const auto mask = detail::without(filter.tails(asked.head, asked.relation), asked.tail);
    rec.rank_filtered = rank_of<T>(scores, asked.tail, mask);
  });
  detail::aggregate(rep, {{"tail", {Direction::TAIL}},
                          {"head", {Direction::HEAD}},
                          {"mean", {Direction::TAIL, Direction::HEAD}}});
  return rep;
}

/// Ranks the true relation of every query among the base relations, one pass per query. Queries with head == tail are skipped.
template <class T>
RankingReport evaluate_relation(const ModelParams<T>& params, const GraphContext<T>& ctx,
                                std::span<const Triple> queries, const FilterIndex& filter,
                                const EvalOptions& opt = {}) {
  const KnowledgeGraph& g = ctx.graph();
  detail::validate_queries(g, queries);
  if (opt.max_queries && queries.size() > opt.max_queries) queries = queries.first(opt.max_queries);
  RankingReport rep;
  rep.task = Task::RELATION;
  std::vector<Triple> kept;
  for (const Triple& q : queries)
    if (q.head != q.tail) kept.push_back(q);
  rep.skipped = queries.size() - kept.size();
  rep.records.resize(kept.size());
  detail::parallel_for(kept.size(), opt.threads, [&](std::size_t k) {
    const Triple& q = kept[k];
    const auto all = score_relations(params, ctx, q.head, q.tail);
    const std::span<const T> scores(all.data(), g.num_relations_base());
    RankRecord& rec = rep.records[k];
    rec.query = q;
    rec.direction = Direction::RELATION;
    rec.rank_raw = rank_of<T>(scores, q.relation);
    const auto mask = detail::without(filter.relations(q.head, q.tail), q.relation);
    rec.rank_filtered = rank_of<T>(scores, q.relation, mask);
  });
  detail::aggregate(rep, {{"relation", {Direction::RELATION}}});
  return rep;
}

/// Writes one TSV line per record: head, relation, tail, direction, raw rank, filtered rank.
inline void write_rank_dump(const RankingReport& rep, const KnowledgeGraph& g, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot write '" + path.string() + "'");
  out << "head\trelation\ttail\tdirection\trank_raw\trank_filtered\n";
  for (const auto& r : rep.records)
    out << g.entity_names()[r.query.head] << '\t' << g.relation_names()[r.query.relation] << '\t'
        << g.entity_names()[r.query.tail] << '\t' << to_string(r.direction) << '\t' << r.rank_raw << '\t'
        << r.rank_filtered << '\n';
  if (!out) throw config_error("write failed for '" + path.string() + "'");
}

/**
 * Pairwise cosine similarity of the rows of `m`. The diagonal is 1; a zero
 * row has similarity 0 with every other row.
 */
template <class T>
std::vector<std::vector<double>> cosine_similarity(const ad::Tensor<T>& m) {
  const std::size_t n = m.rows(), d = m.cols();
  std::vector<double> norm(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) norm[i] += static_cast<double>(m(i, k)) * m(i, k);
    norm[i] = std::sqrt(norm[i]);
  }
  std::vector<std::vector<double>> out(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    out[i][i] = 1.0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (norm[i] == 0.0 || norm[j] == 0.0) continue;
      double dot = 0.0;
      for (std::size_t k = 0; k < d; ++k) dot += static_cast<double>(m(i, k)) * m(j, k);
      const double c = std::clamp(dot / (norm[i] * norm[j]), -1.0, 1.0);
      out[i][j] = out[j][i] = c;
    }
  }
  return out;
}

/**
 * Base-relation embeddings averaged over up to `samples` entity queries
 * (one per distinct (head, relation) pair, in triple order).
 */
template <class T>
ad::Tensor<T> mean_relation_embeddings(const ModelParams<T>& params, const GraphContext<T>& ctx,
                                       std::size_t samples) {
  const KnowledgeGraph& g = ctx.graph();
  const std::size_t d = params.config.hidden_dim;
  ad::Tensor<double> acc({g.num_relations_base(), d});
  std::size_t used = 0;
  Triple last{kNoEntity, kNoEntity, 0};
  for (const Triple& t : g.triples()) {
    if (used >= samples) break;
    if (t.relation >= g.num_relations_base() || (t.head == last.head && t.relation == last.relation)) continue;
    last = t;
    const auto z = relation_embeddings(params, ctx, t.head, t.relation);
    for (std::size_t r = 0; r < g.num_relations_base(); ++r)
      for (std::size_t k = 0; k < d; ++k) acc(r, k) += z(r, k);
    ++used;
  }
  if (used)
    for (auto& v : acc.data()) v /= static_cast<double>(used);
  return acc.cast<T>();
}

/// CSV with a header row of relation names, then one row per relation.
inline void write_similarity_csv(const std::vector<std::vector<double>>& sim, const std::vector<std::string>& names,
                                 const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw config_error("cannot write '" + path.string() + "'");
  auto quoted = [](const std::string& s) {
    std::string q = "\"";
    for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
    return q + "\"";
  };
  out << "relation";
  for (std::size_t j = 0; j < sim.size(); ++j) out << ',' << quoted(names[j]);
  out << '\n';
  out.precision(9);
  for (std::size_t i = 0; i < sim.size(); ++i) {
    out << quoted(names[i]);
    for (double v : sim[i]) out << ',' << v;
    out << '\n';
  }
  if (!out) throw config_error("write failed for '" + path.string() + "'");
}

template <class T>
void export_relation_similarity(const ModelParams<T>& params, const GraphContext<T>& ctx,
                                const std::filesystem::path& out, std::size_t samples = 64) {
  const auto sim = cosine_similarity(mean_relation_embeddings(params, ctx, samples));
  const auto& all = ctx.graph().relation_names();
  write_similarity_csv(sim, std::vector<std::string>(all.begin(), all.begin() + ctx.graph().num_relations_base()),
                       out);
}

}  // namespace trix
