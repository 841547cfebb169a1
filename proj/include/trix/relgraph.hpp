#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "trix/errors.hpp"
#include "trix/kg.hpp"

namespace trix {

/// Which endpoint of each relation the shared entity is: (receiver, sender).
enum class Role : std::uint8_t { HH = 0, TT = 1, HT = 2, TH = 3 };
inline constexpr std::size_t kNumRoles = 4;

inline const char* to_string(Role r) {
  switch (r) {
    case Role::HH: return "hh";
    case Role::TT: return "tt";
    case Role::HT: return "ht";
    case Role::TH: return "th";
  }
  return "?";
}

/**
 * TRIX keeps the shared entity on every relation-graph edge. ULTRA collapses
 * the entity dimension into per-(pair, role) totals. INGRAM collapses as
 * ULTRA does and additionally keeps only the head-head and tail-tail roles.
 */
enum class RelGraphMode : std::uint8_t { TRIX, ULTRA, INGRAM };

/// Restrict to base relations, or use the inverse-augmented space.
enum class RelationSpace : std::uint8_t { AUGMENTED, BASE };

inline constexpr id_t kNoEntity = std::numeric_limits<id_t>::max();

/**
 * Sparse E_h / E_t: per entity, the (relation, count) pairs where the entity
 * is head (resp. tail). Rows are sorted by relation id.
 */
class DegreeMatrices {
 public:
  struct Entry {
    id_t relation;
    std::uint32_t count;
    friend bool operator==(const Entry&, const Entry&) = default;
  };

  DegreeMatrices() = default;

  id_t num_entities() const noexcept { return num_entities_; }
  id_t num_relations() const noexcept { return num_relations_; }

  std::span<const Entry> head_row(id_t v) const {
    return std::span<const Entry>(head_).subspan(head_off_[v], head_off_[v + 1] - head_off_[v]);
  }
  std::span<const Entry> tail_row(id_t v) const {
    return std::span<const Entry>(tail_).subspan(tail_off_[v], tail_off_[v + 1] - tail_off_[v]);
  }

  std::uint32_t head(id_t v, id_t r) const { return lookup(head_row(v), r); }
  std::uint32_t tail(id_t v, id_t r) const { return lookup(tail_row(v), r); }

  std::uint64_t head_total() const { return total(head_); }
  std::uint64_t tail_total() const { return total(tail_); }

  /// Nonzero entries as an ordered (entity, relation) -> count map, for tests and dumps.
  std::map<std::pair<id_t, id_t>, std::uint32_t> head_map() const { return as_map(head_, head_off_); }
  std::map<std::pair<id_t, id_t>, std::uint32_t> tail_map() const { return as_map(tail_, tail_off_); }

  static std::uint32_t lookup(std::span<const Entry> row, id_t r) {
    auto it = std::lower_bound(row.begin(), row.end(), r,
                               [](const Entry& e, id_t rel) { return e.relation < rel; });
    return it != row.end() && it->relation == r ? it->count : 0;
  }

 private:
  friend DegreeMatrices build_degree_matrices(const KnowledgeGraph&, RelationSpace);

  static std::uint64_t total(const std::vector<Entry>& entries) {
    std::uint64_t s = 0;
    for (const auto& e : entries) s += e.count;
    return s;
  }

  std::map<std::pair<id_t, id_t>, std::uint32_t> as_map(const std::vector<Entry>& entries,
                                                        const std::vector<std::size_t>& off) const {
    std::map<std::pair<id_t, id_t>, std::uint32_t> out;
    for (id_t v = 0; v < num_entities_; ++v)
      for (std::size_t i = off[v]; i < off[v + 1]; ++i)
        out[{v, entries[i].relation}] = entries[i].count;
    return out;
  }

  id_t num_entities_ = 0;
  id_t num_relations_ = 0;
  std::vector<std::size_t> head_off_{0}, tail_off_{0};
  std::vector<Entry> head_, tail_;
};

/**
 * Counts, per entity and relation, how often the entity is the head (tail) of
 * a triple with that relation. With RelationSpace::BASE only base-relation
 * triples are counted.
 */
inline DegreeMatrices build_degree_matrices(const KnowledgeGraph& g,
                                            RelationSpace space = RelationSpace::AUGMENTED) {
  DegreeMatrices m;
  m.num_entities_ = g.num_entities();
  m.num_relations_ = space == RelationSpace::BASE ? g.num_relations_base() : g.num_relations();
  std::vector<std::map<id_t, std::uint32_t>> heads(g.num_entities()), tails(g.num_entities());
  for (const Triple& t : g.triples()) {
    if (t.relation >= m.num_relations_) continue;
    ++heads[t.head][t.relation];
    ++tails[t.tail][t.relation];
  }
  auto flatten = [](const auto& rows, std::vector<std::size_t>& off,
                    std::vector<DegreeMatrices::Entry>& out) {
    off.assign(rows.size() + 1, 0);
    for (std::size_t v = 0; v < rows.size(); ++v) {
      for (const auto& [r, c] : rows[v]) out.push_back({r, c});
      off[v + 1] = out.size();
    }
  };
  flatten(heads, m.head_off_, m.head_);
  flatten(tails, m.tail_off_, m.tail_);
  return m;
}

struct RelEdge {
  id_t src_rel = 0;
  id_t dst_rel = 0;
  id_t via_entity = kNoEntity;
  Role role = Role::HH;
  /// Degree product (TRIX) or its sum over shared entities (collapsed modes).
  std::uint64_t count = 0;
  /// Number of shared entities folded into this edge; 1 for TRIX edges.
  std::uint32_t support = 1;
  /// Sum of log(1 + count) over folded entities.
  double log_weight = 0.0;

  friend bool operator==(const RelEdge&, const RelEdge&) = default;
};

struct RelationGraphStats {
  /// Max over entities of max(#distinct head relations, #distinct tail relations).
  std::uint32_t alpha = 0;
  std::uint64_t edge_count = 0;
  std::array<std::uint64_t, kNumRoles> per_role_counts{};
  std::uint64_t count_sum = 0;
  /// 4 |V| alpha^2.
  std::uint64_t bound = 0;
};

/// How message weights are derived from relation-graph edges.
enum class MessageWeighting : std::uint8_t { BINARY, LOG_COUNT };

/**
 * Relation adjacency structure. Edges are sorted by (dst, role, src, via),
 * so the incident edges of every receiving relation are contiguous.
 */
class RelationGraph {
 public:
  RelationGraph() = default;

  RelGraphMode mode() const noexcept { return mode_; }
  RelationSpace space() const noexcept { return space_; }
  id_t num_rel_nodes() const noexcept { return num_rel_nodes_; }
  id_t num_entities() const noexcept { return degrees_.num_entities(); }
  std::span<const RelEdge> edges() const noexcept { return edges_; }
  std::size_t num_edges() const noexcept { return edges_.size(); }
  const DegreeMatrices& degrees() const noexcept { return degrees_; }

  /// Edges received by relation `r`.
  std::span<const RelEdge> incoming(id_t r) const {
    return std::span<const RelEdge>(edges_).subspan(dst_off_[r], dst_off_[r + 1] - dst_off_[r]);
  }

  std::span<const id_t> dst_index() const noexcept { return dst_; }
  std::span<const id_t> src_index() const noexcept { return src_; }
  std::span<const id_t> via_index() const noexcept { return via_; }
  std::span<const id_t> role_index() const noexcept { return role_; }

  std::span<const double> weights(MessageWeighting w) const noexcept {
    return w == MessageWeighting::BINARY ? binary_w_ : log_w_;
  }

  /**
   * Message weights with the listed triples removed from the underlying graph
   * (counts recomputed for every entity those triples touch).
   */
  std::vector<double> weights_without(const KnowledgeGraph& g, std::span<const std::size_t> removed,
                                      MessageWeighting w) const;

 private:
  friend RelationGraph build_relation_graph(const KnowledgeGraph&, RelGraphMode, RelationSpace);

  void finalize();

  RelGraphMode mode_ = RelGraphMode::TRIX;
  RelationSpace space_ = RelationSpace::AUGMENTED;
  id_t num_rel_nodes_ = 0;
  DegreeMatrices degrees_;
  std::vector<RelEdge> edges_;
  std::vector<std::size_t> dst_off_{0};
  std::vector<id_t> dst_, src_, via_, role_;
  std::vector<double> binary_w_, log_w_;
  // TRIX: edge ids grouped by via entity. Collapsed: (dst, role, src) -> edge id.
  std::vector<std::size_t> via_off_;
  std::vector<std::uint32_t> via_edges_;
  std::unordered_map<std::uint64_t, std::uint32_t> pair_index_;
};

namespace detail {

inline bool role_kept(RelGraphMode mode, Role role) {
  return mode != RelGraphMode::INGRAM || role == Role::HH || role == Role::TT;
}

/// Calls fn(dst, src, role, count) for every nonzero degree product at one entity.
template <class Fn>
void for_each_role_pair(std::span<const DegreeMatrices::Entry> head_row,
                        std::span<const DegreeMatrices::Entry> tail_row, Fn&& fn) {
  for (const auto& a : head_row)
    for (const auto& b : head_row) fn(a.relation, b.relation, Role::HH, a.count * std::uint64_t{b.count});
  for (const auto& a : tail_row)
    for (const auto& b : tail_row) fn(a.relation, b.relation, Role::TT, a.count * std::uint64_t{b.count});
  for (const auto& a : head_row)
    for (const auto& b : tail_row) fn(a.relation, b.relation, Role::HT, a.count * std::uint64_t{b.count});
  for (const auto& a : tail_row)
    for (const auto& b : head_row) fn(a.relation, b.relation, Role::TH, a.count * std::uint64_t{b.count});
}

inline std::uint64_t pair_key(id_t dst, Role role, id_t src, id_t n) {
  return (static_cast<std::uint64_t>(dst) * kNumRoles + static_cast<std::uint64_t>(role)) * n + src;
}

inline std::uint64_t role_product(std::span<const DegreeMatrices::Entry> head_row,
                                  std::span<const DegreeMatrices::Entry> tail_row, const RelEdge& e) {
  auto pick = [&](bool head_side, id_t r) -> std::uint64_t {
    return DegreeMatrices::lookup(head_side ? head_row : tail_row, r);
  };
  switch (e.role) {
    case Role::HH: return pick(true, e.dst_rel) * pick(true, e.src_rel);
    case Role::TT: return pick(false, e.dst_rel) * pick(false, e.src_rel);
    case Role::HT: return pick(true, e.dst_rel) * pick(false, e.src_rel);
    case Role::TH: return pick(false, e.dst_rel) * pick(true, e.src_rel);
  }
  return 0;
}

}  // namespace detail

inline void RelationGraph::finalize() {
  std::sort(edges_.begin(), edges_.end(), [](const RelEdge& a, const RelEdge& b) {
    if (a.dst_rel != b.dst_rel) return a.dst_rel < b.dst_rel;
    if (a.role != b.role) return a.role < b.role;
    if (a.src_rel != b.src_rel) return a.src_rel < b.src_rel;
    return a.via_entity < b.via_entity;
  });
  dst_off_.assign(static_cast<std::size_t>(num_rel_nodes_) + 1, 0);
  const std::size_t m = edges_.size();
  dst_.resize(m);
  src_.resize(m);
  via_.resize(m);
  role_.resize(m);
  binary_w_.resize(m);
  log_w_.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    const RelEdge& e = edges_[i];
    ++dst_off_[e.dst_rel + 1];
    dst_[i] = e.dst_rel;
    src_[i] = e.src_rel;
    via_[i] = e.via_entity;
    role_[i] = static_cast<id_t>(e.role);
    binary_w_[i] = static_cast<double>(e.support);
    log_w_[i] = e.log_weight;
  }
  for (std::size_t r = 0; r < num_rel_nodes_; ++r) dst_off_[r + 1] += dst_off_[r];

  if (mode_ == RelGraphMode::TRIX) {
    const id_t nv = degrees_.num_entities();
    via_off_.assign(static_cast<std::size_t>(nv) + 1, 0);
    for (const RelEdge& e : edges_) ++via_off_[e.via_entity + 1];
    for (std::size_t v = 0; v < nv; ++v) via_off_[v + 1] += via_off_[v];
    via_edges_.resize(m);
    std::vector<std::size_t> fill(via_off_.begin(), via_off_.end() - 1);
    for (std::size_t i = 0; i < m; ++i) via_edges_[fill[edges_[i].via_entity]++] = static_cast<std::uint32_t>(i);
  } else {
    pair_index_.reserve(m);
    for (std::size_t i = 0; i < m; ++i)
      pair_index_.emplace(detail::pair_key(edges_[i].dst_rel, edges_[i].role, edges_[i].src_rel,
                                           num_rel_nodes_),
                          static_cast<std::uint32_t>(i));
  }
}

/**
 * Builds the relation adjacency structure of `g`.
 *
 * For every entity v and relations (r_i, r_j), the four role products are
 * E_h[v,r_i]E_h[v,r_j] (hh), E_t E_t (tt), E_h[v,r_i]E_t[v,r_j] (ht) and
 * E_t[v,r_i]E_h[v,r_j] (th). An edge (dst = r_i, src = r_j) exists for each
 * nonzero product; self pairs r_i = r_j are kept.
 */
inline RelationGraph build_relation_graph(const KnowledgeGraph& g, RelGraphMode mode = RelGraphMode::TRIX,
                                          RelationSpace space = RelationSpace::AUGMENTED) {
  RelationGraph rg;
  rg.mode_ = mode;
  rg.space_ = space;
  rg.degrees_ = build_degree_matrices(g, space);
  rg.num_rel_nodes_ = rg.degrees_.num_relations();
  const id_t n = rg.num_rel_nodes_;

  if (mode == RelGraphMode::TRIX) {
    for (id_t v = 0; v < g.num_entities(); ++v) {
      detail::for_each_role_pair(rg.degrees_.head_row(v), rg.degrees_.tail_row(v),
                                 [&](id_t dst, id_t src, Role role, std::uint64_t c) {
                                   rg.edges_.push_back({src, dst, v, role, c, 1,
                                                        std::log1p(static_cast<double>(c))});
                                 });
    }
  } else {
    std::unordered_map<std::uint64_t, std::size_t> slot;
    for (id_t v = 0; v < g.num_entities(); ++v) {
      detail::for_each_role_pair(
          rg.degrees_.head_row(v), rg.degrees_.tail_row(v),
          [&](id_t dst, id_t src, Role role, std::uint64_t c) {
            if (!detail::role_kept(mode, role)) return;
            auto [it, fresh] = slot.emplace(detail::pair_key(dst, role, src, n), rg.edges_.size());
            if (fresh) rg.edges_.push_back({src, dst, kNoEntity, role, 0, 0, 0.0});
            RelEdge& e = rg.edges_[it->second];
            e.count += c;
            e.support += 1;
            e.log_weight += std::log1p(static_cast<double>(c));
          });
    }
  }
  rg.finalize();
  return rg;
}

inline std::vector<double> RelationGraph::weights_without(const KnowledgeGraph& g,
                                                          std::span<const std::size_t> removed,
                                                          MessageWeighting w) const {
  std::vector<double> out(weights(w).begin(), weights(w).end());
  if (removed.empty()) return out;
  auto weight_of = [w](std::uint64_t c) {
    return w == MessageWeighting::BINARY ? (c > 0 ? 1.0 : 0.0) : std::log1p(static_cast<double>(c));
  };

  // Adjusted degree rows for every entity touched by a removed triple.
  std::map<id_t, std::pair<std::vector<DegreeMatrices::Entry>, std::vector<DegreeMatrices::Entry>>> rows;
  auto row_for = [&](id_t v) -> auto& {
    auto it = rows.find(v);
    if (it == rows.end()) {
      auto h = degrees_.head_row(v);
      auto t = degrees_.tail_row(v);
      it = rows.emplace(v, std::make_pair(std::vector(h.begin(), h.end()),
                                          std::vector(t.begin(), t.end())))
               .first;
    }
    return it->second;
  };
  auto decrement = [](std::vector<DegreeMatrices::Entry>& row, id_t r) {
    for (auto& e : row)
      if (e.relation == r && e.count > 0) --e.count;
  };
  for (std::size_t idx : removed) {
    const Triple& t = g.triples()[idx];
    if (t.relation >= num_rel_nodes_) continue;
    decrement(row_for(t.head).first, t.relation);
    decrement(row_for(t.tail).second, t.relation);
  }

  for (auto& [v, adjusted] : rows) {
    auto& [head_new, tail_new] = adjusted;
    if (mode_ == RelGraphMode::TRIX) {
      const std::span<const DegreeMatrices::Entry> hs(head_new), ts(tail_new);
      for (std::size_t k = via_off_[v]; k < via_off_[v + 1]; ++k) {
        const std::uint32_t e = via_edges_[k];
        out[e] = weight_of(detail::role_product(hs, ts, edges_[e]));
      }
    } else {
      auto apply = [&](std::span<const DegreeMatrices::Entry> hr, std::span<const DegreeMatrices::Entry> tr,
                       double sign) {
        detail::for_each_role_pair(hr, tr, [&](id_t dst, id_t src, Role role, std::uint64_t c) {
          if (!detail::role_kept(mode_, role)) return;
          auto it = pair_index_.find(detail::pair_key(dst, role, src, num_rel_nodes_));
          if (it != pair_index_.end()) out[it->second] += sign * weight_of(c);
        });
      };
      apply(degrees_.head_row(v), degrees_.tail_row(v), -1.0);
      apply(head_new, tail_new, +1.0);
    }
  }
  return out;
}

/// Statistics of a built relation graph. Throws if the 4|V|alpha^2 bound fails.
inline RelationGraphStats compute_stats(const RelationGraph& rg) {
  RelationGraphStats s;
  const auto& d = rg.degrees();
  for (id_t v = 0; v < d.num_entities(); ++v)
    s.alpha = std::max<std::uint32_t>(
        s.alpha, static_cast<std::uint32_t>(std::max(d.head_row(v).size(), d.tail_row(v).size())));
  s.edge_count = rg.num_edges();
  for (const RelEdge& e : rg.edges()) {
    ++s.per_role_counts[static_cast<std::size_t>(e.role)];
    s.count_sum += e.count;
  }
  s.bound = 4ull * d.num_entities() * s.alpha * s.alpha;
  if (rg.mode() == RelGraphMode::TRIX && s.edge_count > s.bound)
    throw validation_error("relation graph exceeds 4|V|alpha^2 edges");
  return s;
}

/**
 * Edge counts of the relation graph under one counting convention. Used to
 * compare against published statistics whose convention is not stated.
 */
struct EdgeCountConvention {
  std::string name;
  RelationSpace space;
  bool self_pairs;
  /// Number of nonzero (r_i, r_j, v, role) entries.
  std::uint64_t entries = 0;
  /// Sum of degree products over those entries.
  std::uint64_t count_sum = 0;
  /// Distinct (r_i, r_j, role) keys after collapsing entities.
  std::uint64_t collapsed_entries = 0;
  std::array<std::uint64_t, kNumRoles> per_role{};
  std::uint32_t alpha = 0;
  std::uint64_t bound = 0;
};

inline std::vector<EdgeCountConvention> count_conventions(const KnowledgeGraph& g) {
  std::vector<EdgeCountConvention> out;
  for (RelationSpace space : {RelationSpace::BASE, RelationSpace::AUGMENTED}) {
    const DegreeMatrices d = build_degree_matrices(g, space);
    const id_t n = d.num_relations();
    std::uint32_t alpha = 0;
    for (id_t v = 0; v < d.num_entities(); ++v)
      alpha = std::max<std::uint32_t>(
          alpha, static_cast<std::uint32_t>(std::max(d.head_row(v).size(), d.tail_row(v).size())));
    for (bool self : {true, false}) {
      EdgeCountConvention c;
      c.space = space;
      c.self_pairs = self;
      c.name = std::string(space == RelationSpace::BASE ? "base" : "augmented") +
               (self ? "+self" : "-self");
      c.alpha = alpha;
      c.bound = 4ull * d.num_entities() * alpha * alpha;
      std::vector<bool> seen(static_cast<std::size_t>(n) * n * kNumRoles, false);
      for (id_t v = 0; v < d.num_entities(); ++v) {
        detail::for_each_role_pair(d.head_row(v), d.tail_row(v),
                                   [&](id_t dst, id_t src, Role role, std::uint64_t cnt) {
                                     if (!self && dst == src) return;
                                     ++c.entries;
                                     ++c.per_role[static_cast<std::size_t>(role)];
                                     c.count_sum += cnt;
                                     auto key = detail::pair_key(dst, role, src, n);
                                     if (!seen[key]) {
                                       seen[key] = true;
                                       ++c.collapsed_entries;
                                     }
                                   });
      }
      out.push_back(std::move(c));
    }
  }
  return out;
}

}  // namespace trix
