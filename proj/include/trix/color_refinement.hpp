#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <optional>
#include <tuple>
#include <vector>

#include "trix/kg.hpp"
#include "trix/relgraph.hpp"

namespace trix {

/// Colors after each refinement round; round 0 is the uniform coloring.
struct RefinementResult {
  std::vector<std::vector<std::uint32_t>> relation_colors;
  std::vector<std::vector<std::uint32_t>> entity_colors;

  std::size_t rounds() const { return relation_colors.size() - 1; }
  const std::vector<std::uint32_t>& final_relations() const { return relation_colors.back(); }

  /// First round at which relations a and b carry different colors.
  std::optional<std::size_t> separation_round(id_t a, id_t b) const {
    for (std::size_t i = 0; i < relation_colors.size(); ++i)
      if (relation_colors[i][a] != relation_colors[i][b]) return i;
    return std::nullopt;
  }
};

namespace detail {

using Signature = std::vector<std::uint64_t>;

/// Replaces signatures by dense color ids (ordered by signature, so colors are canonical).
inline std::vector<std::uint32_t> compress(const std::vector<Signature>& sigs) {
  std::map<Signature, std::uint32_t> ids;
  for (const auto& s : sigs) ids.emplace(s, 0);
  std::uint32_t next = 0;
  for (auto& [s, id] : ids) id = next++;
  std::vector<std::uint32_t> out(sigs.size());
  for (std::size_t i = 0; i < sigs.size(); ++i) out[i] = ids[sigs[i]];
  return out;
}

inline std::size_t class_count(const std::vector<std::uint32_t>& colors) {
  std::vector<std::uint32_t> c(colors);
  std::sort(c.begin(), c.end());
  return static_cast<std::size_t>(std::unique(c.begin(), c.end()) - c.begin());
}

}  // namespace detail

/**
 * Color refinement matching what relation-graph message passing can see.
 *
 * Collapsed graphs: a relation's new color hashes its color with the multiset
 * of (role, count, support, source color) over incoming edges.
 *
 * Entity-attributed graphs (TRIX) are refined jointly with the knowledge
 * graph: entity u hashes (relation color, neighbor color) over its triples
 * (u, r, v); relation r hashes (role, count, source color, via-entity color).
 *
 * Iterates until the number of color classes stops growing.
 */
inline RefinementResult refine_colors(const KnowledgeGraph& g, const RelationGraph& rg) {
  const bool joint = rg.mode() == RelGraphMode::TRIX;
  const std::size_t nr = rg.num_rel_nodes();
  const std::size_t ne = joint ? g.num_entities() : 0;
  RefinementResult res;
  res.relation_colors.emplace_back(nr, 0);
  res.entity_colors.emplace_back(ne, 0);
  std::size_t classes = 1 + (ne > 0 ? 1 : 0);

  for (std::size_t round = 0; round < nr + ne + 1; ++round) {
    const auto& rc = res.relation_colors.back();
    const auto& ec = res.entity_colors.back();

    std::vector<detail::Signature> rsig(nr);
    for (id_t r = 0; r < nr; ++r) {
      std::vector<std::tuple<std::uint64_t, std::uint64_t, std::uint64_t, std::uint64_t, std::uint64_t>> in;
      for (const RelEdge& e : rg.incoming(r))
        in.emplace_back(static_cast<std::uint64_t>(e.role), e.count, e.support, rc[e.src_rel],
                        joint ? ec[e.via_entity] : 0);
      std::sort(in.begin(), in.end());
      auto& s = rsig[r];
      s.push_back(rc[r]);
      for (const auto& [a, b, c, d, f] : in) s.insert(s.end(), {a, b, c, d, f});
    }
    std::vector<detail::Signature> esig(ne);
    for (id_t u = 0; u < ne; ++u) {
      std::vector<std::pair<std::uint64_t, std::uint64_t>> in;
      for (const Triple& t : g.outgoing(u)) in.emplace_back(rc[t.relation], ec[t.tail]);
      std::sort(in.begin(), in.end());
      auto& s = esig[u];
      s.push_back(ec[u]);
      for (const auto& [a, b] : in) s.insert(s.end(), {a, b});
    }
    auto nrc = detail::compress(rsig);
    auto nec = detail::compress(esig);
    const std::size_t next = detail::class_count(nrc) + detail::class_count(nec);
    res.relation_colors.push_back(std::move(nrc));
    res.entity_colors.push_back(std::move(nec));
    if (next == classes) break;
    classes = next;
  }
  return res;
}

namespace detail {

/// Edge labels of a relation graph with the via entity summed out.
inline std::map<std::tuple<id_t, id_t, Role>, std::tuple<std::uint64_t, std::uint64_t>> collapsed_labels(
    const RelationGraph& rg) {
  std::map<std::tuple<id_t, id_t, Role>, std::tuple<std::uint64_t, std::uint64_t>> out;
  for (const RelEdge& e : rg.edges()) {
    auto& [count, support] = out[{e.dst_rel, e.src_rel, e.role}];
    count += e.count;
    support += e.support;
  }
  return out;
}

using EntitySignature = std::vector<std::tuple<id_t, id_t, Role, std::uint64_t>>;

/// Multiset of per-entity edge sets with relation ids mapped through `perm`.
inline std::vector<EntitySignature> entity_signatures(const RelationGraph& rg, const std::vector<id_t>& perm) {
  std::map<id_t, EntitySignature> by_entity;
  for (const RelEdge& e : rg.edges())
    by_entity[e.via_entity].emplace_back(perm[e.dst_rel], perm[e.src_rel], e.role, e.count);
  std::vector<EntitySignature> out;
  for (auto& [v, sig] : by_entity) {
    std::sort(sig.begin(), sig.end());
    out.push_back(std::move(sig));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/**
 * Exhaustive search for a relation-node automorphism mapping `a` to `b`.
 *
 * Collapsed graphs must preserve every (dst, src, role) label. TRIX graphs
 * additionally need an entity bijection; since edges partition by via entity,
 * that exists iff the multiset of per-entity edge sets is preserved. Partial
 * assignments are pruned on collapsed labels, a necessary condition in both
 * cases. Intended for graphs of at most a dozen relation nodes.
 */
inline std::optional<std::vector<id_t>> find_automorphism(const RelationGraph& rg, id_t a, id_t b) {
  const id_t n = rg.num_rel_nodes();
  if (a >= n || b >= n) throw bounds_error("relation id out of range");
  const auto labels = detail::collapsed_labels(rg);
  auto label = [&](id_t dst, id_t src, Role role) {
    auto it = labels.find({dst, src, role});
    return it == labels.end() ? std::tuple<std::uint64_t, std::uint64_t>{0, 0} : it->second;
  };
  const bool trix = rg.mode() == RelGraphMode::TRIX;
  const auto reference = trix ? detail::entity_signatures(rg, [&] {
    std::vector<id_t> id(n);
    for (id_t i = 0; i < n; ++i) id[i] = i;
    return id;
  }()) : std::vector<detail::EntitySignature>{};

  std::vector<id_t> perm(n, kNoEntity);
  std::vector<bool> used(n, false);
  std::vector<id_t> order;
  order.push_back(a);
  for (id_t i = 0; i < n; ++i)
    if (i != a) order.push_back(i);

  auto consistent = [&](std::size_t depth) {
    const id_t x = order[depth];
    for (std::size_t k = 0; k <= depth; ++k) {
      const id_t y = order[k];
      for (std::size_t role = 0; role < kNumRoles; ++role) {
        const Role ro = static_cast<Role>(role);
        if (label(x, y, ro) != label(perm[x], perm[y], ro)) return false;
        if (label(y, x, ro) != label(perm[y], perm[x], ro)) return false;
      }
    }
    return true;
  };

  std::optional<std::vector<id_t>> found;
  auto search = [&](auto&& self, std::size_t depth) -> bool {
    if (depth == n) {
      if (trix && detail::entity_signatures(rg, perm) != reference) return false;
      found = perm;
      return true;
    }
    const id_t x = order[depth];
    for (id_t y = 0; y < n; ++y) {
      if (used[y] || (depth == 0 && y != b)) continue;
      perm[x] = y;
      used[y] = true;
      if (consistent(depth) && self(self, depth + 1)) return true;
      used[y] = false;
    }
    perm[x] = kNoEntity;
    return false;
  };
  search(search, 0);
  return found;
}

}  // namespace trix
