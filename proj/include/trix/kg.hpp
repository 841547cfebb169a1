#pragma once

#include <algorithm>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "trix/errors.hpp"

namespace trix {

using id_t = std::uint32_t;

struct Triple {
  id_t head = 0;
  id_t relation = 0;
  id_t tail = 0;

  friend auto operator<=>(const Triple&, const Triple&) = default;
};

/// A triple written with vocabulary tokens instead of ids.
struct NamedTriple {
  std::string head;
  std::string relation;
  std::string tail;
};

/// Suffix that names the inverse of a base relation.
inline constexpr std::string_view kInverseSuffix = "^-1";

/**
 * Immutable knowledge graph over an inverse-augmented relation space.
 *
 * Base relations occupy [0, R) and their inverses [R, 2R); every base triple
 * (h, r, t) is stored together with (t, r + R, h). Triples are kept sorted by
 * (head, relation, tail), which doubles as the by-head adjacency index.
 */
class KnowledgeGraph {
 public:
  KnowledgeGraph() = default;

  /// Builds a graph from base-relation triples. Duplicates are dropped.
  static KnowledgeGraph from_base_triples(std::vector<std::string> entity_names,
                                          std::vector<std::string> base_relation_names,
                                          std::span<const Triple> base_triples) {
    const auto num_entities = static_cast<id_t>(entity_names.size());
    const auto num_base = static_cast<id_t>(base_relation_names.size());
    for (const Triple& t : base_triples) {
      if (t.head >= num_entities || t.tail >= num_entities)
        throw validation_error("triple entity id out of range");
      if (t.relation >= num_base) throw validation_error("triple relation id out of range");
    }

    KnowledgeGraph g;
    g.num_entities_ = num_entities;
    g.num_base_ = num_base;
    g.entity_names_ = std::move(entity_names);
    g.relation_names_ = std::move(base_relation_names);
    g.relation_names_.reserve(2 * static_cast<std::size_t>(num_base));
    for (id_t r = 0; r < num_base; ++r)
      g.relation_names_.push_back(g.relation_names_[r] + std::string(kInverseSuffix));

    g.triples_.reserve(2 * base_triples.size());
    for (const Triple& t : base_triples) {
      g.triples_.push_back(t);
      g.triples_.push_back({t.tail, t.relation + num_base, t.head});
    }
    std::sort(g.triples_.begin(), g.triples_.end());
    g.triples_.erase(std::unique(g.triples_.begin(), g.triples_.end()), g.triples_.end());
    g.build_indices();
    return g;
  }

  id_t num_entities() const noexcept { return num_entities_; }
  id_t num_relations_base() const noexcept { return num_base_; }
  id_t num_relations() const noexcept { return 2 * num_base_; }
  std::size_t num_triples() const noexcept { return triples_.size(); }
  std::size_t num_base_triples() const noexcept { return triples_.size() / 2; }

  std::span<const Triple> triples() const noexcept { return triples_; }
  std::span<const id_t> heads() const noexcept { return heads_; }
  std::span<const id_t> relations() const noexcept { return relations_; }
  std::span<const id_t> tails() const noexcept { return tails_; }

  /// Outgoing triples of `entity`, as a contiguous slice of triples().
  std::span<const Triple> outgoing(id_t entity) const {
    return std::span<const Triple>(triples_).subspan(
        head_offsets_[entity], head_offsets_[entity + 1] - head_offsets_[entity]);
  }

  /// Index range of outgoing triples in triples().
  std::pair<std::size_t, std::size_t> outgoing_range(id_t entity) const {
    return {head_offsets_[entity], head_offsets_[entity + 1]};
  }

  std::vector<Triple> base_triples() const {
    std::vector<Triple> out;
    out.reserve(num_base_triples());
    for (const Triple& t : triples_)
      if (t.relation < num_base_) out.push_back(t);
    return out;
  }

  bool contains(const Triple& t) const {
    if (t.head >= num_entities_ || t.tail >= num_entities_ || t.relation >= num_relations())
      return false;
    return membership_.contains(pack(t));
  }

  /// Position of `t` in triples(), if present.
  std::optional<std::size_t> index_of(const Triple& t) const {
    if (t.head >= num_entities_) return std::nullopt;
    auto first = triples_.begin() + static_cast<std::ptrdiff_t>(head_offsets_[t.head]);
    auto last = triples_.begin() + static_cast<std::ptrdiff_t>(head_offsets_[t.head + 1]);
    auto it = std::lower_bound(first, last, t);
    if (it == last || *it != t) return std::nullopt;
    return static_cast<std::size_t>(it - triples_.begin());
  }

  id_t inverse(id_t relation) const noexcept {
    return relation < num_base_ ? relation + num_base_ : relation - num_base_;
  }

  Triple inverse(const Triple& t) const noexcept { return {t.tail, inverse(t.relation), t.head}; }

  const std::vector<std::string>& entity_names() const noexcept { return entity_names_; }
  /// Names over the augmented relation space, inverses included.
  const std::vector<std::string>& relation_names() const noexcept { return relation_names_; }

  std::optional<id_t> find_entity(const std::string& name) const {
    if (auto it = entity_ids_.find(name); it != entity_ids_.end()) return it->second;
    return std::nullopt;
  }

  std::optional<id_t> find_relation(const std::string& name) const {
    if (auto it = relation_ids_.find(name); it != relation_ids_.end()) return it->second;
    return std::nullopt;
  }

  friend bool operator==(const KnowledgeGraph& a, const KnowledgeGraph& b) {
    return a.num_entities_ == b.num_entities_ && a.num_base_ == b.num_base_ &&
           a.triples_ == b.triples_ && a.entity_names_ == b.entity_names_ &&
           a.relation_names_ == b.relation_names_;
  }

 private:
  std::uint64_t pack(const Triple& t) const noexcept {
    return (static_cast<std::uint64_t>(t.head) * num_relations() + t.relation) * num_entities_ +
           t.tail;
  }

  void build_indices() {
    head_offsets_.assign(static_cast<std::size_t>(num_entities_) + 1, 0);
    heads_.resize(triples_.size());
    relations_.resize(triples_.size());
    tails_.resize(triples_.size());
    membership_.reserve(triples_.size());
    for (std::size_t i = 0; i < triples_.size(); ++i) {
      const Triple& t = triples_[i];
      heads_[i] = t.head;
      relations_[i] = t.relation;
      tails_[i] = t.tail;
      ++head_offsets_[t.head + 1];
      membership_.insert(pack(t));
    }
    std::partial_sum(head_offsets_.begin(), head_offsets_.end(), head_offsets_.begin());

    entity_ids_.reserve(entity_names_.size());
    for (id_t i = 0; i < entity_names_.size(); ++i)
      if (!entity_ids_.emplace(entity_names_[i], i).second)
        throw validation_error("duplicate entity name '" + entity_names_[i] + "'");
    relation_ids_.reserve(relation_names_.size());
    for (id_t i = 0; i < relation_names_.size(); ++i)
      if (!relation_ids_.emplace(relation_names_[i], i).second)
        throw validation_error("duplicate relation name '" + relation_names_[i] + "'");
  }

  id_t num_entities_ = 0;
  id_t num_base_ = 0;
  std::vector<Triple> triples_;
  std::vector<id_t> heads_, relations_, tails_;
  std::vector<std::size_t> head_offsets_{0};
  std::vector<std::string> entity_names_;
  std::vector<std::string> relation_names_;
  std::unordered_map<std::string, id_t> entity_ids_;
  std::unordered_map<std::string, id_t> relation_ids_;
  std::unordered_set<std::uint64_t> membership_;
};

/**
 * Train graph plus an inference graph with held-out queries.
 *
 * The two graphs are independent id spaces. Query triples use base relations
 * of the inference graph and never occur among its observed triples.
 */
struct InductiveSplit {
  KnowledgeGraph train_graph;
  KnowledgeGraph inference_graph;
  std::vector<Triple> valid_queries;
  std::vector<Triple> test_queries;
  /// Held-out queries of the training graph (train_dir/valid.txt), for model selection.
  std::vector<Triple> train_valid_queries;
};

namespace detail {

inline std::vector<NamedTriple> read_triples(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw config_error("cannot open '" + file.string() + "'");
  std::vector<NamedTriple> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      const auto tab = line.find('\t', start);
      fields.push_back(line.substr(start, tab == std::string::npos ? tab : tab - start));
      if (tab == std::string::npos) break;
      start = tab + 1;
    }
    if (fields.size() != 3)
      throw parse_error(file.string(), line_no,
                        "expected 3 tab-separated fields, got " + std::to_string(fields.size()));
    for (const auto& f : fields)
      if (f.empty()) throw parse_error(file.string(), line_no, "empty field");
    out.push_back({std::move(fields[0]), std::move(fields[1]), std::move(fields[2])});
  }
  return out;
}

/// First-appearance vocabulary builder.
class Vocabulary {
 public:
  id_t intern(const std::string& name) {
    auto [it, fresh] = ids_.emplace(name, static_cast<id_t>(names_.size()));
    if (fresh) names_.push_back(name);
    return it->second;
  }
  std::vector<std::string> release() { return std::move(names_); }

 private:
  std::unordered_map<std::string, id_t> ids_;
  std::vector<std::string> names_;
};

inline KnowledgeGraph graph_from_named(const std::vector<NamedTriple>& named) {
  Vocabulary entities, relations;
  std::vector<Triple> base;
  base.reserve(named.size());
  for (const auto& t : named) {
    const id_t h = entities.intern(t.head);
    const id_t r = relations.intern(t.relation);
    const id_t tail = entities.intern(t.tail);
    base.push_back({h, r, tail});
  }
  return KnowledgeGraph::from_base_triples(entities.release(), relations.release(), base);
}

}  // namespace detail

/// Builds a graph from named triples; ids follow first appearance (head, relation, tail).
inline KnowledgeGraph graph_from_named_triples(const std::vector<NamedTriple>& named) {
  return detail::graph_from_named(named);
}

/**
 * Loads TSV triple files from `dir`, in the given order, into one graph.
 * Entity and relation ids are assigned by first appearance.
 */
inline KnowledgeGraph load_graph(const std::filesystem::path& dir,
                                 const std::vector<std::string>& files) {
  if (files.empty()) throw config_error("load_graph: empty file set");
  std::vector<NamedTriple> named;
  for (const auto& f : files) {
    auto part = detail::read_triples(dir / f);
    named.insert(named.end(), std::make_move_iterator(part.begin()),
                 std::make_move_iterator(part.end()));
  }
  return detail::graph_from_named(named);
}

/// Resolves named query triples against `g`. Unknown tokens throw vocabulary_error.
inline std::vector<Triple> resolve_queries(const KnowledgeGraph& g,
                                           const std::vector<NamedTriple>& named,
                                           const std::string& source) {
  std::vector<Triple> out;
  out.reserve(named.size());
  for (const auto& q : named) {
    const auto h = g.find_entity(q.head);
    if (!h) throw vocabulary_error(q.head, source + ": entity absent from observed graph");
    const auto r = g.find_relation(q.relation);
    if (!r || *r >= g.num_relations_base())
      throw vocabulary_error(q.relation, source + ": relation absent from observed graph");
    const auto t = g.find_entity(q.tail);
    if (!t) throw vocabulary_error(q.tail, source + ": entity absent from observed graph");
    const Triple triple{*h, *r, *t};
    if (g.contains(triple))
      throw validation_error(source + ": query (" + q.head + ", " + q.relation + ", " + q.tail +
                             ") is an observed edge");
    out.push_back(triple);
  }
  return out;
}

/// Like resolve_queries, but silently drops queries with unknown tokens or observed edges.
inline std::vector<Triple> resolve_queries_lenient(const KnowledgeGraph& g,
                                                   const std::vector<NamedTriple>& named) {
  std::vector<Triple> out;
  for (const auto& q : named) {
    const auto h = g.find_entity(q.head);
    const auto r = g.find_relation(q.relation);
    const auto t = g.find_entity(q.tail);
    if (!h || !r || !t || *r >= g.num_relations_base()) continue;
    const Triple triple{*h, *r, *t};
    if (!g.contains(triple)) out.push_back(triple);
  }
  return out;
}

/**
 * Loads a fully inductive split.
 *
 * `train_dir` holds train.txt (and optionally valid.txt); `inference_dir`
 * holds observed.txt, valid.txt and test.txt. When observed.txt is missing,
 * train.txt in the inference directory is used instead.
 */
inline InductiveSplit load_inductive_split(const std::filesystem::path& train_dir,
                                           const std::filesystem::path& inference_dir) {
  namespace fs = std::filesystem;
  InductiveSplit split;
  split.train_graph = load_graph(train_dir, {"train.txt"});
  if (fs::exists(train_dir / "valid.txt"))
    split.train_valid_queries =
        resolve_queries_lenient(split.train_graph, detail::read_triples(train_dir / "valid.txt"));

  const std::string observed =
      fs::exists(inference_dir / "observed.txt") ? "observed.txt" : "train.txt";
  split.inference_graph = load_graph(inference_dir, {observed});
  const auto inf_valid = inference_dir / "valid.txt";
  if (fs::exists(inf_valid))
    split.valid_queries = resolve_queries(split.inference_graph, detail::read_triples(inf_valid),
                                          inf_valid.string());
  const auto inf_test = inference_dir / "test.txt";
  split.test_queries = resolve_queries(split.inference_graph, detail::read_triples(inf_test),
                                       inf_test.string());
  return split;
}

/// Checks that `perm` is a bijection on [0, n).
inline void require_bijection(std::span<const id_t> perm, std::size_t n, const char* what) {
  if (perm.size() != n)
    throw validation_error(std::string(what) + ": permutation has wrong length");
  std::vector<bool> seen(n, false);
  for (id_t p : perm) {
    if (p >= n || seen[p]) throw validation_error(std::string(what) + ": not a bijection");
    seen[p] = true;
  }
}

/// Extends a base-relation permutation to the augmented space (r + R -> perm(r) + R).
inline std::vector<id_t> augment_relation_permutation(std::span<const id_t> base_perm) {
  const auto n = static_cast<id_t>(base_perm.size());
  std::vector<id_t> out(2 * static_cast<std::size_t>(n));
  for (id_t r = 0; r < n; ++r) {
    out[r] = base_perm[r];
    out[r + n] = base_perm[r] + n;
  }
  return out;
}

/**
 * Relabels entities and relations. `relation_perm` acts on base relations and
 * is extended to inverses.
 */
inline KnowledgeGraph permute_graph(const KnowledgeGraph& g, std::span<const id_t> entity_perm,
                                    std::span<const id_t> relation_perm) {
  require_bijection(entity_perm, g.num_entities(), "entity permutation");
  require_bijection(relation_perm, g.num_relations_base(), "relation permutation");

  std::vector<std::string> entity_names(g.num_entities());
  for (id_t u = 0; u < g.num_entities(); ++u) entity_names[entity_perm[u]] = g.entity_names()[u];
  std::vector<std::string> relation_names(g.num_relations_base());
  for (id_t r = 0; r < g.num_relations_base(); ++r)
    relation_names[relation_perm[r]] = g.relation_names()[r];

  std::vector<Triple> base;
  base.reserve(g.num_base_triples());
  for (const Triple& t : g.triples())
    if (t.relation < g.num_relations_base())
      base.push_back({entity_perm[t.head], relation_perm[t.relation], entity_perm[t.tail]});
  return KnowledgeGraph::from_base_triples(std::move(entity_names), std::move(relation_names),
                                           base);
}

}  // namespace trix
