#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "trix/autodiff.hpp"
#include "trix/errors.hpp"
#include "trix/kg.hpp"
#include "trix/relgraph.hpp"

namespace trix {

enum class UpdateMode : std::uint8_t { ITERATIVE, SEQUENTIAL };
enum class Task : std::uint8_t { ENTITY, RELATION };

struct ModelConfig {
  std::size_t hidden_dim = 32;
  std::size_t rounds_entity = 5;
  std::size_t rounds_relation = 3;
  RelGraphMode relgraph_mode = RelGraphMode::TRIX;
  UpdateMode update_mode = UpdateMode::ITERATIVE;
  MessageWeighting message_weighting = MessageWeighting::BINARY;
  /// Row-wise normalization between each layer's affine map and its relu.
  bool layer_norm = true;

  void validate() const {
    if (hidden_dim < 1) throw config_error("hidden_dim must be >= 1");
    if (rounds_entity < 1 || rounds_relation < 1) throw config_error("rounds must be >= 1");
  }
  std::size_t rounds(Task task) const { return task == Task::ENTITY ? rounds_entity : rounds_relation; }
  std::size_t layer_count() const { return std::max(rounds_entity, rounds_relation); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Expected shape of every named parameter tensor for `cfg`.
inline std::map<std::string, std::vector<std::size_t>> parameter_shapes(const ModelConfig& cfg) {
  const std::size_t d = cfg.hidden_dim;
  std::map<std::string, std::vector<std::size_t>> s;
  for (std::size_t i = 0; i < cfg.layer_count(); ++i) {
    const std::string e = "entity." + std::to_string(i);
    const std::string r = "relation." + std::to_string(i);
    s[e + ".weight"] = {2 * d, d};
    s[e + ".bias"] = {d};
    s[r + ".role"] = {kNumRoles, d};
    s[r + ".weight"] = {2 * d, d};
    s[r + ".bias"] = {d};
  }
  for (const char* head : {"entity_head", "relation_head"}) {
    s[std::string(head) + ".0.weight"] = {d, d};
    s[std::string(head) + ".0.bias"] = {d};
    s[std::string(head) + ".1.weight"] = {d, 1};
    s[std::string(head) + ".1.bias"] = {1};
  }
  return s;
}

/// Named parameter tensors of one model.
template <class T>
struct ModelParams {
  ModelConfig config;
  std::map<std::string, ad::Tensor<T>> tensors;

  /// Glorot-uniform weights, all-ones role vectors, biases uniform in +-1/sqrt(fan_in).
  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    std::mt19937_64 rng(seed);
    for (const auto& [name, shape] : parameter_shapes(cfg)) {
      ad::Tensor<T> t(shape);
      if (name.ends_with(".role")) {
        t.fill(T(1));
      } else if (name.ends_with(".weight")) {
        const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
        std::uniform_real_distribution<double> u(-a, a);
        for (auto& v : t.data()) v = static_cast<T>(u(rng));
      } else {
        const std::string weight = name.substr(0, name.size() - 4) + "weight";
        const double a = 1.0 / std::sqrt(static_cast<double>(parameter_shapes(cfg)[weight][0]));
        std::uniform_real_distribution<double> u(-a, a);
        for (auto& v : t.data()) v = static_cast<T>(u(rng));
      }
      p.tensors.emplace(name, std::move(t));
    }
    return p;
  }

  static ModelParams zeros(const ModelConfig& cfg) {
    cfg.validate();
    ModelParams p;
    p.config = cfg;
    for (const auto& [name, shape] : parameter_shapes(cfg)) p.tensors.emplace(name, ad::Tensor<T>(shape));
    return p;
  }

  /// Throws shape_error unless the tensors exactly match the config.
  void check_shapes() const {
    const auto expected = parameter_shapes(config);
    if (expected.size() != tensors.size()) throw shape_error("parameter count does not match config");
    for (const auto& [name, shape] : expected) {
      auto it = tensors.find(name);
      if (it == tensors.end()) throw shape_error("missing parameter '" + name + "'");
      if (it->second.shape() != shape) throw shape_error("parameter '" + name + "' has wrong shape");
    }
  }

  template <class U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.config = config;
    for (const auto& [name, t] : tensors) out.tensors.emplace(name, t.template cast<U>());
    return out;
  }

  const ad::Tensor<T>& at(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw shape_error("unknown parameter '" + name + "'");
    return it->second;
  }
};

/// Layer and message counters filled by a forward pass.
struct ForwardStats {
  std::size_t entity_layers = 0;
  std::size_t relation_layers = 0;
  std::size_t entity_messages = 0;
  std::size_t relation_messages = 0;

  std::size_t messages() const { return entity_messages + relation_messages; }
};

struct ForwardOptions {
  /// Indices into g.triples() hidden from message passing (training targets).
  std::vector<std::size_t> removed_triples;
  /// Debug only: adds an id-dependent feature to the initial entity state.
  bool inject_entity_ids = false;
  ForwardStats* stats = nullptr;
};

/**
 * A graph prepared for repeated forward passes: index arrays in the kernel's
 * index type and message weights in the scalar type.
 */
template <class T>
class GraphContext {
 public:
  GraphContext(const KnowledgeGraph& g, const RelationGraph& rg, MessageWeighting weighting,
               ad::Summation summation = ad::Summation::INDEX_ORDER)
      : g_(&g), rg_(&rg), weighting_(weighting), summation_(summation) {
    if (rg.space() != RelationSpace::AUGMENTED || rg.num_rel_nodes() != g.num_relations() ||
        rg.num_entities() != g.num_entities())
      throw validation_error("relation graph does not match knowledge graph");
    auto w = rg.weights(weighting);
    rel_weights_ = std::make_shared<const std::vector<T>>(w.begin(), w.end());
  }

  const KnowledgeGraph& graph() const { return *g_; }
  const RelationGraph& relgraph() const { return *rg_; }
  MessageWeighting weighting() const { return weighting_; }
  ad::Summation summation() const { return summation_; }

  std::shared_ptr<const std::vector<T>> relation_weights(const std::vector<std::size_t>& removed) const {
    if (removed.empty()) return rel_weights_;
    auto w = rg_->weights_without(*g_, removed, weighting_);
    return std::make_shared<const std::vector<T>>(w.begin(), w.end());
  }

  /// Null (all ones) unless some triples are removed.
  std::shared_ptr<const std::vector<T>> entity_weights(const std::vector<std::size_t>& removed) const {
    if (removed.empty()) return nullptr;
    auto w = std::make_shared<std::vector<T>>(g_->num_triples(), T(1));
    for (std::size_t i : removed) (*w)[i] = T(0);
    return w;
  }

 private:
  const KnowledgeGraph* g_;
  const RelationGraph* rg_;
  MessageWeighting weighting_;
  ad::Summation summation_;
  std::shared_ptr<const std::vector<T>> rel_weights_;
};

/// Parameters placed on a tape, looked up by name.
template <class T>
class Binding {
 public:
  Binding(ad::Tape<T>& tape, const ModelParams<T>& params, bool trainable)
      : tape_(&tape), layer_norm_(params.config.layer_norm) {
    params.check_shapes();
    for (const auto& [name, t] : params.tensors)
      vars_.emplace(name, trainable ? tape.parameter(name, t) : tape.constant(t));
  }

  ad::Tape<T>& tape() const { return *tape_; }
  bool layer_norm() const { return layer_norm_; }
  ad::Var<T> operator()(const std::string& name) const {
    auto it = vars_.find(name);
    if (it == vars_.end()) throw shape_error("unknown parameter '" + name + "'");
    return it->second;
  }

 private:
  ad::Tape<T>* tape_;
  bool layer_norm_;
  std::unordered_map<std::string, ad::Var<T>> vars_;
};

namespace detail {

template <class T>
ad::Var<T> update(const Binding<T>& p, const std::string& prefix, ad::Var<T> prev, ad::Var<T> agg) {
  auto h = ad::affine(ad::concat_cols(prev, agg), p(prefix + ".weight"), p(prefix + ".bias"));
  return ad::relu(p.layer_norm() ? ad::layer_norm(h) : h);
}

}  // namespace detail

/**
 * One entity round. Entity u aggregates X[v] * Z[r'] over its triples
 * (u, r', v) and updates relu(norm(W [X[u], agg] + b)); norm is the
 * identity when layer_norm is off.
 */
template <class T>
ad::Var<T> entity_layer(const Binding<T>& p, const KnowledgeGraph& g, ad::Var<T> x, ad::Var<T> z,
                        std::size_t round, std::shared_ptr<const std::vector<T>> weights = nullptr,
                        ForwardStats* stats = nullptr, ad::Summation order = ad::Summation::INDEX_ORDER) {
  auto agg = ad::message_aggregate<T>({{x, g.tails()}, {z, g.relations()}}, std::move(weights), g.heads(),
                                      g.num_entities(), order);
  if (stats) {
    ++stats->entity_layers;
    stats->entity_messages += g.num_triples();
  }
  return detail::update(p, "entity." + std::to_string(round), x, agg);
}

/**
 * One relation round. Relation r' aggregates w * Z[r''] * X[v] * role[k]
 * over relation-graph edges (r', r'', v, k). Collapsed modes carry no via
 * entity and drop the X factor.
 */
template <class T>
ad::Var<T> relation_layer(const Binding<T>& p, const RelationGraph& rg, ad::Var<T> z, ad::Var<T> x,
                          std::size_t round, std::shared_ptr<const std::vector<T>> weights,
                          ForwardStats* stats = nullptr, ad::Summation order = ad::Summation::INDEX_ORDER) {
  const std::string prefix = "relation." + std::to_string(round);
  std::vector<ad::Factor<T>> factors{{z, rg.src_index()}, {p(prefix + ".role"), rg.role_index()}};
  if (rg.mode() == RelGraphMode::TRIX) factors.push_back({x, rg.via_index()});
  auto agg = ad::message_aggregate<T>(std::move(factors), std::move(weights), rg.dst_index(), rg.num_rel_nodes(),
                                      order);
  if (stats) {
    ++stats->relation_layers;
    stats->relation_messages += rg.num_edges();
  }
  return detail::update(p, prefix, z, agg);
}

/// Two-layer score head applied row-wise; returns a rank-1 tensor of scores.
template <class T>
ad::Var<T> score_head(const Binding<T>& p, const std::string& head, ad::Var<T> states) {
  auto hidden = ad::relu(ad::affine(states, p(head + ".0.weight"), p(head + ".0.bias")));
  auto out = ad::affine(hidden, p(head + ".1.weight"), p(head + ".1.bias"));
  return ad::reshape(out, {out.value().rows()});
}

/// Labeled initial state of an entity query (h, r, ?): X[h] = 1, Z[r] = 1, rest 0.
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> init_entity_query(const KnowledgeGraph& g, id_t h, id_t r,
                                                          std::size_t d) {
  if (h >= g.num_entities()) throw bounds_error("query head out of range");
  if (r >= g.num_relations()) throw bounds_error("query relation out of range");
  ad::Tensor<T> x({g.num_entities(), d});
  ad::Tensor<T> z({g.num_relations(), d});
  for (std::size_t k = 0; k < d; ++k) {
    x(h, k) = T(1);
    z(r, k) = T(1);
  }
  return {std::move(x), std::move(z)};
}

/// Labeled initial state of a relation query (h, ?, t): X[h] = 1, X[t] = -1, Z = 1.
template <class T>
std::pair<ad::Tensor<T>, ad::Tensor<T>> init_relation_query(const KnowledgeGraph& g, id_t h, id_t t,
                                                            std::size_t d) {
  if (h >= g.num_entities() || t >= g.num_entities()) throw bounds_error("query entity out of range");
  if (h == t) throw validation_error("relation query with identical head and tail");
  ad::Tensor<T> x({g.num_entities(), d});
  ad::Tensor<T> z({g.num_relations(), d}, T(1));
  for (std::size_t k = 0; k < d; ++k) {
    x(h, k) = T(1);
    x(t, k) = T(-1);
  }
  return {std::move(x), std::move(z)};
}

namespace detail {

template <class T>
void inject_ids(ad::Tensor<T>& x) {
  for (std::size_t u = 0; u < x.rows(); ++u) x(u, 0) += static_cast<T>(0.01 * static_cast<double>(u + 1));
}

}  // namespace detail

namespace detail {

/// Final (X, Z) of an entity query (h, r, ?).
template <class T>
std::pair<ad::Var<T>, ad::Var<T>> entity_task_state(const Binding<T>& p, const GraphContext<T>& ctx,
                                                    const ModelConfig& cfg, id_t h, id_t r,
                                                    const ForwardOptions& opt) {
  const KnowledgeGraph& g = ctx.graph();
  auto [x0, z0] = init_entity_query<T>(g, h, r, cfg.hidden_dim);
  if (opt.inject_entity_ids) inject_ids(x0);
  ad::Tape<T>& tape = p.tape();
  auto x = tape.constant(std::move(x0));
  auto z = tape.constant(std::move(z0));
  const auto ew = ctx.entity_weights(opt.removed_triples);
  const auto rw = ctx.relation_weights(opt.removed_triples);
  const std::size_t rounds = cfg.rounds_entity;
  if (cfg.update_mode == UpdateMode::ITERATIVE) {
    for (std::size_t i = 0; i < rounds; ++i) {
      x = entity_layer(p, g, x, z, i, ew, opt.stats, ctx.summation());
      z = relation_layer(p, ctx.relgraph(), z, x, i, rw, opt.stats, ctx.summation());
    }
  } else {
    for (std::size_t i = 0; i < rounds; ++i) z = relation_layer(p, ctx.relgraph(), z, x, i, rw, opt.stats, ctx.summation());
    for (std::size_t i = 0; i < rounds; ++i) x = entity_layer(p, g, x, z, i, ew, opt.stats, ctx.summation());
  }
  return {x, z};
}

}  // namespace detail

/**
 * Scores every entity as the tail of (h, r, ?). Iterative mode alternates an
 * entity round (reading the previous Z) with a relation round (reading the
 * new X). Sequential mode runs every relation round on the initial X first.
 */
template <class T>
ad::Var<T> forward_entity(const Binding<T>& p, const GraphContext<T>& ctx, const ModelConfig& cfg, id_t h,
                          id_t r, const ForwardOptions& opt = {}) {
  return score_head(p, "entity_head", detail::entity_task_state(p, ctx, cfg, h, r, opt).first);
}

/**
 * Scores every relation (inverses included) for (h, ?, t) in one pass.
 * Iterative mode alternates a relation round (reading the previous X) with an
 * entity round (reading the new Z). Sequential mode runs every entity round on
 * the initial Z first.
 */
template <class T>
ad::Var<T> forward_relation(const Binding<T>& p, const GraphContext<T>& ctx, const ModelConfig& cfg, id_t h,
                            id_t t, const ForwardOptions& opt = {}) {
  const KnowledgeGraph& g = ctx.graph();
  auto [x0, z0] = init_relation_query<T>(g, h, t, cfg.hidden_dim);
  if (opt.inject_entity_ids) detail::inject_ids(x0);
  ad::Tape<T>& tape = p.tape();
  auto x = tape.constant(std::move(x0));
  auto z = tape.constant(std::move(z0));
  const auto ew = ctx.entity_weights(opt.removed_triples);
  const auto rw = ctx.relation_weights(opt.removed_triples);
  const std::size_t rounds = cfg.rounds_relation;
  if (cfg.update_mode == UpdateMode::ITERATIVE) {
    for (std::size_t i = 0; i < rounds; ++i) {
      z = relation_layer(p, ctx.relgraph(), z, x, i, rw, opt.stats, ctx.summation());
      x = entity_layer(p, g, x, z, i, ew, opt.stats, ctx.summation());
    }
  } else {
    for (std::size_t i = 0; i < rounds; ++i) x = entity_layer(p, g, x, z, i, ew, opt.stats, ctx.summation());
    for (std::size_t i = 0; i < rounds; ++i) z = relation_layer(p, ctx.relgraph(), z, x, i, rw, opt.stats, ctx.summation());
  }
  return score_head(p, "relation_head", z);
}

/// Entity scores as plain values, without recording gradients.
template <class T>
std::vector<T> score_entities(const ModelParams<T>& params, const GraphContext<T>& ctx, id_t h, id_t r,
                              const ForwardOptions& opt = {}) {
  ad::Tape<T> tape;
  Binding<T> p(tape, params, false);
  auto s = forward_entity(p, ctx, params.config, h, r, opt);
  return std::vector<T>(s.value().data().begin(), s.value().data().end());
}

/// Relation scores (all augmented relations) without recording gradients.
template <class T>
std::vector<T> score_relations(const ModelParams<T>& params, const GraphContext<T>& ctx, id_t h, id_t t,
                               const ForwardOptions& opt = {}) {
  ad::Tape<T> tape;
  Binding<T> p(tape, params, false);
  auto s = forward_relation(p, ctx, params.config, h, t, opt);
  return std::vector<T>(s.value().data().begin(), s.value().data().end());
}

/// Final relation embeddings Z of an entity query; used for similarity export.
template <class T>
ad::Tensor<T> relation_embeddings(const ModelParams<T>& params, const GraphContext<T>& ctx, id_t h, id_t r) {
  ad::Tape<T> tape;
  Binding<T> p(tape, params, false);
  return detail::entity_task_state(p, ctx, params.config, h, r, {}).second.value();
}

}  // namespace trix
