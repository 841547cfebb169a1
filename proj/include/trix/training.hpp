#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "trix/autodiff.hpp"
#include "trix/errors.hpp"
#include "trix/eval.hpp"
#include "trix/kg.hpp"
#include "trix/model.hpp"
#include "trix/relgraph.hpp"

namespace trix {

struct TrainConfig {
  Task task = Task::ENTITY;
  std::size_t negatives = 32;
  std::size_t batch_size = 32;
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.0;
  std::size_t epochs = 10;
  std::size_t steps_per_epoch = 10000;
  std::size_t early_stop_patience = 3;
  std::uint64_t seed = 0;
  /// Validation queries scored per epoch (0 = all).
  std::size_t validation_queries = 500;
  /// Hide each positive (and its inverse) from message passing while it is scored.
  bool remove_targets = true;
  std::size_t threads = 1;

  void validate() const {
    if (negatives < 1) throw config_error("negatives must be >= 1");
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (!(learning_rate > 0)) throw config_error("learning_rate must be > 0");
    if (epochs < 1 || steps_per_epoch < 1) throw config_error("epochs and steps_per_epoch must be >= 1");
    if (threads < 1) throw config_error("threads must be >= 1");
  }

  /// Fine-tuning schedule: 3 epochs of 1000 steps.
  static TrainConfig finetune_defaults() {
    TrainConfig c;
    c.epochs = 3;
    c.steps_per_epoch = 1000;
    return c;
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// -log sigmoid(pos) - (1/n) sum log(1 - sigmoid(neg)), on plain numbers.
inline double bce_loss(double pos, std::span<const double> negs) {
  if (negs.empty()) throw config_error("bce_loss needs at least one negative");
  auto log_sigmoid = [](double x) { return x >= 0 ? -std::log1p(std::exp(-x)) : x - std::log1p(std::exp(x)); };
  double neg = 0.0;
  for (double s : negs) neg += log_sigmoid(-s);
  return -log_sigmoid(pos) - neg / static_cast<double>(negs.size());
}

/// The same loss recorded on a tape: `pos` holds one logit, `negs` n logits.
template <class T>
ad::Var<T> bce_loss(ad::Var<T> pos, ad::Var<T> negs) {
  const std::size_t n = negs.value().size();
  if (n == 0) throw config_error("bce_loss needs at least one negative");
  auto pos_term = ad::weighted_sum(ad::log_sigmoid(pos), std::vector<T>(pos.value().size(), T(-1)));
  auto neg_term = ad::weighted_sum(ad::log_sigmoid(ad::scale(negs, T(-1))),
                                   std::vector<T>(n, T(-1) / static_cast<T>(n)));
  return ad::add(pos_term, neg_term);
}

enum class CorruptionSide : std::uint8_t { PER_NEGATIVE, HEAD, TAIL };

struct NegativeSample {
  std::vector<Triple> triples;
  /// Some negative equals the positive or a known triple after the retry cap.
  bool degenerate = false;
};

inline constexpr std::size_t kNegativeRetryCap = 10;

/**
 * Corrupts `positive` n times. Entity task: replaces the head or tail (coin
 * flip per negative unless `side` fixes it) with a uniform entity. Relation
 * task: replaces the relation with a uniform base relation. Candidates equal
 * to the positive or present in `g` are redrawn up to the retry cap, then kept.
 */
inline NegativeSample sample_negatives(const KnowledgeGraph& g, const Triple& positive, Task task, std::size_t n,
                                       std::mt19937_64& rng, CorruptionSide side = CorruptionSide::PER_NEGATIVE) {
  if (n < 1) throw config_error("negative count must be >= 1");
  NegativeSample out;
  out.triples.reserve(n);
  std::uniform_int_distribution<id_t> entity(0, g.num_entities() - 1);
  std::uniform_int_distribution<id_t> relation(0, std::max<id_t>(g.num_relations_base(), 1) - 1);
  std::bernoulli_distribution coin(0.5);
  for (std::size_t k = 0; k < n; ++k) {
    Triple cand = positive;
    bool ok = false;
    const bool corrupt_head = task == Task::ENTITY &&
                              (side == CorruptionSide::HEAD || (side == CorruptionSide::PER_NEGATIVE && coin(rng)));
    for (std::size_t attempt = 0; attempt <= kNegativeRetryCap && !ok; ++attempt) {
      cand = positive;
      if (task == Task::RELATION) cand.relation = relation(rng);
      else if (corrupt_head) cand.head = entity(rng);
      else cand.tail = entity(rng);
      ok = cand != positive && !g.contains(cand);
    }
    out.degenerate = out.degenerate || !ok;
    out.triples.push_back(cand);
  }
  return out;
}

/// AdamW with decoupled weight decay.
template <class T>
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), wd_(weight_decay) {}

  explicit AdamW(const TrainConfig& c) : AdamW(c.learning_rate, c.beta1, c.beta2, c.epsilon, c.weight_decay) {}

  void step(std::map<std::string, ad::Tensor<T>>& params, const std::map<std::string, ad::Tensor<T>>& grads) {
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      auto g = grads.find(name);
      if (g == grads.end() || g->second.size() != p.size()) throw shape_error("missing gradient for '" + name + "'");
      auto& m = m_[name];
      auto& v = v_[name];
      if (m.size() != p.size()) {
        m.assign(p.size(), 0.0);
        v.assign(p.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = g->second[i];
        m[i] = b1_ * m[i] + (1.0 - b1_) * gi;
        v[i] = b2_ * v[i] + (1.0 - b2_) * gi * gi;
        const double mhat = m[i] / c1;
        const double vhat = v[i] / c2;
        double x = p[i];
        x -= lr_ * wd_ * x;
        x -= lr_ * mhat / (std::sqrt(vhat) + eps_);
        p[i] = static_cast<T>(x);
      }
    }
  }

  std::uint64_t steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_, wd_;
  std::uint64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_, v_;
};

/// One graph of the training mixture with its held-out validation queries.
struct TrainingGraph {
  std::string name;
  KnowledgeGraph graph;
  std::vector<Triple> valid_queries;
};

struct EpochMetrics {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  /// Filtered validation MRR; empty when no graph has validation queries.
  std::optional<double> valid_mrr;
  double wall_time = 0.0;
  bool degenerate_negatives = false;
};

struct TrainResult {
  ModelParams<float> params;
  std::vector<EpochMetrics> metrics;
  std::size_t best_epoch = 0;
  bool early_stopped = false;
};

struct TrainHooks {
  /// Called after every optimizer step with (global step, batch loss).
  std::function<void(std::size_t, double)> on_step;
  std::function<void(const EpochMetrics&)> on_epoch;
};

namespace detail {

struct PreparedGraph {
  const TrainingGraph* source;
  RelationGraph rg;
  std::unique_ptr<GraphContext<float>> ctx;
  FilterIndex filter;
  std::vector<Triple> positives;
};

struct PositiveJob {
  Triple asked;  // query actually run (head corruptions go through the inverse)
  std::vector<id_t> negatives;
  std::vector<std::size_t> removed;
};

inline std::vector<std::size_t> target_indices(const KnowledgeGraph& g, const Triple& t) {
  std::vector<std::size_t> out;
  for (const Triple& x : {t, g.inverse(t)})
    if (auto i = g.index_of(x)) out.push_back(*i);
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace detail

/**
 * Mean BCE loss of one batch for `params`, and its gradient map. Each positive
 * gets its own conditioned forward pass; gradients are summed in batch order.
 */
template <class T>
std::pair<double, std::map<std::string, ad::Tensor<T>>> batch_loss_and_grad(
    const ModelParams<T>& params, const GraphContext<T>& ctx, Task task, const std::vector<detail::PositiveJob>& jobs,
    std::size_t threads = 1) {
  std::vector<double> losses(jobs.size());
  std::vector<std::map<std::string, ad::Tensor<T>>> grads(jobs.size());
  detail::parallel_for(jobs.size(), threads, [&](std::size_t k) {
    const auto& job = jobs[k];
    ad::Tape<T> tape;
    Binding<T> p(tape, params, true);
    ForwardOptions opt;
    opt.removed_triples = job.removed;
    auto scores = task == Task::ENTITY ? forward_entity(p, ctx, params.config, job.asked.head, job.asked.relation, opt)
                                       : forward_relation(p, ctx, params.config, job.asked.head, job.asked.tail, opt);
    const id_t target = task == Task::ENTITY ? job.asked.tail : job.asked.relation;
    auto pos = ad::gather(ad::reshape(scores, {scores.value().size(), 1}), std::vector<ad::index_t>{target});
    auto neg = ad::gather(ad::reshape(scores, {scores.value().size(), 1}), job.negatives);
    auto loss = bce_loss(pos, neg);
    losses[k] = loss.value()[0];
    grads[k] = tape.backward(loss);
  });
  double total = 0.0;
  std::map<std::string, ad::Tensor<T>> sum;
  const T inv = T(1) / static_cast<T>(jobs.size());
  for (std::size_t k = 0; k < jobs.size(); ++k) {
    total += losses[k];
    for (auto& [name, g] : grads[k]) {
      auto [it, fresh] = sum.emplace(name, ad::Tensor<T>(g.shape()));
      (void)fresh;
      for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i] * inv;
    }
  }
  return {total / static_cast<double>(jobs.size()), std::move(sum)};
}

/**
 * Builds the jobs of one batch: positives drawn uniformly from the graph's
 * base triples. Entity task: a coin flip per positive picks head or tail
 * corruption, and head corruption is asked as a tail query of the inverse.
 */
inline std::vector<detail::PositiveJob> make_batch(const KnowledgeGraph& g, std::span<const Triple> positives,
                                                   const TrainConfig& tc, std::mt19937_64& rng, bool& degenerate) {
  std::uniform_int_distribution<std::size_t> pick(0, positives.size() - 1);
  std::bernoulli_distribution coin(0.5);
  std::vector<detail::PositiveJob> jobs;
  jobs.reserve(tc.batch_size);
  for (std::size_t b = 0; b < tc.batch_size; ++b) {
    const Triple pos = positives[pick(rng)];
    detail::PositiveJob job;
    if (tc.task == Task::ENTITY) {
      const bool head = coin(rng);
      auto ns = sample_negatives(g, pos, tc.task, tc.negatives, rng, head ? CorruptionSide::HEAD : CorruptionSide::TAIL);
      degenerate = degenerate || ns.degenerate;
      job.asked = head ? g.inverse(pos) : pos;
      for (const Triple& n : ns.triples) job.negatives.push_back(head ? n.head : n.tail);
    } else {
      auto ns = sample_negatives(g, pos, tc.task, tc.negatives, rng);
      degenerate = degenerate || ns.degenerate;
      job.asked = pos;
      for (const Triple& n : ns.triples) job.negatives.push_back(n.relation);
    }
    if (tc.remove_targets) job.removed = detail::target_indices(g, pos);
    jobs.push_back(std::move(job));
  }
  return jobs;
}

/// Filtered MRR on up to `cap` validation queries (tail-only for entities).
inline double validation_mrr(const ModelParams<float>& params, const detail::PreparedGraph& pg, Task task,
                             std::size_t cap, std::size_t threads) {
  EvalOptions opt;
  opt.max_queries = cap;
  opt.tail_only = true;
  opt.threads = threads;
  const auto& q = pg.source->valid_queries;
  if (task == Task::ENTITY) return evaluate_entity(params, *pg.ctx, q, pg.filter, opt).at("filtered/tail").mrr;
  return evaluate_relation(params, *pg.ctx, q, pg.filter, opt).at("filtered/relation").mrr;
}

/**
 * Trains on a uniform per-step mixture of graphs. Keeps the parameters of
 * the epoch with the best validation MRR and stops after `early_stop_patience`
 * epochs without improvement.
 */
inline TrainResult train(std::span<const TrainingGraph> graphs, const ModelParams<float>& initial,
                         const TrainConfig& tc, const TrainHooks& hooks = {}) {
  tc.validate();
  initial.check_shapes();
  if (graphs.empty()) throw config_error("training needs at least one graph");
  const ModelConfig& mc = initial.config;

  std::vector<detail::PreparedGraph> prepared;
  prepared.reserve(graphs.size());
  for (const auto& tg : graphs) {
    detail::PreparedGraph pg;
    pg.source = &tg;
    pg.positives = tg.graph.base_triples();
    if (pg.positives.empty()) throw config_error("training graph '" + tg.name + "' has no triples");
    if (tc.task == Task::RELATION && tg.graph.num_relations_base() < 2)
      throw config_error("relation training needs at least two relations in '" + tg.name + "'");
    pg.rg = build_relation_graph(tg.graph, mc.relgraph_mode);
    prepared.push_back(std::move(pg));
  }
  for (auto& pg : prepared) {
    pg.ctx = std::make_unique<GraphContext<float>>(pg.source->graph, pg.rg, mc.message_weighting);
    pg.filter = make_filter(pg.source->graph, {std::span<const Triple>(pg.source->valid_queries)});
  }

  TrainResult result;
  result.params = initial;
  ModelParams<float> best = initial;
  std::optional<double> best_mrr;
  std::size_t stale = 0;
  AdamW<float> opt(tc);
  std::mt19937_64 rng(tc.seed);
  std::uniform_int_distribution<std::size_t> pick_graph(0, prepared.size() - 1);
  std::size_t global_step = 0;

  for (std::size_t epoch = 1; epoch <= tc.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    EpochMetrics em;
    em.epoch = epoch;
    double loss_sum = 0.0;
    for (std::size_t s = 0; s < tc.steps_per_epoch; ++s) {
      const auto& pg = prepared[pick_graph(rng)];
      const auto jobs = make_batch(pg.source->graph, pg.positives, tc, rng, em.degenerate_negatives);
      auto [loss, grads] = batch_loss_and_grad(result.params, *pg.ctx, tc.task, jobs, tc.threads);
      if (!std::isfinite(loss)) {
        std::ostringstream msg;
        msg << "non-finite loss at step " << global_step << " on graph '" << pg.source->name << "', first query ("
            << jobs.front().asked.head << ", " << jobs.front().asked.relation << ", " << jobs.front().asked.tail << ")";
        throw numeric_error(msg.str());
      }
      opt.step(result.params.tensors, grads);
      loss_sum += loss;
      ++global_step;
      if (hooks.on_step) hooks.on_step(global_step, loss);
    }
    em.mean_loss = loss_sum / static_cast<double>(tc.steps_per_epoch);

    double mrr_sum = 0.0;
    std::size_t with_valid = 0;
    for (const auto& pg : prepared)
      if (!pg.source->valid_queries.empty()) {
        mrr_sum += validation_mrr(result.params, pg, tc.task, tc.validation_queries, tc.threads);
        ++with_valid;
      }
    if (with_valid) em.valid_mrr = mrr_sum / static_cast<double>(with_valid);
    em.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.metrics.push_back(em);
    if (hooks.on_epoch) hooks.on_epoch(em);

    if (!em.valid_mrr) {
      best = result.params;
      result.best_epoch = epoch;
      continue;
    }
    if (!best_mrr || *em.valid_mrr > *best_mrr) {
      best_mrr = em.valid_mrr;
      best = result.params;
      result.best_epoch = epoch;
      stale = 0;
    } else if (++stale >= tc.early_stop_patience && tc.early_stop_patience > 0) {
      result.early_stopped = true;
      break;
    }
  }
  result.params = std::move(best);
  return result;
}

}  // namespace trix
