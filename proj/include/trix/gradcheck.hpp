#pragma once

#include <cmath>
#include <cstdint>
#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "trix/kg.hpp"
#include "trix/model.hpp"
#include "trix/relgraph.hpp"
#include "trix/training.hpp"

namespace trix {

struct GradCheckReport {
  std::uint64_t seed = 0;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
  std::string worst;
  /// Elements re-measured with a smaller step because a relu kink fell inside the interval.
  std::size_t refined = 0;
  /// Largest error per parameter tensor.
  std::map<std::string, double> per_tensor;
  bool passed = false;
};

/// Five entities, two relations, six triples.
inline KnowledgeGraph gradcheck_graph() {
  return KnowledgeGraph::from_base_triples({"a", "b", "c", "d", "e"}, {"p", "q"},
                                           std::vector<Triple>{{0, 0, 1}, {1, 1, 2}, {2, 0, 3}, {3, 1, 4}, {4, 0, 0},
                                                               {0, 1, 2}});
}

/**
 * Central-difference check of the training loss gradient with respect to
 * every element of every parameter tensor. The loss sums an entity-task
 * batch and a relation-task batch, with targets hidden from message passing,
 * so both score heads and all layer parameters are exercised.
 * Error: |analytic - numeric| / max(1, |numeric|).
 * An element that fails while its forward and backward one-sided differences
 * disagree has a relu kink inside [x - step, x + step]; it is measured again
 * with step / 10 and step / 100 and keeps the best of those.
 */
inline GradCheckReport gradient_check(const KnowledgeGraph& g, const ModelConfig& cfg, std::uint64_t seed,
                                      double step = 1e-5, double tolerance = 1e-4) {
  GradCheckReport rep;
  rep.seed = seed;
  ModelParams<double> params = ModelParams<double>::init(cfg, seed);
  std::mt19937_64 rng(seed);
  // Role vectors start at one; move them off that point so the check is not degenerate.
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  for (auto& [name, t] : params.tensors)
    if (name.ends_with(".role"))
      for (auto& v : t.data()) v = jitter(rng);

  const RelationGraph rg = build_relation_graph(g, cfg.relgraph_mode);
  const GraphContext<double> ctx(g, rg, cfg.message_weighting);
  TrainConfig tc;
  tc.negatives = 3;
  tc.batch_size = 2;
  tc.task = Task::ENTITY;
  const std::vector<Triple> positives = g.base_triples();
  bool degenerate = false;
  const auto entity_jobs = make_batch(g, positives, tc, rng, degenerate);
  tc.task = Task::RELATION;
  const auto relation_jobs = make_batch(g, positives, tc, rng, degenerate);

  auto loss_and_grad = [&](const ModelParams<double>& p) {
    auto [le, ge] = batch_loss_and_grad(p, ctx, Task::ENTITY, entity_jobs);
    auto [lr, gr] = batch_loss_and_grad(p, ctx, Task::RELATION, relation_jobs);
    for (auto& [name, t] : gr)
      for (std::size_t i = 0; i < t.size(); ++i) ge[name][i] += t[i];
    return std::make_pair(le + lr, ge);
  };

  const auto [base_loss, analytic] = loss_and_grad(params);
  for (auto& [name, tensor] : params.tensors) {
    double worst = 0.0;
    for (std::size_t i = 0; i < tensor.size(); ++i) {
      const double orig = tensor[i];
      const double exact = analytic.at(name)[i];
      // Returns the error and the disagreement between the two one-sided differences.
      auto measure = [&](double h) {
        tensor[i] = orig + h;
        const double up = loss_and_grad(params).first;
        tensor[i] = orig - h;
        const double down = loss_and_grad(params).first;
        tensor[i] = orig;
        const double numeric = (up - down) / (2 * h);
        const double scale = std::max(1.0, std::abs(numeric));
        return std::make_pair(std::abs(exact - numeric) / scale,
                              std::abs((up - base_loss) - (base_loss - down)) / h / scale);
      };
      auto [err, gap] = measure(step);
      if (err >= tolerance && gap >= tolerance) {
        ++rep.refined;
        for (double h : {step / 10, step / 100}) err = std::min(err, measure(h).first);
      }
      worst = std::max(worst, err);
      if (err > rep.max_rel_error || rep.worst.empty()) {
        rep.max_rel_error = err;
        rep.worst = name + "[" + std::to_string(i) + "]";
      }
      ++rep.checked;
    }
    rep.per_tensor[name] = worst;
  }
  rep.passed = rep.max_rel_error < tolerance;
  return rep;
}

}  // namespace trix
