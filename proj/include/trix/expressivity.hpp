#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "trix/color_refinement.hpp"
#include "trix/counterexample.hpp"
#include "trix/eval.hpp"
#include "trix/kg.hpp"
#include "trix/model.hpp"
#include "trix/relgraph.hpp"

namespace trix {

/// Random graph with `num_triples` distinct base triples (fewer if the id space is smaller).
inline KnowledgeGraph random_graph(std::mt19937_64& rng, id_t num_entities, id_t num_relations,
                                   std::size_t num_triples) {
  std::vector<std::string> entities(num_entities), relations(num_relations);
  for (id_t i = 0; i < num_entities; ++i) entities[i] = "e" + std::to_string(i);
  for (id_t i = 0; i < num_relations; ++i) relations[i] = "r" + std::to_string(i);
  const std::size_t space = static_cast<std::size_t>(num_entities) * num_entities * num_relations;
  num_triples = std::min(num_triples, space);
  std::uniform_int_distribution<id_t> ent(0, num_entities - 1), rel(0, num_relations - 1);
  std::set<Triple> chosen;
  while (chosen.size() < num_triples) {
    const id_t h = ent(rng);
    const id_t r = rel(rng);
    chosen.insert({h, r, ent(rng)});
  }
  std::vector<Triple> triples(chosen.begin(), chosen.end());
  std::shuffle(triples.begin(), triples.end(), rng);
  return KnowledgeGraph::from_base_triples(std::move(entities), std::move(relations), triples);
}

inline std::vector<id_t> random_permutation(std::mt19937_64& rng, std::size_t n) {
  std::vector<id_t> p(n);
  std::iota(p.begin(), p.end(), id_t{0});
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

namespace detail {

inline bool differs(double a, double b) {
  return std::abs(a - b) > 1e-9 * std::max({1.0, std::abs(a), std::abs(b)});
}

inline double rel_error(double expected, double actual) {
  return std::abs(expected - actual) / std::max(1.0, std::abs(expected));
}

}  // namespace detail

struct SeparationCertificate {
  Gadget gadget = Gadget::ULTRA_GADGET;
  RelGraphMode fooled_mode = RelGraphMode::ULTRA;
  MessageWeighting weighting = MessageWeighting::BINARY;
  std::size_t seeds = 0;
  /// Seeds on which the fooled model scores each pair bitwise equal.
  std::size_t fooled_entity_equal = 0;
  std::size_t fooled_relation_equal = 0;
  /// Seeds on which the TRIX model scores the pair differently.
  std::size_t trix_entity_separated = 0;
  std::size_t trix_relation_separated = 0;
  bool ultra_constant = false;
  double trix_separates = 0.0;
  double trix_separates_relation = 0.0;
  GadgetCertificate certificate;

  bool passed() const {
    return certificate.valid() && ultra_constant && trix_separates >= 0.95 && trix_separates_relation >= 0.95;
  }
};

/**
 * Scores the gadget's query pair under the fooled collapsed mode and under
 * TRIX for `seeds` random parameter draws, in double precision with canonical
 * summation order so that structurally equal sums are bitwise equal.
 *
 * Entity task: scores of t_a and t_b for the query (h, r3, ?).
 * Relation task: score of r3 for (h, ?, t_a) versus (h, ?, t_b).
 */
inline SeparationCertificate check_separation(Gadget which, std::size_t seeds,
                                              MessageWeighting weighting = MessageWeighting::BINARY,
                                              ModelConfig cfg = {}) {
  const Counterexample ce = build_counterexample(which);
  SeparationCertificate cert;
  cert.gadget = which;
  cert.fooled_mode = ce.fooled_mode;
  cert.weighting = weighting;
  cert.seeds = seeds;
  cert.certificate = certify(ce);
  cfg.message_weighting = weighting;

  const RelationGraph fooled_rg = build_relation_graph(ce.graph, ce.fooled_mode);
  const RelationGraph trix_rg = build_relation_graph(ce.graph, RelGraphMode::TRIX);
  for (std::size_t s = 0; s < seeds; ++s) {
    for (bool trix : {false, true}) {
      ModelConfig c = cfg;
      c.relgraph_mode = trix ? RelGraphMode::TRIX : ce.fooled_mode;
      const auto params = ModelParams<double>::init(c, s);
      const GraphContext<double> ctx(ce.graph, trix ? trix_rg : fooled_rg, weighting, ad::Summation::CANONICAL);
      const auto ent = score_entities(params, ctx, ce.h, ce.r3);
      const auto rel_a = score_relations(params, ctx, ce.h, ce.t_a);
      const auto rel_b = score_relations(params, ctx, ce.h, ce.t_b);
      const bool ent_equal = ent[ce.t_a] == ent[ce.t_b];
      const bool rel_equal = rel_a[ce.r3] == rel_b[ce.r3];
      if (trix) {
        cert.trix_entity_separated += detail::differs(ent[ce.t_a], ent[ce.t_b]) ? 1 : 0;
        cert.trix_relation_separated += detail::differs(rel_a[ce.r3], rel_b[ce.r3]) ? 1 : 0;
      } else {
        cert.fooled_entity_equal += ent_equal ? 1 : 0;
        cert.fooled_relation_equal += rel_equal ? 1 : 0;
      }
    }
  }
  cert.ultra_constant = seeds > 0 && cert.fooled_entity_equal == seeds && cert.fooled_relation_equal == seeds;
  if (seeds) {
    cert.trix_separates = static_cast<double>(cert.trix_entity_separated) / static_cast<double>(seeds);
    cert.trix_separates_relation = static_cast<double>(cert.trix_relation_separated) / static_cast<double>(seeds);
  }
  return cert;
}

/**
 * Count-only relation rounds computed with dense loops: edge weights are
 * summed over shared entities into C[dst][src][role] straight from the
 * triples, then Z' = relu(norm(W [Z, sum C Z[src] * role] + b)).
 */
inline ad::Tensor<double> dense_count_pipeline(const KnowledgeGraph& g, const ModelParams<double>& params,
                                               const ad::Tensor<double>& z0, std::size_t rounds,
                                               MessageWeighting weighting) {
  const std::size_t nv = g.num_entities(), nr = g.num_relations(), d = params.config.hidden_dim;
  std::vector<std::vector<std::uint64_t>> eh(nv, std::vector<std::uint64_t>(nr, 0)), et = eh;
  for (const Triple& t : g.triples()) {
    ++eh[t.head][t.relation];
    ++et[t.tail][t.relation];
  }
  std::vector<double> c(nr * nr * kNumRoles, 0.0);
  auto at = [&](std::size_t dst, std::size_t src, std::size_t role) -> double& {
    return c[(dst * nr + src) * kNumRoles + role];
  };
  for (std::size_t v = 0; v < nv; ++v)
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nr; ++j) {
        const std::uint64_t prod[kNumRoles] = {eh[v][i] * eh[v][j], et[v][i] * et[v][j], eh[v][i] * et[v][j],
                                               et[v][i] * eh[v][j]};
        for (std::size_t role = 0; role < kNumRoles; ++role) {
          if (prod[role] == 0) continue;
          at(i, j, role) += weighting == MessageWeighting::BINARY ? 1.0 : std::log1p(static_cast<double>(prod[role]));
        }
      }

  ad::Tensor<double> z = z0;
  for (std::size_t round = 0; round < rounds; ++round) {
    const std::string prefix = "relation." + std::to_string(round);
    const auto& role = params.at(prefix + ".role");
    const auto& w = params.at(prefix + ".weight");
    const auto& b = params.at(prefix + ".bias");
    ad::Tensor<double> next({nr, d});
    for (std::size_t dst = 0; dst < nr; ++dst) {
      std::vector<double> agg(d, 0.0);
      for (std::size_t src = 0; src < nr; ++src)
        for (std::size_t k = 0; k < kNumRoles; ++k) {
          const double cw = at(dst, src, k);
          if (cw == 0.0) continue;
          for (std::size_t q = 0; q < d; ++q) agg[q] += cw * z(src, q) * role(k, q);
        }
      std::vector<double> acc(d);
      for (std::size_t q = 0; q < d; ++q) {
        acc[q] = b[q];
        for (std::size_t p = 0; p < d; ++p) acc[q] += z(dst, p) * w(p, q) + agg[p] * w(d + p, q);
      }
      if (params.config.layer_norm) {
        double mean = 0.0, var = 0.0;
        for (double a : acc) mean += a;
        mean /= static_cast<double>(d);
        for (double a : acc) var += (a - mean) * (a - mean);
        var /= static_cast<double>(d);
        for (double& a : acc) a = (a - mean) / std::sqrt(var + 1e-5);
      }
      for (std::size_t q = 0; q < d; ++q) next(dst, q) = std::max(0.0, acc[q]);
    }
    z = std::move(next);
  }
  return z;
}

/// Runs `rounds` relation layers of the model with a fixed entity matrix.
inline ad::Tensor<double> relation_rounds(const ModelParams<double>& params, const GraphContext<double>& ctx,
                                          const ad::Tensor<double>& z0, const ad::Tensor<double>& x,
                                          std::size_t rounds) {
  ad::Tape<double> tape;
  Binding<double> p(tape, params, false);
  auto z = tape.constant(z0);
  const auto xv = tape.constant(x);
  const auto w = ctx.relation_weights({});
  for (std::size_t i = 0; i < rounds; ++i) z = relation_layer(p, ctx.relgraph(), z, xv, i, w);
  return z.value();
}

struct SubsumptionReport {
  std::size_t trials = 0;
  /// Constrained TRIX (X pinned to ones) against the dense count-only pipeline.
  double max_abs_diff_trix = 0.0;
  /// Collapsed (ULTRA-mode) layer with random X against the same pipeline.
  double max_abs_diff_ultra = 0.0;
  bool passed = false;
};

/**
 * On random graphs of at most 15 triples: relation rounds of TRIX with every
 * entity embedding pinned to ones (entity updates skipped) must reproduce a
 * dense count-only pipeline at equal parameters, to 1e-6.
 */
inline SubsumptionReport check_subsumption(std::size_t trials, std::uint64_t seed = 0,
                                           MessageWeighting weighting = MessageWeighting::BINARY) {
  SubsumptionReport rep;
  rep.trials = trials;
  std::mt19937_64 rng(seed);
  for (std::size_t t = 0; t < trials; ++t) {
    const id_t nv = std::uniform_int_distribution<id_t>(2, 8)(rng);
    const id_t nr = std::uniform_int_distribution<id_t>(1, 3)(rng);
    const std::size_t ne = std::uniform_int_distribution<std::size_t>(1, 15)(rng);
    const KnowledgeGraph g = random_graph(rng, nv, nr, ne);

    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.rounds_entity = 3;
    cfg.rounds_relation = 3;
    cfg.message_weighting = weighting;
    auto params = ModelParams<double>::init(cfg, rng());
    std::uniform_real_distribution<double> jitter(0.5, 1.5);
    for (auto& [name, tensor] : params.tensors)
      if (name.ends_with(".role"))
        for (auto& v : tensor.data()) v = jitter(rng);

    const id_t q = std::uniform_int_distribution<id_t>(0, g.num_relations() - 1)(rng);
    ad::Tensor<double> z0({g.num_relations(), cfg.hidden_dim});
    for (std::size_t k = 0; k < cfg.hidden_dim; ++k) z0(q, k) = 1.0;
    const auto expected = dense_count_pipeline(g, params, z0, cfg.rounds_relation, weighting);

    const RelationGraph trix = build_relation_graph(g, RelGraphMode::TRIX);
    const RelationGraph ultra = build_relation_graph(g, RelGraphMode::ULTRA);
    const GraphContext<double> trix_ctx(g, trix, weighting), ultra_ctx(g, ultra, weighting);
    const ad::Tensor<double> ones({g.num_entities(), cfg.hidden_dim}, 1.0);
    ad::Tensor<double> noise({g.num_entities(), cfg.hidden_dim});
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (auto& v : noise.data()) v = u(rng);

    const auto got_trix = relation_rounds(params, trix_ctx, z0, ones, cfg.rounds_relation);
    const auto got_ultra = relation_rounds(params, ultra_ctx, z0, noise, cfg.rounds_relation);
    for (std::size_t i = 0; i < expected.size(); ++i) {
      rep.max_abs_diff_trix = std::max(rep.max_abs_diff_trix, std::abs(expected[i] - got_trix[i]));
      rep.max_abs_diff_ultra = std::max(rep.max_abs_diff_ultra, std::abs(expected[i] - got_ultra[i]));
    }
  }
  rep.passed = rep.max_abs_diff_trix < 1e-6 && rep.max_abs_diff_ultra < 1e-6;
  return rep;
}

struct EquivarianceReport {
  std::size_t permutations = 0;
  double max_rel_error_entity = 0.0;
  double max_rel_error_relation = 0.0;
  bool mrr_equal = true;
  bool passed = false;
};

/**
 * For random entity and relation permutations, checks that every query's
 * score vector on the permuted graph is the permuted original within 1e-5
 * (relative, floored at 1), for both tasks, and that the entity-task ranking
 * metrics are bitwise equal.
 */
inline EquivarianceReport check_equivariance(const KnowledgeGraph& g, std::span<const Triple> queries,
                                             const ModelParams<double>& params, std::size_t perms,
                                             std::uint64_t seed = 0, bool inject_entity_ids = false) {
  EquivarianceReport rep;
  rep.permutations = perms;
  std::mt19937_64 rng(seed);
  const ModelConfig& cfg = params.config;
  ForwardOptions opt;
  opt.inject_entity_ids = inject_entity_ids;

  const RelationGraph rg = build_relation_graph(g, cfg.relgraph_mode);
  const GraphContext<double> ctx(g, rg, cfg.message_weighting);
  const FilterIndex filter = make_filter(g, {queries});
  const std::vector<Triple> qs(queries.begin(), queries.end());

  std::vector<std::vector<double>> ent_scores, rel_scores;
  for (const Triple& q : qs) {
    ent_scores.push_back(score_entities(params, ctx, q.head, q.relation, opt));
    rel_scores.push_back(q.head != q.tail ? score_relations(params, ctx, q.head, q.tail, opt) : std::vector<double>{});
  }
  const auto base_report = evaluate_entity(params, ctx, qs, filter);

  for (std::size_t k = 0; k < perms; ++k) {
    const auto pv = random_permutation(rng, g.num_entities());
    const auto pr_base = random_permutation(rng, g.num_relations_base());
    const auto pr = augment_relation_permutation(pr_base);
    const KnowledgeGraph pg = permute_graph(g, pv, pr_base);
    const RelationGraph prg = build_relation_graph(pg, cfg.relgraph_mode);
    const GraphContext<double> pctx(pg, prg, cfg.message_weighting);
    std::vector<Triple> pqs;
    for (const Triple& q : qs) pqs.push_back({pv[q.head], pr[q.relation], pv[q.tail]});

    for (std::size_t i = 0; i < qs.size(); ++i) {
      const auto s = score_entities(params, pctx, pqs[i].head, pqs[i].relation, opt);
      for (id_t u = 0; u < g.num_entities(); ++u)
        rep.max_rel_error_entity = std::max(rep.max_rel_error_entity, detail::rel_error(ent_scores[i][u], s[pv[u]]));
      if (rel_scores[i].empty()) continue;
      const auto rs = score_relations(params, pctx, pqs[i].head, pqs[i].tail, opt);
      for (id_t r = 0; r < g.num_relations(); ++r)
        rep.max_rel_error_relation =
            std::max(rep.max_rel_error_relation, detail::rel_error(rel_scores[i][r], rs[pr[r]]));
    }
    const auto perm_report = evaluate_entity(params, pctx, pqs, make_filter(pg, {pqs}));
    for (const auto& [key, m] : base_report.metrics) {
      const auto& other = perm_report.at(key);
      rep.mrr_equal = rep.mrr_equal && m.mrr == other.mrr && m.hits1 == other.hits1 && m.hits10 == other.hits10;
    }
  }
  rep.passed = rep.max_rel_error_entity <= 1e-5 && rep.max_rel_error_relation <= 1e-5 && rep.mrr_equal;
  return rep;
}

}  // namespace trix
