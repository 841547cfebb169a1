#pragma once

#include <string>
#include <vector>

#include "trix/color_refinement.hpp"
#include "trix/errors.hpp"
#include "trix/kg.hpp"
#include "trix/relgraph.hpp"

namespace trix {

enum class Gadget : std::uint8_t { ULTRA_GADGET, INGRAM_GADGET };

inline const char* to_string(Gadget g) { return g == Gadget::ULTRA_GADGET ? "ultra_gadget" : "ingram_gadget"; }

/**
 * A small disconnected graph on which a collapsed relation graph cannot tell
 * r1 from r2 while the entity-attributed one can. The held-out pair
 * (h, r3, t_a) / (h, r3, t_b) differs only in whether t_a hangs off h via r1
 * or t_b via r2.
 */
struct Counterexample {
  Gadget which;
  KnowledgeGraph graph;
  /// Collapsed mode that is fooled by the gadget.
  RelGraphMode fooled_mode;
  id_t h, t_a, t_b;
  id_t r1, r2, r3;
  Triple query_a, query_b;
};

/// Certificate of the two automorphism properties a gadget must satisfy.
struct GadgetCertificate {
  bool collapsed_automorphic = false;
  bool collapsed_same_color = false;
  bool trix_automorphic = true;
  std::optional<std::size_t> trix_separation_round;

  bool valid() const {
    return collapsed_automorphic && collapsed_same_color && !trix_automorphic && trix_separation_round.has_value();
  }
};

inline GadgetCertificate certify(const Counterexample& ce) {
  GadgetCertificate c;
  const RelationGraph collapsed = build_relation_graph(ce.graph, ce.fooled_mode);
  const RelationGraph trix = build_relation_graph(ce.graph, RelGraphMode::TRIX);
  c.collapsed_automorphic = find_automorphism(collapsed, ce.r1, ce.r2).has_value();
  const auto cr = refine_colors(ce.graph, collapsed);
  c.collapsed_same_color = !cr.separation_round(ce.r1, ce.r2).has_value();
  c.trix_automorphic = find_automorphism(trix, ce.r1, ce.r2).has_value();
  c.trix_separation_round = refine_colors(ce.graph, trix).separation_round(ce.r1, ce.r2);
  return c;
}

namespace detail {

struct GadgetBuilder {
  std::vector<std::string> entities;
  std::vector<Triple> triples;

  id_t entity(const std::string& name) {
    entities.push_back(name);
    return static_cast<id_t>(entities.size() - 1);
  }
  void add(id_t h, id_t r, id_t t) { triples.push_back({h, r, t}); }
};

}  // namespace detail

/**
 * Builds a gadget and checks its certificate; throws validation_error if the
 * construction does not have the required properties.
 *
 * Relations r1 and r2 get adjacent ids so that sums over relation-graph
 * edges visit them in mirrored positions; this keeps the fooled model's
 * outputs bitwise equal, not just equal in exact arithmetic.
 *
 * ULTRA gadget, all tails fresh leaves unless named:
 *   h -r1-> t_a, h -r2-> t_b
 *   c1 -r1,r3,r4-> leaves;  c2 -r1-> leaf
 *   d1 -r2,r3-> leaves;     d2 -r2,r4-> leaves
 * r1 and r2 share heads with r3 and r4 equally often, but r1 meets both at
 * one entity (c1) while r2 meets them at two (d1, d2).
 *
 * InGram gadget: the same pattern on tails (fresh leaf heads), plus an r5 edge
 * from c1 to c2 and from d1 to d2; only head-head and tail-tail roles exist.
 */
inline Counterexample build_counterexample(Gadget which) {
  detail::GadgetBuilder b;
  Counterexample ce;
  ce.which = which;
  ce.r1 = 0;
  ce.r2 = 1;
  ce.r3 = 2;
  const id_t r1 = 0, r2 = 1, r3 = 2, r4 = 3, r5 = 4;
  std::vector<std::string> relations{"r1", "r2", "r3", "r4"};
  ce.h = b.entity("h");
  ce.t_a = b.entity("t_a");
  ce.t_b = b.entity("t_b");
  b.add(ce.h, r1, ce.t_a);
  b.add(ce.h, r2, ce.t_b);
  int leaves = 0;
  auto leaf = [&] { return b.entity("leaf" + std::to_string(++leaves)); };

  if (which == Gadget::ULTRA_GADGET) {
    ce.fooled_mode = RelGraphMode::ULTRA;
    const id_t c1 = b.entity("c1"), c2 = b.entity("c2"), d1 = b.entity("d1"), d2 = b.entity("d2");
    for (id_t r : {r1, r3, r4}) b.add(c1, r, leaf());
    b.add(c2, r1, leaf());
    for (id_t r : {r2, r3}) b.add(d1, r, leaf());
    for (id_t r : {r2, r4}) b.add(d2, r, leaf());
  } else {
    ce.fooled_mode = RelGraphMode::INGRAM;
    relations.push_back("r5");
    const id_t c1 = b.entity("c1"), c2 = b.entity("c2"), d1 = b.entity("d1"), d2 = b.entity("d2");
    for (id_t r : {r1, r3, r4}) b.add(leaf(), r, c1);
    b.add(leaf(), r1, c2);
    for (id_t r : {r2, r3}) b.add(leaf(), r, d1);
    for (id_t r : {r2, r4}) b.add(leaf(), r, d2);
    b.add(c1, r5, c2);
    b.add(d1, r5, d2);
  }
  ce.graph = KnowledgeGraph::from_base_triples(std::move(b.entities), std::move(relations), b.triples);
  ce.query_a = {ce.h, ce.r3, ce.t_a};
  ce.query_b = {ce.h, ce.r3, ce.t_b};
  if (!certify(ce).valid()) throw validation_error(std::string(to_string(which)) + " failed its certificate");
  return ce;
}

}  // namespace trix
