// Acceptance run: one PASS / FAIL / SKIP line per criterion.
// Dataset-backed criteria look under $TRIX_DATA_DIR and print SKIP when the data is absent.
// Exit status is 1 if any criterion fails, else 0.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "test_util.hpp"
#include "trix/trix.hpp"

namespace fs = std::filesystem;
using namespace trix;

namespace {

// Tolerances and thresholds.
constexpr double kGradTolerance = 1e-4;
constexpr double kEquivarianceTolerance = 1e-5;
constexpr double kSubsumptionTolerance = 1e-6;
constexpr double kOverfitLoss = 1e-2;
constexpr std::size_t kOverfitSteps = 500;
constexpr double kEntityMrrMin = 0.25;
constexpr double kEntityHits10Min = 0.45;
constexpr double kRelationMrrMin = 0.50;

enum class Outcome { PASS, FAIL, SKIP };

struct Line {
  Outcome outcome;
  std::string detail;
};

int failures = 0;

void report(int id, const char* name, const Line& l, double seconds) {
  const char* tag = l.outcome == Outcome::PASS ? "PASS" : l.outcome == Outcome::FAIL ? "FAIL" : "SKIP";
  if (l.outcome == Outcome::FAIL) ++failures;
  std::printf("C%-2d %-24s %s  %s  [%.1fs]\n", id, name, tag, l.detail.c_str(), seconds);
  std::fflush(stdout);
}

void run(int id, const char* name, const std::function<Line()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Line l;
  try {
    l = body();
  } catch (const std::exception& e) {
    l = {Outcome::FAIL, std::string("exception: ") + e.what()};
  }
  report(id, name, l, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Outcome pass_if(bool ok) { return ok ? Outcome::PASS : Outcome::FAIL; }

/// First existing dataset directory among `names` under $TRIX_DATA_DIR.
std::optional<fs::path> find_dataset(std::initializer_list<const char*> names) {
  const char* root = std::getenv("TRIX_DATA_DIR");
  if (!root || !*root) return std::nullopt;
  for (const char* n : names)
    if (fs::is_directory(fs::path(root) / n)) return fs::path(root) / n;
  return std::nullopt;
}

// ---- C1 ----

Line dataset_statistics() {
  const auto root = find_dataset({"WN18RR", "wn18rr"});
  if (!root) return {Outcome::SKIP, "WN18RR not found under $TRIX_DATA_DIR"};
  const KnowledgeGraph all = load_graph(*root, {"train.txt", "valid.txt", "test.txt"});
  const KnowledgeGraph g = load_graph(*root, {"train.txt"});
  const auto conventions = count_conventions(g);
  bool alpha7 = false;
  std::string alpha_spaces, counts, match = "none";
  for (const auto& c : conventions) {
    if (c.self_pairs) {
      alpha_spaces += fmt("%s alpha=%u ", c.name.c_str(), c.alpha);
      alpha7 = alpha7 || c.alpha == 7;
    }
    counts += fmt("%s:%llu/%llu ", c.name.c_str(), (unsigned long long)c.entries, (unsigned long long)c.count_sum);
    if (c.entries == 314481 || c.count_sum == 314481) match = c.name;
  }
  // Without an exact published-count match the bound and collapse consistency must hold.
  const RelationGraph trix = build_relation_graph(g, RelGraphMode::TRIX);
  const RelationGraph ultra = build_relation_graph(g, RelGraphMode::ULTRA);
  const auto st = compute_stats(trix);
  std::uint64_t summed = 0, collapsed = 0;
  for (const RelEdge& e : trix.edges()) summed += e.count;
  for (const RelEdge& e : ultra.edges()) collapsed += e.count;
  const bool structural = st.edge_count <= st.bound && summed == collapsed;
  const bool ok = all.num_entities() == 40943 && g.num_relations_base() == 11 && g.num_base_triples() == 86835 &&
                  alpha7 && (match != "none" || structural);
  return {pass_if(ok), fmt("|V|=%u |R|=%u train=%zu %s| edges(entries/count_sum) %s| 314481 matches: %s",
                           all.num_entities(), g.num_relations_base(), g.num_base_triples(), alpha_spaces.c_str(),
                           counts.c_str(), match.c_str())};
}

// ---- C2 ----

Line gradient_correctness() {
  const KnowledgeGraph g = gradcheck_graph();
  double worst = 0.0;
  std::size_t checked = 0, refined = 0;
  bool ok = true;
  for (RelGraphMode mode : {RelGraphMode::TRIX, RelGraphMode::ULTRA}) {
    ModelConfig cfg;
    cfg.hidden_dim = 8;
    cfg.relgraph_mode = mode;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      const auto r = gradient_check(g, cfg, seed, 1e-5, kGradTolerance);
      ok = ok && r.passed && r.per_tensor.size() == parameter_shapes(cfg).size();
      worst = std::max(worst, r.max_rel_error);
      checked += r.checked;
      refined += r.refined;
    }
  }
  return {pass_if(ok && worst < kGradTolerance),
          fmt("seeds 0-4 x {trix, ultra}: %zu elements, max rel err %.2e (tol %.0e), %zu kink re-measurements", checked,
              worst, kGradTolerance, refined)};
}

// ---- C3 ----

Line double_equivariance() {
  std::mt19937_64 rng(2024);
  const KnowledgeGraph g = random_graph(rng, 25, 5, 50);
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  const auto params = ModelParams<double>::init(cfg, 1);
  const auto queries = g.base_triples();
  const auto rep = check_equivariance(g, queries, params, 5, 7);
  const bool ok = rep.max_rel_error_entity <= kEquivarianceTolerance &&
                  rep.max_rel_error_relation <= kEquivarianceTolerance && rep.mrr_equal;
  return {pass_if(ok), fmt("50 triples, 5 permutations: max rel err entity %.2e relation %.2e, MRR bitwise equal %s",
                           rep.max_rel_error_entity, rep.max_rel_error_relation, rep.mrr_equal ? "yes" : "no")};
}

// ---- C4 ----

Line separation() {
  bool ok = true;
  std::string detail;
  for (Gadget which : {Gadget::ULTRA_GADGET, Gadget::INGRAM_GADGET}) {
    const auto c = check_separation(which, 20);
    ok = ok && c.certificate.valid() && c.fooled_entity_equal == 20 && c.fooled_relation_equal == 20 &&
         c.trix_entity_separated >= 19 && c.trix_relation_separated >= 19;
    detail += fmt("%s: %s equal %zu/%zu (entity) %zu/%zu (relation), trix differs %zu/%zu %zu/%zu; ", to_string(which),
                  to_string(c.fooled_mode), c.fooled_entity_equal, c.seeds, c.fooled_relation_equal, c.seeds,
                  c.trix_entity_separated, c.seeds, c.trix_relation_separated, c.seeds);
  }
  return {pass_if(ok), detail};
}

// ---- C5 ----

Line subsumption() {
  const auto r = check_subsumption(10);
  const bool ok = r.max_abs_diff_trix < kSubsumptionTolerance && r.max_abs_diff_ultra < kSubsumptionTolerance;
  return {pass_if(ok), fmt("10 graphs <= 15 triples: max |diff| constrained trix %.2e, collapsed %.2e (tol %.0e)",
                           r.max_abs_diff_trix, r.max_abs_diff_ultra, kSubsumptionTolerance)};
}

// ---- C6 ----

Line one_pass_relation_prediction() {
  ModelConfig cfg;
  cfg.hidden_dim = 16;
  const auto params = ModelParams<float>::init(cfg, 0);
  std::vector<double> times;
  std::vector<std::size_t> layers;
  std::string detail;
  for (id_t nr : {2u, 8u, 32u}) {
    std::mt19937_64 rng(nr);
    const KnowledgeGraph g = random_graph(rng, 400, nr, 2000);
    const RelationGraph rg = build_relation_graph(g);
    const GraphContext<float> ctx(g, rg, cfg.message_weighting);
    ForwardStats stats;
    ForwardOptions opt;
    opt.stats = &stats;
    const auto scores = score_relations(params, ctx, 0, 1, opt);
    if (scores.size() != g.num_relations()) return {Outcome::FAIL, "score vector size mismatch"};
    layers.push_back(stats.entity_layers + stats.relation_layers);
    std::vector<double> samples;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      score_relations(params, ctx, static_cast<id_t>(rep), static_cast<id_t>(rep + 1));
      samples.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    std::nth_element(samples.begin(), samples.begin() + 3, samples.end());
    times.push_back(samples[3]);
    detail += fmt("|R|=%u: %zu layers, %zu relation-graph edges, %.1f ms; ", nr, layers.back(), rg.num_edges(),
                  1e3 * times.back());
  }
  const bool same_layers = std::all_of(layers.begin(), layers.end(), [&](std::size_t l) { return l == layers[0]; });
  const double growth = times[2] / times[0];
  const bool ok = same_layers && layers[0] == 2 * cfg.rounds_relation && growth < 32.0 / 2.0;
  return {pass_if(ok), detail + fmt("time ratio |R|=32 vs 2: %.2f (linear would be 16)", growth)};
}

// ---- C7 ----

struct OverfitResult {
  double full_loss = 0.0;
  double train_mrr = 0.0;
  std::size_t first_below = 0;
};

// Loss over every training positive (both directions for entities) against all filtered negatives.
OverfitResult overfit(Task task) {
  const KnowledgeGraph g = trix::testing::overfit_graph();
  ModelConfig mc;
  mc.hidden_dim = 16;
  TrainConfig tc;
  tc.task = task;
  tc.epochs = 1;
  tc.steps_per_epoch = kOverfitSteps;
  tc.batch_size = 10;
  tc.negatives = 16;
  tc.learning_rate = 5e-3;
  tc.remove_targets = false;
  const std::vector<TrainingGraph> graphs{{"overfit", g, {}}};
  OverfitResult out;
  TrainHooks hooks;
  hooks.on_step = [&](std::size_t step, double loss) {
    if (loss < kOverfitLoss && !out.first_below) out.first_below = step;
  };
  const auto res = train(graphs, ModelParams<float>::init(mc, 0), tc, hooks);

  const RelationGraph rg = build_relation_graph(g);
  const GraphContext<float> ctx(g, rg, mc.message_weighting);
  const FilterIndex filter = make_filter(g, {});
  const auto base = g.base_triples();
  std::vector<detail::PositiveJob> jobs;
  for (const Triple& t : base) {
    if (task == Task::ENTITY) {
      for (const Triple& a : {t, g.inverse(t)}) {
        detail::PositiveJob j;
        j.asked = a;
        const auto known = filter.tails(a.head, a.relation);
        for (id_t e = 0; e < g.num_entities(); ++e)
          if (!std::binary_search(known.begin(), known.end(), e)) j.negatives.push_back(e);
        jobs.push_back(j);
      }
    } else {
      detail::PositiveJob j;
      j.asked = t;
      const auto known = filter.relations(t.head, t.tail);
      for (id_t r = 0; r < g.num_relations_base(); ++r)
        if (!std::binary_search(known.begin(), known.end(), r)) j.negatives.push_back(r);
      jobs.push_back(j);
    }
  }
  out.full_loss = batch_loss_and_grad(res.params, ctx, task, jobs).first;
  out.train_mrr = task == Task::ENTITY ? evaluate_entity(res.params, ctx, base, filter).at("filtered/mean").mrr
                                       : evaluate_relation(res.params, ctx, base, filter).at("filtered/relation").mrr;
  return out;
}

Line overfit_sanity() {
  const auto e = overfit(Task::ENTITY);
  const auto r = overfit(Task::RELATION);
  const bool ok = e.full_loss < kOverfitLoss && r.full_loss < kOverfitLoss && e.train_mrr == 1.0 && r.train_mrr == 1.0;
  return {pass_if(ok), fmt("%zu steps: entity loss %.2e (batch < %.0e from step %zu) MRR %.3f; relation loss %.2e "
                           "(from step %zu) MRR %.3f",
                           kOverfitSteps, e.full_loss, kOverfitLoss, e.first_below, e.train_mrr, r.full_loss,
                           r.first_below, r.train_mrr)};
}

// ---- C8 / C9 ----

struct DeskRun {
  RankMetrics metrics;
  double seconds = 0.0;
};

DeskRun desk_run(const Dataset& ds, Task task, RelGraphMode mode, UpdateMode update, std::uint64_t seed) {
  ModelConfig mc;
  mc.hidden_dim = 32;
  mc.rounds_entity = 4;
  mc.rounds_relation = 3;
  mc.relgraph_mode = mode;
  mc.update_mode = update;
  TrainConfig tc;
  tc.task = task;
  tc.seed = seed;
  tc.epochs = 6;
  tc.steps_per_epoch = 150;
  tc.batch_size = 16;
  tc.negatives = 32;
  tc.learning_rate = 5e-3;
  tc.validation_queries = 200;
  const auto t0 = std::chrono::steady_clock::now();
  const std::vector<TrainingGraph> graphs{{ds.name, ds.train_graph, ds.train_valid}};
  const auto res = train(graphs, ModelParams<float>::init(mc, seed), tc);
  const RelationGraph rg = build_relation_graph(ds.eval_graph, mode);
  const GraphContext<float> ctx(ds.eval_graph, rg, mc.message_weighting);
  const FilterIndex filter =
      make_filter(ds.eval_graph, {std::span<const Triple>(ds.valid), std::span<const Triple>(ds.test)});
  DeskRun out;
  out.metrics = task == Task::ENTITY ? evaluate_entity(res.params, ctx, ds.test, filter).at("filtered/mean")
                                     : evaluate_relation(res.params, ctx, ds.test, filter).at("filtered/relation");
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

std::optional<Dataset> fb_v1() {
  const auto root = find_dataset({"FB237_v1", "fb237_v1", "FB_v1", "fb_v1"});
  if (!root) return std::nullopt;
  return load_dataset(*root);
}

std::optional<DeskRun> c8_entity;

Line desk_scale_learning() {
  const auto ds = fb_v1();
  if (!ds) return {Outcome::SKIP, "FB v1 split not found under $TRIX_DATA_DIR"};
  c8_entity = desk_run(*ds, Task::ENTITY, RelGraphMode::TRIX, UpdateMode::ITERATIVE, 0);
  const auto rel = desk_run(*ds, Task::RELATION, RelGraphMode::TRIX, UpdateMode::ITERATIVE, 0);
  const auto& e = c8_entity->metrics;
  const bool ok = e.mrr >= kEntityMrrMin && e.hits10 >= kEntityHits10Min && rel.metrics.mrr >= kRelationMrrMin;
  return {pass_if(ok), fmt("%zu test queries: entity MRR %.3f (>= %.2f) Hits@10 %.3f (>= %.2f); relation MRR %.3f "
                           "(>= %.2f); %.0fs",
                           ds->test.size(), e.mrr, kEntityMrrMin, e.hits10, kEntityHits10Min, rel.metrics.mrr,
                           kRelationMrrMin, c8_entity->seconds + rel.seconds)};
}

Line ablation_ordering() {
  const auto ds = fb_v1();
  if (!ds) return {Outcome::SKIP, "FB v1 split not found under $TRIX_DATA_DIR"};
  double full = 0.0, ablated = 0.0;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    full += seed == 0 && c8_entity ? c8_entity->metrics.mrr
                                   : desk_run(*ds, Task::ENTITY, RelGraphMode::TRIX, UpdateMode::ITERATIVE, seed)
                                         .metrics.mrr;
    ablated += desk_run(*ds, Task::ENTITY, RelGraphMode::ULTRA, UpdateMode::SEQUENTIAL, seed).metrics.mrr;
  }
  return {pass_if(full >= ablated),
          fmt("mean entity MRR over 3 seeds: iterative+trix %.3f, sequential+ultra %.3f", full / 3, ablated / 3)};
}

// ---- C10 ----

Line determinism() {
  const Dataset ds = load_dataset(fs::path(TRIX_SAMPLES_DIR) / "toy");
  const std::vector<TrainingGraph> graphs{{ds.name, ds.train_graph, ds.train_valid}};
  ModelConfig mc;
  mc.hidden_dim = 16;
  TrainConfig tc;
  tc.epochs = 2;
  tc.steps_per_epoch = 20;
  tc.batch_size = 8;
  tc.negatives = 8;
  tc.seed = 11;
  auto once = [&](std::size_t threads) {
    tc.threads = threads;
    return train(graphs, ModelParams<float>::init(mc, tc.seed), tc);
  };
  const auto a = once(1), b = once(1), c = once(4);
  auto same = [](const TrainResult& x, const TrainResult& y) {
    if (serialize_checkpoint(x.params) != serialize_checkpoint(y.params)) return false;
    if (x.metrics.size() != y.metrics.size() || x.best_epoch != y.best_epoch) return false;
    for (std::size_t i = 0; i < x.metrics.size(); ++i)
      if (x.metrics[i].mean_loss != y.metrics[i].mean_loss || x.metrics[i].valid_mrr != y.metrics[i].valid_mrr ||
          x.metrics[i].degenerate_negatives != y.metrics[i].degenerate_negatives)
        return false;
    return true;
  };
  const bool repeat = same(a, b), threads = same(a, c);
  return {pass_if(repeat && threads), fmt("repeat run identical: %s; 4 threads identical to 1: %s",
                                          repeat ? "yes" : "no", threads ? "yes" : "no")};
}

}  // namespace

int main() {
  run(1, "dataset_statistics", dataset_statistics);
  run(2, "gradient_correctness", gradient_correctness);
  run(3, "double_equivariance", double_equivariance);
  run(4, "expressivity_separation", separation);
  run(5, "subsumption", subsumption);
  run(6, "one_pass_relation", one_pass_relation_prediction);
  run(7, "overfit_sanity", overfit_sanity);
  run(8, "desk_scale_learning", desk_scale_learning);
  run(9, "ablation_ordering", ablation_ordering);
  run(10, "determinism", determinism);
  return failures ? 1 : 0;
}
