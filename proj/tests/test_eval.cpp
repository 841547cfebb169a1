#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "test_util.hpp"
#include "trix/eval.hpp"
#include "trix/expressivity.hpp"

using namespace trix;
using trix::testing::make_graph;
using trix::testing::slurp;
using trix::testing::TempDir;

namespace {

ModelConfig tiny_model() {
  ModelConfig mc;
  mc.hidden_dim = 4;
  mc.rounds_entity = 2;
  mc.rounds_relation = 2;
  return mc;
}

}  // namespace

TEST(Rank, TieFormulaAndMasking) {
  const std::vector<double> a{3, 1, 2};
  EXPECT_EQ(rank_of<double>(a, 0), 1.0);
  EXPECT_EQ(rank_of<double>(a, 1), 3.0);
  const std::vector<double> flat{1, 1, 1};
  EXPECT_EQ(rank_of<double>(flat, 1), 2.0);
  const std::vector<id_t> others{0, 2};
  EXPECT_EQ(rank_of<double>(a, 1, others), 1.0);
  const std::vector<id_t> with_target{1};
  EXPECT_THROW(rank_of<double>(a, 1, with_target), validation_error);
  const std::vector<id_t> outside{7};
  EXPECT_THROW(rank_of<double>(a, 1, outside), bounds_error);
  EXPECT_THROW(rank_of<double>(a, 3), bounds_error);
}

TEST(Rank, SummaryArithmetic) {
  const std::vector<double> ranks{1, 2, 4};
  const auto m = summarize(ranks);
  EXPECT_EQ(m.count, 3u);
  EXPECT_NEAR(m.mrr, (1 + 0.5 + 0.25) / 3, 1e-15);
  EXPECT_NEAR(m.mrr, 0.5833, 1e-4);
  EXPECT_NEAR(m.hits1, 1.0 / 3, 1e-15);
  EXPECT_NEAR(m.hits3, 2.0 / 3, 1e-15);
  EXPECT_EQ(m.hits10, 1.0);
  EXPECT_EQ(summarize({}).mrr, 0.0);
}

TEST(Rank, UniformRandomScoresMatchAnalyticMrr) {
  // Random scores give a uniform rank on 1..n, so E[MRR] = H_n / n.
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(0, 1);
  for (std::size_t n : {2u, 100u}) {
    std::vector<double> ranks;
    for (int q = 0; q < 1000; ++q) {
      std::vector<double> s(n);
      for (auto& v : s) v = u(rng);
      ranks.push_back(rank_of<double>(s, 0));
    }
    double h = 0.0, h2 = 0.0;
    for (std::size_t k = 1; k <= n; ++k) {
      h += 1.0 / k;
      h2 += 1.0 / (double(k) * k);
    }
    const double mean = h / n, sd = std::sqrt((h2 / n - mean * mean) / 1000.0);
    EXPECT_NEAR(summarize(ranks).mrr, mean, 3 * sd) << "n=" << n;
  }
  EXPECT_NEAR((1 + 0.5) / 2, 0.75, 1e-15);
}

TEST(Filter, AnswersBothDirectionsAndExtraQueries) {
  const auto g = make_graph(4, 2, {{0, 0, 1}, {0, 0, 2}, {1, 1, 2}});
  const std::vector<Triple> extra{{0, 1, 3}};
  const auto f = make_filter(g, {std::span<const Triple>(extra)});
  EXPECT_EQ(std::vector<id_t>(f.tails(0, 0).begin(), f.tails(0, 0).end()), (std::vector<id_t>{1, 2}));
  EXPECT_EQ(std::vector<id_t>(f.tails(2, 2).begin(), f.tails(2, 2).end()), (std::vector<id_t>{0}));
  EXPECT_EQ(std::vector<id_t>(f.tails(3, 3).begin(), f.tails(3, 3).end()), (std::vector<id_t>{0}));
  EXPECT_EQ(std::vector<id_t>(f.relations(0, 3).begin(), f.relations(0, 3).end()), (std::vector<id_t>{1}));
  EXPECT_TRUE(f.relations(2, 1).empty());
  EXPECT_TRUE(f.tails(3, 0).empty());
}

TEST(EvaluateEntity, ConstantScoresGiveTieRanks) {
  // Zero parameters score every entity equally, so ranks follow from candidate counts alone.
  const auto g = make_graph(6, 2, {{0, 0, 1}, {0, 0, 2}, {3, 1, 4}, {5, 1, 4}});
  const auto params = ModelParams<double>::zeros(tiny_model());
  const auto rg = build_relation_graph(g);
  const GraphContext<double> ctx(g, rg, MessageWeighting::BINARY);
  const std::vector<Triple> queries{{0, 0, 1}, {3, 1, 4}};
  const auto rep = evaluate_entity(params, ctx, queries, make_filter(g, {}));
  ASSERT_EQ(rep.records.size(), 4u);
  for (const auto& r : rep.records) EXPECT_EQ(r.rank_raw, 1 + 0.5 * 5);
  // (0,r0,1): 2 is also a known tail. Head of (3,r1,4): 5 is also a known head.
  EXPECT_EQ(rep.records[0].rank_filtered, 1 + 0.5 * 4);
  EXPECT_EQ(rep.records[1].rank_filtered, 1 + 0.5 * 5);
  EXPECT_EQ(rep.records[2].rank_filtered, 1 + 0.5 * 5);
  EXPECT_EQ(rep.records[3].rank_filtered, 1 + 0.5 * 4);
  EXPECT_EQ(rep.records[1].direction, Direction::HEAD);
  EXPECT_EQ(rep.at("raw/tail").count, 2u);
  EXPECT_EQ(rep.at("filtered/mean").count, 4u);
  EXPECT_NEAR(rep.at("filtered/mean").mrr, (2 / 3.0 + 2 / 3.5) / 4, 1e-12);
  EXPECT_THROW(rep.at("filtered/relation"), config_error);

  EvalOptions opt;
  opt.tail_only = true;
  opt.max_queries = 1;
  const auto one = evaluate_entity(params, ctx, queries, make_filter(g, {}), opt);
  ASSERT_EQ(one.records.size(), 1u);
  EXPECT_EQ(one.records[0].direction, Direction::TAIL);
}

TEST(EvaluateRelation, ConstantScoresAndSkippedSelfQueries) {
  const auto g = make_graph(4, 3, {{0, 0, 1}, {0, 1, 1}, {2, 2, 2}, {1, 2, 3}});
  const auto params = ModelParams<double>::zeros(tiny_model());
  const auto rg = build_relation_graph(g);
  const GraphContext<double> ctx(g, rg, MessageWeighting::BINARY);
  const auto rep = evaluate_relation(params, ctx, g.base_triples(), make_filter(g, {}));
  EXPECT_EQ(rep.skipped, 1u);
  ASSERT_EQ(rep.records.size(), 3u);
  for (const auto& r : rep.records) {
    EXPECT_EQ(r.rank_raw, 2.0);
    const double others = (r.query.head == 0) ? 1.0 : 0.0;
    EXPECT_EQ(r.rank_filtered, 1 + 0.5 * (2 - others));
  }
}

TEST(EvaluateEntity, ThreadCountDoesNotChangeRanks) {
  std::mt19937_64 rng(5);
  const auto g = random_graph(rng, 15, 3, 30);
  const auto params = ModelParams<float>::init(tiny_model(), 2);
  const auto rg = build_relation_graph(g);
  const GraphContext<float> ctx(g, rg, MessageWeighting::BINARY);
  const auto q = g.base_triples();
  const auto f = make_filter(g, {});
  EvalOptions opt;
  const auto a = evaluate_entity(params, ctx, q, f, opt);
  opt.threads = 4;
  const auto b = evaluate_entity(params, ctx, q, f, opt);
  ASSERT_EQ(a.records.size(), b.records.size());
  for (std::size_t i = 0; i < a.records.size(); ++i) EXPECT_EQ(a.records[i].rank_filtered, b.records[i].rank_filtered);
  const std::vector<Triple> bad{{0, 4, 1}};
  EXPECT_THROW(evaluate_entity(params, ctx, bad, f), bounds_error);
}

TEST(Similarity, CosineProperties) {
  const auto same = ad::Tensor<double>::matrix(3, 2, {1, 2, 2, 4, 0.5, 1});
  for (const auto& row : cosine_similarity(same))
    for (double v : row) EXPECT_NEAR(v, 1.0, 1e-12);
  const auto ortho = ad::Tensor<double>::matrix(2, 2, {3, 0, 0, -2});
  const auto id = cosine_similarity(ortho);
  EXPECT_EQ(id[0][1], 0.0);
  EXPECT_EQ(id[0][0], 1.0);

  std::mt19937_64 rng(8);
  std::normal_distribution<double> n;
  ad::Tensor<double> m({5, 7});
  for (auto& v : m.data()) v = n(rng);
  for (std::size_t k = 0; k < 7; ++k) m(4, k) = 0.0;
  const auto s = cosine_similarity(m);
  for (std::size_t i = 0; i < 5; ++i) {
    EXPECT_NEAR(s[i][i], 1.0, 1e-6);
    for (std::size_t j = 0; j < 5; ++j) {
      EXPECT_EQ(s[i][j], s[j][i]);
      EXPECT_LE(std::abs(s[i][j]), 1.0);
    }
  }
  EXPECT_EQ(s[4][0], 0.0);
}

TEST(Export, CsvAndRankDump) {
  TempDir dir;
  write_similarity_csv({{1.0, 0.5}, {0.5, 1.0}}, {"plain", "with \"quote\""}, dir / "sim.csv");
  EXPECT_EQ(slurp(dir / "sim.csv"),
            "relation,\"plain\",\"with \"\"quote\"\"\"\n\"plain\",1,0.5\n\"with \"\"quote\"\"\",0.5,1\n");

  const auto g = make_graph(3, 2, {{0, 0, 1}, {1, 1, 2}});
  const auto params = ModelParams<float>::init(tiny_model(), 1);
  const auto rg = build_relation_graph(g);
  const GraphContext<float> ctx(g, rg, MessageWeighting::BINARY);
  export_relation_similarity(params, ctx, dir / "rel.csv");
  const std::string csv = slurp(dir / "rel.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_EQ(csv.rfind("relation,\"r0\",\"r1\"\n", 0), 0u);

  RankingReport rep;
  rep.records.push_back({{0, 0, 1}, Direction::HEAD, 2.5, 1.5});
  write_rank_dump(rep, g, dir / "ranks.tsv");
  EXPECT_EQ(slurp(dir / "ranks.tsv"), "head\trelation\ttail\tdirection\trank_raw\trank_filtered\ne0\tr0\te1\thead\t2.5\t1.5\n");
}
