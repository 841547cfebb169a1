#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <memory>
#include <random>

#include "trix/autodiff.hpp"

using namespace trix;
using namespace trix::ad;

namespace {

using Fn = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

Tensor<double> random_tensor(std::mt19937_64& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(std::move(shape));
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

// Reduces any output to a scalar with fixed random weights so every output element matters.
Var<double> project(Var<double> y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> w(y.value().size());
  for (auto& v : w) v = u(rng);
  return weighted_sum(y, w);
}

double evaluate(const Fn& f, const std::vector<Tensor<double>>& inputs) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.parameter("p" + std::to_string(i), inputs[i]));
  return project(f(tape, vars), 99).value()[0];
}

// Central differences against reverse mode for every input element.
void expect_gradients(const Fn& f, std::vector<Tensor<double>> inputs, double tol = 1e-7) {
  Tape<double> tape;
  std::vector<Var<double>> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i) vars.push_back(tape.parameter("p" + std::to_string(i), inputs[i]));
  const auto grads = tape.backward(project(f(tape, vars), 99));
  const double h = 1e-6;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto& g = grads.at("p" + std::to_string(i));
    ASSERT_EQ(g.shape(), inputs[i].shape());
    for (std::size_t k = 0; k < inputs[i].size(); ++k) {
      const double orig = inputs[i][k];
      inputs[i][k] = orig + h;
      const double up = evaluate(f, inputs);
      inputs[i][k] = orig - h;
      const double down = evaluate(f, inputs);
      inputs[i][k] = orig;
      const double numeric = (up - down) / (2 * h);
      EXPECT_NEAR(g[k], numeric, tol * std::max(1.0, std::abs(numeric))) << "input " << i << " element " << k;
    }
  }
}

}  // namespace

TEST(Tensor, ShapesAndAccess) {
  auto m = Tensor<double>::matrix(2, 3, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 2), 6.0);
  EXPECT_EQ(m.row(1)[0], 4.0);
  auto v = Tensor<double>::vector({1, 2});
  EXPECT_EQ(v.rows(), 2u);
  EXPECT_EQ(v.cols(), 1u);
  EXPECT_EQ(m.reshaped({3, 2})(2, 1), 6.0);
  EXPECT_THROW(m.reshaped({4, 2}), shape_error);
  EXPECT_THROW(Tensor<double>({2, 2}, std::vector<double>{1, 2, 3}), shape_error);
  EXPECT_EQ(m.cast<float>()(0, 1), 2.0f);
}

TEST(Autodiff, GatherWithRepeatedIndices) {
  std::mt19937_64 rng(1);
  expect_gradients([](Tape<double>&, const auto& v) { return gather(v[0], std::vector<index_t>{2, 0, 2, 2}); },
                   {random_tensor(rng, {3, 4})});
}

TEST(Autodiff, HadamardAddScale) {
  std::mt19937_64 rng(2);
  expect_gradients([](Tape<double>&, const auto& v) { return scale(add(hadamard(v[0], v[1]), v[0]), 0.3); },
                   {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 2})});
}

TEST(Autodiff, HadamardOfSameVariable) {
  std::mt19937_64 rng(3);
  expect_gradients([](Tape<double>&, const auto& v) { return hadamard(v[0], v[0]); }, {random_tensor(rng, {2, 3})});
}

TEST(Autodiff, ScatterSum) {
  std::mt19937_64 rng(4);
  expect_gradients([](Tape<double>&, const auto& v) { return scatter_sum(v[0], std::vector<index_t>{1, 1, 3, 0, 1}, 5); },
                   {random_tensor(rng, {5, 3})});
}

TEST(Autodiff, Affine) {
  std::mt19937_64 rng(5);
  expect_gradients([](Tape<double>&, const auto& v) { return affine(v[0], v[1], v[2]); },
                   {random_tensor(rng, {4, 3}), random_tensor(rng, {3, 2}), random_tensor(rng, {2})});
}

TEST(Autodiff, ReluAwayFromKink) {
  std::mt19937_64 rng(6);
  auto x = random_tensor(rng, {4, 4});
  for (auto& v : x.data())
    if (std::abs(v) < 0.05) v = 0.5;
  expect_gradients([](Tape<double>&, const auto& v) { return relu(v[0]); }, {x});
}

TEST(Autodiff, ReluValuesAndNan) {
  Tape<double> tape;
  const auto y = relu(tape.constant(Tensor<double>::vector({-1, 0, 2, std::nan("")}))).value();
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
  EXPECT_EQ(y[2], 2.0);
  EXPECT_TRUE(std::isnan(y[3]));
}

TEST(Autodiff, LayerNormRows) {
  std::mt19937_64 rng(12);
  expect_gradients([](Tape<double>&, const auto& v) { return layer_norm(v[0]); }, {random_tensor(rng, {3, 5}, -2, 2)},
                   1e-6);
  Tape<double> tape;
  const auto y = layer_norm(tape.constant(Tensor<double>::matrix(2, 3, {1, 2, 3, 4, 4, 4}))).value();
  const double s = std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(y(0, 0), -1.0 / s, 1e-12);
  EXPECT_NEAR(y(0, 1), 0.0, 1e-12);
  EXPECT_NEAR(y(0, 2), 1.0 / s, 1e-12);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(y(1, k), 0.0);
}

TEST(Autodiff, ConcatColumns) {
  std::mt19937_64 rng(7);
  expect_gradients([](Tape<double>&, const auto& v) { return concat_cols(v[0], v[1]); },
                   {random_tensor(rng, {3, 2}), random_tensor(rng, {3, 4})});
}

TEST(Autodiff, SigmoidLogAndLogSigmoid) {
  std::mt19937_64 rng(8);
  expect_gradients([](Tape<double>&, const auto& v) { return sigmoid(v[0]); }, {random_tensor(rng, {5}, -4, 4)});
  expect_gradients([](Tape<double>&, const auto& v) { return log(v[0]); }, {random_tensor(rng, {5}, 0.5, 3)});
  expect_gradients([](Tape<double>&, const auto& v) { return log_sigmoid(v[0]); }, {random_tensor(rng, {5}, -6, 6)});
}

TEST(Autodiff, LogSigmoidIsStable) {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::vector({-800.0, 800.0, 0.0}));
  const auto y = log_sigmoid(x).value();
  EXPECT_DOUBLE_EQ(y[0], -800.0);
  EXPECT_DOUBLE_EQ(y[1], 0.0);
  EXPECT_DOUBLE_EQ(y[2], -std::log(2.0));
}

TEST(Autodiff, SumWeightedSumReshape) {
  std::mt19937_64 rng(9);
  expect_gradients([](Tape<double>&, const auto& v) { return sum(reshape(v[0], {6, 1})); }, {random_tensor(rng, {2, 3})});
  expect_gradients([](Tape<double>&, const auto& v) { return weighted_sum(v[0], {1, -2, 3, 0.5}); },
                   {random_tensor(rng, {4})});
}

TEST(Autodiff, MessageAggregateMatchesComposition) {
  std::mt19937_64 rng(10);
  const std::vector<index_t> dst{0, 2, 2, 1, 0, 2};
  const std::vector<index_t> ia{1, 0, 3, 3, 2, 1}, ib{0, 0, 1, 2, 1, 2};
  auto weights = std::make_shared<const std::vector<double>>(std::vector<double>{1, 0.5, 2, 0, 1.5, -1});
  const auto a = random_tensor(rng, {4, 3}), b = random_tensor(rng, {3, 3});
  for (Summation order : {Summation::INDEX_ORDER, Summation::CANONICAL}) {
    Fn fused = [&](Tape<double>&, const auto& v) {
      return message_aggregate<double>({{v[0], ia}, {v[1], ib}}, weights, dst, 3, order);
    };
    Fn composed = [&](Tape<double>& t, const auto& v) {
      auto m = hadamard(gather(v[0], ia), gather(v[1], ib));
      Tensor<double> w({dst.size(), 3});
      for (std::size_t i = 0; i < dst.size(); ++i)
        for (std::size_t k = 0; k < 3; ++k) w(i, k) = (*weights)[i];
      return scatter_sum(hadamard(m, t.constant(w)), dst, 3);
    };
    Tape<double> t1, t2;
    const auto y1 = fused(t1, {t1.constant(a), t1.constant(b)}).value();
    const auto y2 = composed(t2, {t2.constant(a), t2.constant(b)}).value();
    for (std::size_t i = 0; i < y1.size(); ++i) EXPECT_NEAR(y1[i], y2[i], 1e-14);
    expect_gradients(fused, {a, b});
  }
}

TEST(Autodiff, MessageAggregateThreeFactorsSharedSource) {
  std::mt19937_64 rng(11);
  const std::vector<index_t> dst{1, 0, 1}, i0{0, 1, 1}, i1{2, 2, 0}, i2{1, 0, 0};
  expect_gradients(
      [&](Tape<double>&, const auto& v) {
        return message_aggregate<double>({{v[0], i0}, {v[0], i1}, {v[1], i2}}, nullptr, dst, 2);
      },
      {random_tensor(rng, {3, 2}), random_tensor(rng, {2, 2})});
}

TEST(Autodiff, CanonicalSummationIgnoresMessageOrder) {
  // Same message multiset per destination in two different orders.
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>::matrix(4, 1, {1e16, 1.0, -1e16, 1.0}));
  const std::vector<index_t> dst{0, 0, 0, 0};
  const auto a = message_aggregate<double>({{x, std::vector<index_t>{0, 1, 2, 3}}}, nullptr, dst, 1, Summation::CANONICAL);
  const auto b = message_aggregate<double>({{x, std::vector<index_t>{3, 2, 1, 0}}}, nullptr, dst, 1, Summation::CANONICAL);
  EXPECT_EQ(a.value()[0], b.value()[0]);
}

TEST(Autodiff, UnusedParametersGetZeroGradients) {
  Tape<double> tape;
  auto a = tape.parameter("a", Tensor<double>::vector({1, 2}));
  tape.parameter("unused", Tensor<double>::vector({3}));
  const auto g = tape.backward(sum(a));
  EXPECT_EQ(g.at("unused")[0], 0.0);
  EXPECT_EQ(g.at("a")[1], 1.0);
}

TEST(Autodiff, ErrorsOnBadShapesAndIndices) {
  Tape<double> tape;
  auto a = tape.parameter("a", Tensor<double>({2, 3}));
  auto b = tape.parameter("b", Tensor<double>({3, 2}));
  EXPECT_THROW(hadamard(a, b), shape_error);
  EXPECT_THROW(gather(a, std::vector<index_t>{2}), bounds_error);
  EXPECT_THROW(scatter_sum(a, std::vector<index_t>{0, 5}, 3), bounds_error);
  EXPECT_THROW(tape.backward(a), shape_error);
}
