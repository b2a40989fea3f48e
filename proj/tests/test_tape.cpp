#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <random>

#include "fedcyc/gradcheck.hpp"
#include "fedcyc/tape.hpp"
#include "fedcyc/verify.hpp"

using namespace fedcyc;

namespace {

std::vector<float> values(Tape<float>& t, Var v) {
  auto d = t.value(v).data();
  return {d.begin(), d.end()};
}

}  // namespace

TEST(TapeOps, LeakyRelu) {
  Tape<float> t;
  Var x = t.constant(Tensor({2}, {-1.0f, 2.0f}));
  EXPECT_EQ(values(t, ops::leaky_relu(t, x)), (std::vector<float>{-0.2f, 2.0f}));
}

TEST(TapeOps, InstanceNormOfConstantChannelIsZero) {
  Tape<float> t;
  Var x = t.constant(Tensor::full({1, 2, 3, 3}, 4.5f));
  for (float v : t.value(ops::instance_norm(t, x)).data()) EXPECT_EQ(v, 0.0f);
}

TEST(TapeOps, InstanceNormOfSinglePixelIsZero) {
  Tape<float> t;
  Var x = t.constant(Tensor({1, 3, 1, 1}, {1.0f, -2.0f, 7.0f}));
  for (float v : t.value(ops::instance_norm(t, x)).data()) EXPECT_EQ(v, 0.0f);
}

TEST(TapeOps, ConvOfOnesCountsNeighbours) {
  Tape<float> t;
  Var x = t.constant(Tensor::full({1, 1, 4, 4}, 1.0f));
  Var w = t.constant(Tensor::full({1, 1, 3, 3}, 1.0f));
  auto out = values(t, ops::conv2d(t, x, w, 1));
  const std::vector<float> expected{4, 6, 6, 4, 6, 9, 9, 6, 6, 9, 9, 6, 4, 6, 6, 4};
  EXPECT_EQ(out, expected);
}

TEST(TapeOps, StrideTwoConvHalvesAndAddsBias) {
  Tape<float> t;
  Var x = t.constant(Tensor::full({1, 1, 4, 4}, 1.0f));
  Var w = t.constant(Tensor::full({2, 1, 3, 3}, 1.0f));
  Var b = t.constant(Tensor({2}, {0.5f, -1.0f}));
  Var y = ops::conv2d(t, x, w, b, 2);
  EXPECT_EQ(t.value(y).shape(), (Shape{1, 2, 2, 2}));
  // output (0,0) sees the top-left corner window, (1,1) an interior one
  EXPECT_EQ(values(t, y), (std::vector<float>{4.5f, 6.5f, 6.5f, 9.5f, 3, 5, 5, 8}));
}

TEST(TapeOps, UpsampleRepeatsPixels) {
  Tape<float> t;
  Var x = t.constant(Tensor({1, 1, 1, 2}, {1, 2}));
  Var y = ops::upsample_nearest(t, x);
  EXPECT_EQ(t.value(y).shape(), (Shape{1, 1, 2, 4}));
  EXPECT_EQ(values(t, y), (std::vector<float>{1, 1, 2, 2, 1, 1, 2, 2}));
}

TEST(TapeOps, ReductionsAndSlice) {
  Tape<float> t;
  Var x = t.constant(Tensor({4}, {1, -2, 3, -4}));
  EXPECT_FLOAT_EQ(t.value(ops::mean(t, x)).item(), -0.5f);
  EXPECT_FLOAT_EQ(t.value(ops::abs_mean(t, x)).item(), 2.5f);
  EXPECT_FLOAT_EQ(t.value(ops::square_mean(t, x)).item(), 7.5f);
  EXPECT_EQ(values(t, ops::slice(t, x, 1, 2)), (std::vector<float>{-2, 3}));
}

TEST(TapeOps, SmoothActivationsStayFiniteAtExtremes) {
  Tape<float> t;
  Var x = t.constant(Tensor({3}, {-100.0f, 0.0f, 100.0f}));
  auto s = values(t, ops::sigmoid(t, x));
  EXPECT_FLOAT_EQ(s[1], 0.5f);
  EXPECT_NEAR(s[0], 0.0f, 1e-30);
  auto sp = values(t, ops::softplus(t, x));
  EXPECT_FLOAT_EQ(sp[1], std::log(2.0f));
  EXPECT_FLOAT_EQ(sp[2], 100.0f);
}

TEST(TapeOps, AdainWithUnitCodeEqualsInstanceNorm) {
  std::mt19937_64 rng(3);
  std::normal_distribution<float> n;
  std::vector<float> data(2 * 3 * 4 * 4);
  for (auto& v : data) v = n(rng);
  Tape<float> t;
  Var x = t.constant(Tensor({2, 3, 4, 4}, data));
  Var a = ops::adain(t, x, t.constant(Tensor::full({3}, 1.0f)), t.constant(Tensor::zeros({3})));
  EXPECT_TRUE(bitwise_equal(t.value(a), t.value(ops::instance_norm(t, x))));
}

TEST(TapeOps, ShapeErrors) {
  Tape<float> t;
  Var a = t.constant(Tensor::zeros({2}));
  Var b = t.constant(Tensor::zeros({3}));
  EXPECT_THROW(ops::add(t, a, b), ShapeError);
  EXPECT_THROW(ops::instance_norm(t, a), ShapeError);
  EXPECT_THROW(ops::slice(t, a, 1, 2), ShapeError);
  Var x = t.constant(Tensor::zeros({1, 2, 4, 4}));
  Var w = t.constant(Tensor::zeros({1, 3, 3, 3}));
  EXPECT_THROW(ops::conv2d(t, x, w, 1), ShapeError);
  Var w2 = t.constant(Tensor::zeros({1, 2, 3, 3}));
  EXPECT_THROW(ops::conv2d(t, x, w2, 3), ShapeError);
  EXPECT_THROW(t.record(OpKind::parameter, {a}), TapeError);
  EXPECT_THROW(t.record(static_cast<OpKind>(200), {a}), TapeError);
}

TEST(TapeBackward, LinearMean) {
  Tape<float> t;
  Var w = t.parameter("w", Tensor({1, 2}, {1, 2}));
  Var x = t.constant(Tensor({1, 2}, {3, 4}));
  Var b = t.constant(Tensor::zeros({2}));
  // dense with diagonal weights gives the elementwise product w * x
  Var diag = t.constant(Tensor({2, 2}, {3, 0, 0, 4}));
  Var loss = ops::mean(t, ops::dense(t, w, diag, b));
  (void)x;
  auto g = t.backward(loss);
  ASSERT_EQ(g.size(), 1u);
  EXPECT_EQ(g[0].name, "w");
  EXPECT_FLOAT_EQ(g[0].value[0], 1.5f);
  EXPECT_FLOAT_EQ(g[0].value[1], 2.0f);
}

TEST(TapeBackward, SquareMean) {
  Tape<float> t;
  Var w = t.parameter("w", Tensor({1}, {2}));
  auto g = t.backward(ops::square_mean(t, w));
  EXPECT_FLOAT_EQ(g[0].value[0], 4.0f);
}

TEST(TapeBackward, UnusedParameterGetsZeros) {
  Tape<float> t;
  Var a = t.parameter("a", Tensor({2}, {1, 2}));
  t.parameter("unused", Tensor({3}, {1, 2, 3}));
  auto g = t.backward(ops::mean(t, a));
  ASSERT_EQ(g.size(), 2u);
  EXPECT_EQ(g[1].name, "unused");
  for (float v : g[1].value.data()) EXPECT_EQ(v, 0.0f);
}

TEST(TapeBackward, FanOutAccumulates) {
  Tape<float> t;
  Var a = t.parameter("a", Tensor({1}, {3}));
  Var loss = ops::mean(t, ops::add(t, a, ops::add(t, a, a)));
  EXPECT_FLOAT_EQ(t.backward(loss)[0].value[0], 3.0f);
}

TEST(TapeBackward, Errors) {
  {
    Tape<float> t;
    Var a = t.parameter("a", Tensor({2}, {1, 2}));
    EXPECT_THROW(t.backward(a), TapeError);  // not scalar
  }
  {
    Tape<float> t;
    Var c = t.constant(Tensor({1}, {1}));
    t.parameter("a", Tensor({1}, {1}));
    EXPECT_THROW(t.backward(ops::mean(t, c)), TapeError);  // untracked
    EXPECT_THROW(t.backward(Var{}), TapeError);
  }
  {
    Tape<float> t;
    Var a = t.parameter("a", Tensor({1}, {1}));
    Var l = ops::mean(t, a);
    t.backward(l);
    EXPECT_TRUE(t.consumed());
    EXPECT_THROW(t.backward(l), TapeError);
    EXPECT_THROW(ops::mean(t, a), TapeError);
  }
}

TEST(TapeBackward, NodeIdsAreTopological) {
  Tape<float> t;
  Var a = t.parameter("a", Tensor({1}, {1}));
  Var b = ops::scalar_mul(t, a, 2.0);
  Var c = ops::add(t, a, b);
  EXPECT_LT(a.id, b.id);
  EXPECT_LT(b.id, c.id);
  EXPECT_EQ(t.size(), 3u);
}

// --- per-op finite-difference property ---

namespace {

using Rng = std::mt19937_64;

std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

BasicTensor<double> uniform(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> d(lo, hi);
  std::vector<double> v(element_count(shape));
  for (auto& x : v) x = d(rng);
  return {std::move(shape), std::move(v)};
}

}  // namespace

const GradCheckOptions kOracle = oracle_options();

class OpGradient : public ::testing::TestWithParam<OpKind> {};

TEST_P(OpGradient, MatchesFiniteDifferencesOver100Seeds) {
  const OpKind kind = GetParam();
  double worst = 0.0;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto c = op_gradient_case(kind, seed * 7919 + static_cast<std::uint64_t>(kind));
    auto report = finite_diff_check(c.graph, c.params, kOracle);
    worst = std::max(worst, report.max_relative_error);
    ASSERT_LE(report.max_relative_error, 1e-4)
        << op_name(kind) << " seed " << seed << " at " << report.worst_parameter << "["
        << report.worst_index << "] analytic " << report.analytic << " numeric " << report.numeric;
  }
  RecordProperty("worst_relative_error", std::to_string(worst));
}

INSTANTIATE_TEST_SUITE_P(AllOps, OpGradient, ::testing::ValuesIn(differentiable_ops().begin(),
                                                                 differentiable_ops().end()),
                         [](const auto& info) { return std::string(op_name(info.param)); });

TEST(TapeBackward, DeterministicBitIdenticalGradients) {
  auto run = [] {
    Rng rng(11);
    Tape<float> t;
    Var x = t.parameter("x", uniform(rng, {2, 3, 4, 4}).cast<float>());
    Var w = t.parameter("w", uniform(rng, {4, 3, 3, 3}).cast<float>());
    Var h = ops::leaky_relu(t, ops::instance_norm(t, ops::conv2d(t, x, w, 2)));
    return t.backward(ops::square_mean(t, h));
  };
  auto a = run(), b = run();
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(bitwise_equal(a[i].value, b[i].value));
}

TEST(TapeOps, InstanceNormStatistics) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    const std::size_t h = pick(rng, 2, 8), w = pick(rng, 2, 8), c = pick(rng, 1, 4);
    Tape<float> t;
    std::normal_distribution<float> n(3.0f, 2.0f);
    std::vector<float> data(c * h * w);
    for (auto& v : data) v = n(rng);
    auto y = t.value(ops::instance_norm(t, t.constant(Tensor({1, c, h, w}, data))));
    for (std::size_t ch = 0; ch < c; ++ch) {
      double m = 0, v = 0;
      for (std::size_t i = 0; i < h * w; ++i) m += y[ch * h * w + i];
      m /= double(h * w);
      for (std::size_t i = 0; i < h * w; ++i) v += std::pow(y[ch * h * w + i] - m, 2);
      v /= double(h * w);
      EXPECT_LE(std::abs(m), 1e-5);
      EXPECT_NEAR(v, 1.0, 1e-3);
    }
  }
}

TEST(TapeBackward, FaultInjectionScalesOneOpKind) {
  Tape<double> t;
  t.inject_fault({OpKind::scalar_mul, 2.0});
  Var a = t.parameter("a", BasicTensor<double>({1}, {1.0}));
  auto g = t.backward(ops::mean(t, ops::scalar_mul(t, a, 3.0)));
  EXPECT_DOUBLE_EQ(g[0].value[0], 6.0);
}
