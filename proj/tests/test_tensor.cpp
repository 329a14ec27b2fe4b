#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "tt/ops.hpp"
#include "tt/rng.hpp"
#include "tt/selftest.hpp"
#include "tt/tensor.hpp"

using namespace tt;

namespace {

Tensor m22(double a, double b, double c, double d, bool grad = false) {
  return Tensor(Shape{2, 2}, {a, b, c, d}, grad);
}

void expect_values(const Tensor& t, std::initializer_list<double> want, double tol = 1e-12) {
  ASSERT_EQ(t.numel(), want.size());
  std::size_t i = 0;
  for (double w : want) EXPECT_NEAR(t[i++], w, tol) << "index " << i - 1;
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, bool grad = true) {
  std::vector<double> v(r * c);
  for (double& x : v) x = rng.normal();
  return Tensor(Shape{r, c}, std::move(v), grad);
}

}  // namespace

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor(Shape{2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_EQ(Tensor::zeros({3, 4}).numel(), 12u);
  EXPECT_EQ(Tensor::scalar(2.5).rank(), 0u);
}

TEST(Tensor, NonFiniteInputsAreRejected) {
  const Tensor a(Shape{1}, {1.0});
  EXPECT_THROW(log(Tensor(Shape{1}, {-1.0})), NumericalError);
  EXPECT_THROW(scale(a, std::numeric_limits<double>::infinity()), NumericalError);
}

TEST(Matmul, IdentityLeavesMatrix) {
  expect_values(matmul(m22(1, 0, 0, 1), m22(5, 6, 7, 8)), {5, 6, 7, 8});
}

TEST(Matmul, HandComputedProduct) {
  expect_values(matmul(m22(1, 2, 3, 4), m22(5, 6, 7, 8)), {19, 22, 43, 50});
}

TEST(Matmul, InnerExtentMismatchNamesShapes) {
  try {
    matmul(Tensor::zeros({2, 3}), Tensor::zeros({2, 2}));
    FAIL() << "expected DimensionError";
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x2"), std::string::npos) << msg;
  }
}

TEST(Logsumexp, EqualMass) {
  EXPECT_NEAR(logsumexp(Tensor(Shape{2}, {0.0, 0.0})).item(), std::log(2.0), 1e-15);
}

TEST(Logsumexp, LargeNegativeInputsStayFinite) {
  EXPECT_NEAR(logsumexp(Tensor(Shape{2}, {-1000.0, -1000.0})).item(), -1000.0 + std::log(2.0), 1e-12);
}

TEST(Logsumexp, HandArithmetic) {
  EXPECT_NEAR(logsumexp(Tensor(Shape{2}, {0.0, std::log(3.0)})).item(), std::log(4.0), 1e-15);
}

TEST(Logsumexp, EmptyAxisThrows) {
  EXPECT_THROW(logsumexp(Tensor(Shape{0}, {})), std::exception);
}

TEST(Logsumexp, RowsOfMatrix) {
  const Tensor r = logsumexp(Tensor(Shape{2, 2}, {0.0, 0.0, 1.0, 1.0}));
  expect_values(r, {std::log(2.0), 1.0 + std::log(2.0)}, 1e-14);
}

TEST(Softmax, UniformRow) {
  expect_values(softmax(Tensor(Shape{1, 3}, {0, 0, 0})), {1.0 / 3, 1.0 / 3, 1.0 / 3});
}

TEST(Softmax, HandArithmetic) {
  expect_values(softmax(Tensor(Shape{1, 2}, {0.0, std::log(2.0)})), {1.0 / 3, 2.0 / 3});
}

TEST(Softmax, ExpLogSoftmaxMatchesSoftmax) {
  Rng rng(5);
  const Tensor x = random_matrix(4, 6, rng, false);
  const Tensor p = softmax(x);
  const Tensor lp = log_softmax(x);
  for (std::size_t r = 0; r < 4; ++r) {
    double row = 0.0;
    for (std::size_t c = 0; c < 6; ++c) {
      EXPECT_NEAR(std::exp(lp.at(r, c)), p.at(r, c), 1e-12);
      row += std::exp(lp.at(r, c));
    }
    EXPECT_NEAR(row, 1.0, 1e-12);
  }
}

TEST(Softmax, MaskedEntriesAreExactlyZero) {
  const std::vector<std::uint8_t> allowed{1, 0, 1};
  const Tensor p = masked_softmax(Tensor(Shape{1, 3}, {0.0, 100.0, 0.0}), allowed);
  EXPECT_EQ(p[1], 0.0);
  EXPECT_NEAR(p[0], 0.5, 1e-15);
}

TEST(LayerNorm, ConstantVectorGivesZeros) {
  const Tensor y = layer_norm(Tensor(Shape{1, 3}, {4, 4, 4}), Tensor::full({3}, 1.0), Tensor::zeros({3}), 1e-5);
  expect_values(y, {0, 0, 0});
}

TEST(LayerNorm, TwoValuesNormalizeToPlusMinusOne) {
  const Tensor y = layer_norm(Tensor(Shape{1, 2}, {1, 3}), Tensor::full({2}, 1.0), Tensor::zeros({2}), 1e-14);
  expect_values(y, {-1, 1}, 1e-12);
}

TEST(LayerNorm, ZeroGainGivesBias) {
  const Tensor y = layer_norm(Tensor(Shape{2, 2}, {1, 5, -2, 7}), Tensor::zeros({2}),
                              Tensor(Shape{2}, {0.25, -3.0}), 1e-5);
  expect_values(y, {0.25, -3.0, 0.25, -3.0});
}

TEST(Elementwise, AddMulTanhRelu) {
  const Tensor a(Shape{3}, {-1.0, 0.5, 2.0});
  const Tensor b(Shape{3}, {2.0, 2.0, -1.0});
  expect_values(add(a, b), {1.0, 2.5, 1.0});
  expect_values(mul(a, b), {-2.0, 1.0, -2.0});
  expect_values(relu(a), {0.0, 0.5, 2.0});
  expect_values(tanh(a), {std::tanh(-1.0), std::tanh(0.5), std::tanh(2.0)});
  EXPECT_THROW(add(a, Tensor::zeros({2})), DimensionError);
}

TEST(Dropout, InferenceIsIdentity) {
  Rng rng(1);
  const Tensor x(Shape{4}, {1, 2, 3, 4});
  const Tensor y = dropout(x, 0.1, rng, false);
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST(Dropout, ZeroRatioIsIdentity) {
  Rng rng(1);
  const Tensor x(Shape{4}, {1, 2, 3, 4});
  const Tensor y = dropout(x, 0.0, rng, true);
  EXPECT_TRUE(std::equal(x.values().begin(), x.values().end(), y.values().begin()));
}

TEST(Dropout, MeanOfScaledMaskIsOne) {
  Rng rng(2024);
  const Tensor y = dropout(Tensor::full({100000}, 1.0), 0.1, rng, true);
  const double mean = std::accumulate(y.values().begin(), y.values().end(), 0.0) / 1e5;
  EXPECT_NEAR(mean, 1.0, 0.02);
  for (double v : y.values()) EXPECT_TRUE(v == 0.0 || std::abs(v - 1.0 / 0.9) < 1e-15);
}

TEST(Dropout, RatioOutsideRangeThrows) {
  Rng rng(1);
  EXPECT_THROW(dropout(Tensor::zeros({2}), 1.0, rng, true), std::invalid_argument);
  EXPECT_THROW(dropout(Tensor::zeros({2}), -0.1, rng, true), std::invalid_argument);
}

TEST(Backward, SumGivesOnes) {
  Tensor w(Shape{2, 3}, {1, 2, 3, 4, 5, 6}, true);
  backward(sum(w));
  for (double g : w.grad()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumOfSquaresGivesTwiceW) {
  Tensor w(Shape{3}, {1.5, -2.0, 0.25}, true);
  backward(sum(mul(w, w)));
  const auto g = w.grad();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(g[i], 2.0 * w[i]);
}

TEST(Backward, NonScalarRootThrows) {
  Tensor w(Shape{2}, {1, 2}, true);
  EXPECT_THROW(backward(mul(w, w)), DimensionError);
}

TEST(Backward, GradientsAccumulateUntilZeroed) {
  Tensor w(Shape{1}, {3.0}, true);
  backward(sum(w));
  backward(sum(w));
  EXPECT_EQ(w.grad()[0], 2.0);
  w.zero_grad();
  EXPECT_EQ(w.grad()[0], 0.0);
}

TEST(Backward, NoGradGuardRecordsNothing) {
  Tensor w(Shape{1}, {3.0}, true);
  Tensor y;
  {
    NoGradGuard guard;
    y = sum(mul(w, w));
  }
  EXPECT_FALSE(y.requires_grad());
}

// Every differentiable op in one graph, against central differences.
TEST(Backward, CompositeGraphMatchesFiniteDifferences) {
  Rng rng(9);
  Tensor a = random_matrix(3, 4, rng);
  Tensor b = random_matrix(4, 5, rng);
  Tensor g(Shape{5}, {1.1, 0.9, 1.2, 0.8, 1.0}, true);
  Tensor bias(Shape{5}, {0.1, -0.2, 0.3, 0.0, 0.05}, true);
  Tensor c = random_matrix(3, 5, rng);
  const std::vector<std::uint8_t> allowed{1, 1, 0, 1, 1, 1, 1, 1, 0, 1, 1, 0, 1, 1, 1};
  const std::vector<std::size_t> rows{2, 0, 2};
  const std::vector<std::size_t> cols{4, 1, 0, 3, 3, 2, 1, 0, 1, 4, 2, 2};
  auto loss = [&] {
    Tensor h = matmul(a, b);
    h = layer_norm(h, g, bias, 1e-5);
    h = add(h, mul(tanh(c), relu(c)));
    h = add_row(h, bias);
    h = mul_row(h, g);
    Tensor s = masked_softmax(h, allowed);
    Tensor l = log_softmax(sub(h, scale(exp(scale(c, 0.1)), 0.5)));
    Tensor joined = concat_cols(std::vector<Tensor>{slice_cols(s, 0, 2), slice_cols(l, 2, 5)});
    Tensor picked = gather_rows(joined, rows);
    Tensor spread = gather_cols(picked, cols, 4);
    Tensor lse = logsumexp(spread);
    Tensor grid = outer_add(slice_rows(l, 0, 2), slice_rows(s, 1, 3));
    Tensor logs = log(add(exp(grid), Tensor::full(grid.shape(), 1.0)));
    return add(sum(lse), sum(mul(logs, logs)));
  };
  const auto rep = check_gradients({{"a", a}, {"b", b}, {"g", g}, {"bias", bias}, {"c", c}}, loss);
  EXPECT_LT(rep.max_rel_error, 1e-4) << rep.worst << " analytic " << rep.worst_analytic << " numeric "
                                     << rep.worst_numeric;
  EXPECT_EQ(rep.checked, 12u + 20u + 5u + 5u + 15u);
}

TEST(Backward, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(77);
    Tensor a = random_matrix(3, 3, rng);
    Tensor b = random_matrix(3, 3, rng);
    backward(sum(tanh(matmul(a, matmul(b, a)))));
    auto ga = a.grad();
    auto gb = b.grad();
    ga.insert(ga.end(), gb.begin(), gb.end());
    return ga;
  };
  EXPECT_EQ(run(), run());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
}

TEST(Rng, LabeledSubstreamsAreIndependentOfUse) {
  Rng root(42);
  const std::uint64_t first = root.substream("x").next_u64();
  Rng other = root.substream("y");
  for (int i = 0; i < 10; ++i) other.next_u64();
  EXPECT_EQ(root.substream("x").next_u64(), first);
  EXPECT_NE(root.substream("x").next_u64(), root.substream("y").next_u64());
}

TEST(Rng, UniformIntIsInclusive) {
  Rng r(3);
  bool lo = false, hi = false;
  for (int i = 0; i < 1000; ++i) {
    const auto v = r.uniform_int(2, 4);
    ASSERT_GE(v, 2u);
    ASSERT_LE(v, 4u);
    lo = lo || v == 2;
    hi = hi || v == 4;
  }
  EXPECT_TRUE(lo && hi);
}
