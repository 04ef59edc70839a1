#include <gtest/gtest.h>

#include <cmath>

#include "support/helpers.hpp"
#include "topicrag/error.hpp"
#include "topicrag/grad_check.hpp"
#include "topicrag/ssm.hpp"

using namespace topicrag;
using topicrag::testing::random_tensor;
using topicrag::testing::weighted_sum;

namespace {

// y(t) = sum_{s<=t} C diag(a_bar^(t-s)) B_bar x(s) + D x(t), evaluated term by term.
Tensor convolution_oracle(const Tensor& x, const DiscreteSsm& sys, const Tensor& c, const Tensor& d) {
  const std::size_t T = x.rows(), din = x.cols(), ds = sys.a_bar.size(), dout = c.rows();
  Tensor y({T, dout});
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t o = 0; o < dout; ++o) {
      double acc = 0.0;
      for (std::size_t s = 0; s <= t; ++s)
        for (std::size_t i = 0; i < ds; ++i) {
          double bx = 0.0;
          for (std::size_t j = 0; j < din; ++j) bx += sys.b_bar.at(i, j) * x.at(s, j);
          acc += c.at(o, i) * std::pow(sys.a_bar[i], static_cast<double>(t - s)) * bx;
        }
      for (std::size_t j = 0; j < din; ++j) acc += d.at(o, j) * x.at(t, j);
      y.at(t, o) = acc;
    }
  return y;
}

}  // namespace

TEST(SsmDiscretize, MatchesClosedFormScalar) {
  const double a = -0.5, b = 2.0, delta = 0.1;
  const DiscreteSsm s = ssm_discretize(std::vector<double>{a}, Tensor::matrix({{b}}), delta);
  EXPECT_NEAR(s.a_bar[0], std::exp(-0.05), 1e-9);
  EXPECT_NEAR(s.b_bar[0], (1.0 - std::exp(-0.05)) * 4.0, 1e-9);  // (e^{da}-1)/a * b
}

TEST(SsmDiscretize, PerStateDeltas) {
  const std::vector<double> a = {-1.0, -3.0};
  const std::vector<double> delta = {0.2, 0.05};
  const DiscreteSsm s = ssm_discretize(a, Tensor::matrix({{1.0, -1.0}, {0.5, 2.0}}), delta);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_NEAR(s.a_bar[i], std::exp(delta[i] * a[i]), 1e-12);
    const double f = (std::exp(delta[i] * a[i]) - 1.0) / a[i];
    EXPECT_NEAR(s.b_bar.at(i, 0), f * (i == 0 ? 1.0 : 0.5), 1e-12);
    EXPECT_NEAR(s.b_bar.at(i, 1), f * (i == 0 ? -1.0 : 2.0), 1e-12);
  }
}

TEST(SsmDiscretize, ZeroRateUsesLimit) {
  const DiscreteSsm s = ssm_discretize(std::vector<double>{0.0}, Tensor::matrix({{3.0}}), 0.25);
  EXPECT_EQ(s.a_bar[0], 1.0);
  EXPECT_DOUBLE_EQ(s.b_bar[0], 0.75);
}

TEST(SsmDiscretize, SeriesSwitchIsContinuous) {
  const double delta = 1.0;
  for (double z : {0.5e-8, 0.9e-8, 0.999e-8, 1.001e-8, 1.1e-8, 2e-8, -0.9e-8, -1.1e-8}) {
    const DiscreteSsm s = ssm_discretize(std::vector<double>{z}, Tensor::matrix({{1.0}}), delta);
    EXPECT_NEAR(s.b_bar[0], 1.0, 1e-6) << "z=" << z;
  }
  const auto below = ssm_discretize(std::vector<double>{-0.999e-8}, Tensor::matrix({{1.0}}), delta);
  const auto above = ssm_discretize(std::vector<double>{-1.001e-8}, Tensor::matrix({{1.0}}), delta);
  EXPECT_NEAR(below.b_bar[0], above.b_bar[0], 1e-6);
}

TEST(SsmDiscretize, RejectsNonPositiveDelta) {
  const Tensor b = Tensor::matrix({{1.0}});
  EXPECT_THROW(ssm_discretize(std::vector<double>{-1.0}, b, 0.0), ValidationError);
  EXPECT_THROW(ssm_discretize(std::vector<double>{-1.0}, b, -0.1), ValidationError);
  EXPECT_THROW(ssm_discretize(std::vector<double>{-1.0, -2.0}, Tensor::matrix({{1.0}, {1.0}}),
                              std::vector<double>{0.1, 0.0}),
               ValidationError);
}

TEST(SsmDiscretize, RejectsShapeMismatch) {
  EXPECT_THROW(ssm_discretize(std::vector<double>{-1.0, -2.0}, Tensor::matrix({{1.0}}), 0.1), DimensionError);
}

TEST(SsmScan, MatchesConvolutionOracle) {
  Rng rng(7);
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t T = 1 + rng.below(16), din = 1 + rng.below(4), ds = 1 + rng.below(5), dout = 1 + rng.below(4);
    std::vector<double> a(ds), delta(ds);
    for (std::size_t i = 0; i < ds; ++i) {
      a[i] = -rng.uniform(0.05, 3.0);
      delta[i] = rng.uniform(0.01, 0.5);
    }
    const DiscreteSsm sys = ssm_discretize(a, random_tensor(rng, {ds, din}), delta);
    const Tensor x = random_tensor(rng, {T, din});
    const Tensor c = random_tensor(rng, {dout, ds}), d = random_tensor(rng, {dout, din});
    const Tensor y = ssm_scan(x, sys, c, d);
    const Tensor oracle = convolution_oracle(x, sys, c, d);
    ASSERT_EQ(y.shape(), oracle.shape());
    for (std::size_t i = 0; i < y.size(); ++i) EXPECT_NEAR(y[i], oracle[i], 1e-12);
  }
}

TEST(SsmScan, StartsFromZeroState) {
  const DiscreteSsm sys = ssm_discretize(std::vector<double>{-1.0}, Tensor::matrix({{1.0}}), 0.1);
  const Tensor y = ssm_scan(Tensor::matrix({{0.0}, {0.0}}), sys, Tensor::matrix({{1.0}}), Tensor::matrix({{1.0}}));
  EXPECT_EQ(y[0], 0.0);
  EXPECT_EQ(y[1], 0.0);
}

TEST(SelectiveScan, ValueMatchesDiscretizeThenScan) {
  Rng rng(11);
  const std::size_t T = 6, din = 3, ds = 4, dout = 2;
  const Tensor x = random_tensor(rng, {T, din}), b = random_tensor(rng, {ds, din});
  const Tensor c = random_tensor(rng, {dout, ds}), d = random_tensor(rng, {dout, din});
  Tensor a({ds}), delta({ds});
  for (std::size_t i = 0; i < ds; ++i) {
    a[i] = -rng.uniform(0.1, 2.0);
    delta[i] = rng.uniform(0.01, 0.3);
  }
  Tape t;
  const Var y = selective_scan(t.constant(x), t.constant(a), t.constant(delta), t.constant(b), t.constant(c),
                               t.constant(d));
  const Tensor ref = ssm_scan(x, ssm_discretize(a.values(), b, delta.values()), c, d);
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.value()[i], ref[i], 1e-12);
}

class SelectiveScanGradients : public ::testing::TestWithParam<int> {};

TEST_P(SelectiveScanGradients, MatchCentralDifferences) {
  Rng rng(300 + static_cast<std::uint64_t>(GetParam()));
  const std::size_t T = 1 + rng.below(8), din = 1 + rng.below(4), ds = 1 + rng.below(4), dout = 1 + rng.below(4);
  Tensor a({ds}), delta({ds});
  for (std::size_t i = 0; i < ds; ++i) {
    a[i] = -rng.uniform(0.1, 2.0);
    delta[i] = rng.uniform(0.05, 0.5);
  }
  const Tensor w = random_tensor(rng, {T, dout});
  const double err = grad_check(
      [&](Tape& t, std::span<const Var> v) { return weighted_sum(t, selective_scan(v[0], v[1], v[2], v[3], v[4], v[5]), w); },
      {random_tensor(rng, {T, din}), a, delta, random_tensor(rng, {ds, din}), random_tensor(rng, {dout, ds}),
       random_tensor(rng, {dout, din})});
  EXPECT_LT(err, 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, SelectiveScanGradients, ::testing::Range(0, 12));

TEST(SelectiveScan, RejectsNonPositiveDelta) {
  Tape t;
  EXPECT_THROW(selective_scan(t.constant(Tensor({2, 1}, 1.0)), t.constant(Tensor({1}, {-1.0})),
                              t.constant(Tensor({1}, {0.0})), t.constant(Tensor({1, 1}, 1.0)),
                              t.constant(Tensor({1, 1}, 1.0)), t.constant(Tensor({1, 1}, 1.0))),
               ValidationError);
}
