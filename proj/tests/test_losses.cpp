#include <gtest/gtest.h>

#include <cmath>

#include "pslab/center_bank.hpp"
#include "pslab/errors.hpp"
#include "pslab/gradcheck.hpp"
#include "pslab/losses.hpp"
#include "pslab/rng.hpp"

using namespace pslab;

namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (double& e : v) e = scale * rng.normal();
  return Tensor({r, c}, std::move(v));
}

// direct per-row evaluation of -log softmax restricted to `set`
double restricted_ce(const Tensor& z, std::span<const int> y, const std::set<int>& set) {
  double total = 0.0;
  for (std::size_t i = 0; i < z.rows(); ++i) {
    double denom = 0.0;
    for (int c : set) denom += std::exp(z.at(i, c));
    total += -std::log(std::exp(z.at(i, y[i])) / denom);
  }
  return total / z.rows();
}

}  // namespace

TEST(SoftmaxCE, UniformLogits) {
  const Tensor z = Tensor::matrix(1, 4, {0.3, 0.3, 0.3, 0.3});
  const int y[] = {2};
  EXPECT_NEAR(softmax_ce(z, y).loss, std::log(4.0), 1e-12);
}

TEST(SoftmaxCE, SaturatedCorrect) {
  const Tensor z = Tensor::matrix(1, 3, {0, 1000, 0});
  const int y[] = {1};
  const auto r = softmax_ce(z, y);
  EXPECT_NEAR(r.loss, 0.0, 1e-12);
  EXPECT_TRUE(r.grad.all_finite());
}

TEST(SoftmaxCE, LabelOutOfRange) {
  const Tensor z = Tensor::matrix(1, 3, {0, 0, 0});
  const int bad[] = {3};
  const int neg[] = {-1};
  EXPECT_THROW(softmax_ce(z, bad), IndexError);
  EXPECT_THROW(softmax_ce(z, neg), IndexError);
}

TEST(SoftmaxCE, FiniteDifferences) {
  Rng rng(21);
  Tensor z = random_matrix(8, 10, rng);
  std::vector<int> y(8);
  for (int& v : y) v = static_cast<int>(rng.uniform_index(10));
  const auto r = softmax_ce(z, y);
  const auto check = finite_diff_check([&] { return softmax_ce(z, y).loss; }, z.values(),
                                       r.grad.values());
  EXPECT_LE(check.max_relative_error, 1e-6);
}

TEST(Rss, FullSetMatchesSoftmax) {
  Rng rng(22);
  const Tensor z = random_matrix(5, 7, rng);
  std::vector<int> y = {0, 3, 6, 2, 2};
  std::set<int> all;
  for (int c = 0; c < 7; ++c) all.insert(c);
  const auto a = rss_loss(z, y, all);
  const auto b = softmax_ce(z, y);
  EXPECT_NEAR(a.loss, b.loss, 1e-14);
  for (std::size_t i = 0; i < a.grad.size(); ++i) EXPECT_NEAR(a.grad[i], b.grad[i], 1e-15);
}

TEST(Rss, SingletonSetIsZero) {
  const Tensor z = Tensor::matrix(1, 4, {1, -3, 2, 0.5});
  const int y[] = {2};
  const auto r = rss_loss(z, y, {2});
  EXPECT_EQ(r.loss, 0.0);
  for (double g : r.grad.values()) EXPECT_EQ(g, 0.0);
}

TEST(Rss, ThreeTermDenominator) {
  const Tensor z = Tensor::matrix(1, 5, {0.2, -1.0, 1.5, 0.7, -0.3});
  const int y[] = {2};
  const std::set<int> set = {2, 0, 4};
  const double expected =
      -std::log(std::exp(1.5) / (std::exp(0.2) + std::exp(1.5) + std::exp(-0.3)));
  const auto r = rss_loss(z, y, set);
  EXPECT_NEAR(r.loss, expected, 1e-14);
  EXPECT_EQ(r.grad.at(0, 1), 0.0);
  EXPECT_EQ(r.grad.at(0, 3), 0.0);
}

TEST(Rss, MatchesDirectEvaluationOnRandomSets) {
  Rng rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor z = random_matrix(6, 12, rng, 2.0);
    std::vector<int> y(6);
    for (int& v : y) v = static_cast<int>(rng.uniform_index(12));
    const auto set = sample_rss_classes(y, 12, 3, rng);
    EXPECT_NEAR(rss_loss(z, y, set).loss, restricted_ce(z, y, set), 1e-12);
  }
}

TEST(Rss, ContractViolations) {
  const Tensor z = Tensor::matrix(1, 3, {0, 0, 0});
  const int unknown[] = {kUnknownLabel};
  const int outside[] = {1};
  EXPECT_THROW(rss_loss(z, unknown, {0, 1}), ContractError);
  EXPECT_THROW(rss_loss(z, outside, {0, 2}), ContractError);
}

TEST(Rss, SamplingKeepsPositivesAndClampsK) {
  Rng rng(24);
  const int y[] = {1, 4, 4};
  const auto s = sample_rss_classes(y, 10, 3, rng);
  EXPECT_EQ(s.size(), 5u);
  EXPECT_TRUE(s.count(1) && s.count(4));
  const auto all = sample_rss_classes(y, 10, 100, rng);
  EXPECT_EQ(all.size(), 10u);
}

TEST(Rss, NegativesAreUniform) {
  Rng rng(25);
  const int y[] = {0};
  std::vector<int> hits(10, 0);
  const int n = 20000;
  for (int i = 0; i < n; ++i)
    for (int c : sample_rss_classes(y, 10, 3, rng))
      if (c != 0) ++hits[c];
  for (int c = 1; c < 10; ++c) EXPECT_NEAR(hits[c] / double(n), 3.0 / 9.0, 0.015);
}

TEST(CenterLoss, ForwardExamples) {
  CenterBank bank(2, 0.5);
  bank.set_center(0, {0, 0});
  const int one[] = {0};
  EXPECT_EQ(center_loss_forward(Tensor::matrix(1, 2, {0, 0}), one, bank), 0.0);
  EXPECT_EQ(center_loss_forward(Tensor::matrix(1, 2, {1, 0}), one, bank), 0.5);
  bank.set_center(0, {1, 1});
  const int two[] = {0, 0};
  EXPECT_EQ(center_loss_forward(Tensor::matrix(2, 2, {2, 0, 0, 2}), two, bank), 2.0);
}

TEST(CenterLoss, BackwardExamples) {
  CenterBank bank(2, 0.5);
  bank.set_center(3, {1, 1});
  const int y[] = {3};
  EXPECT_EQ(center_loss_backward(Tensor::matrix(1, 2, {1, 1}), y, bank).values(),
            (std::vector<double>{0, 0}));
  Tensor x = Tensor::matrix(1, 2, {3, 4});
  const Tensor g = center_loss_backward(x, y, bank);
  EXPECT_EQ(g.values(), (std::vector<double>{2, 3}));
  const auto r = finite_diff_check([&] { return center_loss_forward(x, y, bank); },
                                   x.values(), g.values());
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(CenterLoss, ScaledGradientMatchesFiniteDifferences) {
  Rng rng(26);
  const double lambda = 0.032;
  CenterBank bank(4, 0.5);
  Tensor x = random_matrix(6, 4, rng);
  const std::vector<int> y = {0, 1, 0, 2, 1, 0};
  bank.ensure_centers(random_matrix(6, 4, rng), y);
  Tensor g = center_loss_backward(x, y, bank);
  for (double& v : g.values()) v *= lambda;
  const auto r = finite_diff_check(
      [&] { return lambda * center_loss_forward(x, y, bank); }, x.values(), g.values());
  EXPECT_LE(r.max_relative_error, 1e-6);
}

TEST(CenterLoss, RejectsUnknownAndBackground) {
  CenterBank bank(2, 0.5);
  const Tensor x = Tensor::matrix(1, 2, {1, 1});
  for (int bad : {kUnknownLabel, kBackgroundLabel}) {
    const int y[] = {bad};
    EXPECT_THROW(center_loss_forward(x, y, bank), ContractError);
    EXPECT_THROW(center_loss_backward(x, y, bank), ContractError);
    EXPECT_THROW(center_update(bank, x, y), ContractError);
    EXPECT_THROW(bank.ensure_centers(x, y), ContractError);
  }
}

TEST(CenterUpdate, HandExample) {
  CenterBank bank(2, 1.0);
  bank.set_center(5, {0, 0});
  const int y[] = {5, 5};
  const Tensor x = Tensor::matrix(2, 2, {2, 0, 4, 0});
  const auto d = center_deltas(x, y, bank);
  EXPECT_EQ(d.at(5), (std::vector<double>{-2, 0}));
  center_update(bank, x, y);
  EXPECT_EQ(bank.center(5), (std::vector<double>{2, 0}));
}

TEST(CenterUpdate, FixedPointAndAbsentClass) {
  CenterBank bank(2, 0.5);
  bank.set_center(1, {1, 2});
  bank.set_center(2, {7, 7});
  const int y[] = {1, 1};
  center_update(bank, Tensor::matrix(2, 2, {1, 2, 1, 2}), y);
  EXPECT_EQ(bank.center(1), (std::vector<double>{1, 2}));
  EXPECT_EQ(bank.center(2), (std::vector<double>{7, 7}));
}

TEST(CenterUpdate, StepIsLinearInAlpha) {
  const Tensor x = Tensor::matrix(3, 2, {1, 2, 3, -1, 0.5, 0.5});
  const int y[] = {0, 0, 0};
  auto step = [&](double alpha) {
    CenterBank bank(2, alpha);
    bank.set_center(0, {0, 0});
    center_update(bank, x, y);
    return std::hypot(bank.center(0)[0], bank.center(0)[1]);
  };
  const double base = step(1e-3);
  for (double a : {2e-3, 5e-3, 1e-2}) EXPECT_NEAR(step(a) / base, a / 1e-3, 1e-9);
}

TEST(CenterBank, FirstFeatureInitializesCenter) {
  CenterBank bank(2, 0.5);
  const int y[] = {4, 4};
  bank.ensure_centers(Tensor::matrix(2, 2, {1, 2, 9, 9}), y);
  EXPECT_EQ(bank.center(4), (std::vector<double>{1, 2}));
  EXPECT_THROW(CenterBank(2, 1.5), ConfigError);
  EXPECT_THROW(bank.center(8), IndexError);
}

TEST(SmoothedL1, PiecewiseValues) {
  auto one = [](double e) {
    return smoothed_l1(Tensor::matrix(1, 1, {e}), Tensor::matrix(1, 1, {0})).loss;
  };
  EXPECT_EQ(one(0.0), 0.0);
  EXPECT_EQ(one(0.5), 0.125);
  EXPECT_EQ(one(2.0), 1.5);
  EXPECT_EQ(one(-2.0), 1.5);
}

TEST(SmoothedL1, SumsRowsAveragesBatch) {
  const Tensor p = Tensor::matrix(2, 2, {0.5, 2, 0, 0});
  const Tensor t = Tensor::matrix(2, 2, {0, 0, 0, 0});
  EXPECT_DOUBLE_EQ(smoothed_l1(p, t).loss, (0.125 + 1.5) / 2.0);
}

TEST(TotalLoss, Arithmetic) {
  EXPECT_NEAR(total_loss(1.0, 0.5, 10.0, 0.032).total, 1.82, 1e-12);
  EXPECT_EQ(total_loss(1.0, 0.5, 10.0, 0.0).total, 1.5);
  EXPECT_EQ(total_loss(1.0, 0.5, 0.0, 0.7).total, total_loss(1.0, 0.5, 0.0, 0.01).total);
  EXPECT_THROW(total_loss(1.0, 0.5, 1.0, -0.1), ConfigError);
  EXPECT_THROW(total_loss(std::nan(""), 0.5, 1.0, 0.1), NumericalError);
}
