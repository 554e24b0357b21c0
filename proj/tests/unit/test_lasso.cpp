#include <gtest/gtest.h>

#include <cmath>

#include "epk/errors.hpp"
#include "epk/lasso.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace epk;

namespace {

Matrix column_design(const std::vector<std::vector<double>>& cols) {
  Matrix X(cols.front().size(), cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c)
    for (std::size_t r = 0; r < X.rows; ++r) X(r, c) = cols[c][r];
  return X;
}

}  // namespace

TEST(Lasso, SingleFeatureClosedForm) {
  const std::vector<double> x{1, 2, 3, 4, 5, 6};
  const std::vector<double> y{2.1, 3.9, 6.2, 8.1, 9.8, 12.2};
  const Matrix X = column_design({x});
  const double lambda = 0.3;
  const auto fit = lasso_fit(X, y, {.lambda = lambda});
  ASSERT_TRUE(fit.converged);
  double mx = 3.5, my = 0.0, sxx = 0.0, sxy = 0.0;
  for (double v : y) my += v / 6.0;
  for (int i = 0; i < 6; ++i) {
    sxx += (x[i] - mx) * (x[i] - mx) / 6.0;
    sxy += (x[i] - mx) * (y[i] - my) / 6.0;
  }
  const double sd = std::sqrt(sxx);
  const double beta_std = std::max(sxy / sd - lambda, 0.0);
  EXPECT_NEAR(fit.coefficients[0], beta_std / sd, 1e-12);
  EXPECT_NEAR(fit.intercept, my - fit.coefficients[0] * mx, 1e-12);
}

TEST(Lasso, ObjectiveMonotonePerSweep) {
  std::vector<int> sums;
  const auto sim = epk::testing::synthetic_similarity(7, 13, 30, 3, sums);
  const auto ff = frequency_features(sim, sums, 2, 20);
  const auto fit = lasso_fit(ff.X, ff.y, {.lambda = 0.002});
  ASSERT_GT(fit.objective.size(), 2u);
  for (std::size_t i = 1; i < fit.objective.size(); ++i) EXPECT_LE(fit.objective[i], fit.objective[i - 1] + 1e-15);
  EXPECT_TRUE(fit.converged);
  EXPECT_LE(fit.last_change, 1e-8);
}

TEST(Lasso, LargePenaltyZeroesEverything) {
  std::vector<int> sums;
  const auto sim = epk::testing::synthetic_similarity(5, 13, 20, 8, sums);
  const auto ff = frequency_features(sim, sums, 2, 10);
  const double lmax = lasso_lambda_max(ff.X, ff.y);
  for (double lambda : {lmax, 10.0 * lmax, 1e12}) {
    const auto fit = lasso_fit(ff.X, ff.y, {.lambda = lambda});
    for (double c : fit.coefficients) EXPECT_EQ(c, 0.0);
    double mean = 0.0;
    for (double v : ff.y) mean += v;
    EXPECT_NEAR(fit.intercept, mean / static_cast<double>(ff.y.size()), 1e-12);
  }
  const auto below = lasso_fit(ff.X, ff.y, {.lambda = 0.9 * lmax});
  std::size_t nz = 0;
  for (double c : below.coefficients) nz += c != 0.0;
  EXPECT_GE(nz, 1u);
}

TEST(Lasso, ConstantColumnsAreDropped) {
  std::vector<int> sums;
  const auto sim = epk::testing::synthetic_similarity(4, 13, 16, 2, sums);
  const auto ff = frequency_features(sim, sums, 1, 6);
  // Period 1 gives cos = 1 and sin = 0 for every integer difference.
  EXPECT_EQ(ff.names[0], "cos_1");
  const auto fit = lasso_fit(ff.X, ff.y, {.lambda = 1e-4});
  EXPECT_EQ(fit.coefficients[0], 0.0);
  EXPECT_EQ(fit.coefficients[1], 0.0);
}

TEST(Lasso, NonConvergenceIsReported) {
  std::vector<int> sums;
  const auto sim = epk::testing::synthetic_similarity(7, 13, 30, 1, sums);
  const auto ff = frequency_features(sim, sums, 2, 20);
  const auto fit = lasso_fit(ff.X, ff.y, {.lambda = 1e-5, .max_sweeps = 1, .tolerance = 1e-14});
  EXPECT_FALSE(fit.converged);
  EXPECT_EQ(fit.sweeps, 1u);
  EXPECT_GT(fit.last_change, 1e-14);
}

TEST(Lasso, RejectsBadInput) {
  const Matrix X(3, 2);
  const std::vector<double> y{1.0, 2.0};
  EXPECT_THROW(lasso_fit(X, y, {}), ValidationError);
  SimilarityMatrix sim;
  sim.values = Matrix(2, 2);
  sim.missing.assign(4, false);
  const std::vector<int> sums{1};
  EXPECT_THROW(frequency_features(sim, sums, 2, 4), ValidationError);
}

TEST(Lasso, FeaturesUseOrderedOffDiagonalPairs) {
  SimilarityMatrix sim;
  sim.values = Matrix(3, 3);
  sim.missing.assign(9, false);
  sim.missing[0 * 3 + 2] = true;
  const std::vector<int> sums{0, 1, 3};
  const auto ff = frequency_features(sim, sums, 2, 3);
  EXPECT_EQ(ff.X.rows, 5u);  // 6 ordered pairs minus one missing
  EXPECT_EQ(ff.X.cols, 4u);
  EXPECT_NEAR(ff.X(0, 0), std::cos(2.0 * std::numbers::pi * -1 / 2.0), 1e-15);  // pair (0, 1), cos_2
}

class LassoRecovery : public ::testing::TestWithParam<int> {};

TEST_P(LassoRecovery, DominantCoefficientAtPeriod) {
  const int q = GetParam();
  std::vector<int> sums;
  const auto sim = epk::testing::synthetic_similarity(q, 13, 40, 100 + static_cast<std::uint64_t>(q), sums);
  const std::vector<double> fractions{0.5, 0.2, 0.1, 0.05, 0.02, 0.01};
  const auto sweep = lasso_frequency_sweep(sim, sums, 2, 26, fractions);
  const auto& chosen = sweep.fits[sweep.chosen];
  EXPECT_EQ(sweep.features.names[chosen.dominant], "cos_" + std::to_string(q));
  EXPECT_GT(chosen.fit.coefficients[chosen.dominant], 0.0);
}

INSTANTIATE_TEST_SUITE_P(Periods, LassoRecovery, ::testing::Values(3, 7, 13));
