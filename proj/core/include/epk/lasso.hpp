#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "epk/influence.hpp"
#include "epk/io.hpp"
#include "epk/tensor.hpp"

namespace epk {

struct LassoOptions {
  double lambda = 0.01;
  std::size_t max_sweeps = 10000;
  double tolerance = 1e-8;  // on the largest coefficient change within a sweep
};

/// Coordinate-descent Lasso on standardized features with an unpenalized intercept:
///   min (1 / 2n) ||y - b - X beta||^2 + lambda ||beta||_1
/// Zero-variance columns are dropped (coefficient 0). Coefficients are
/// reported on the original feature scale.
struct LassoFit {
  std::vector<double> coefficients;
  double intercept = 0.0;
  std::vector<double> objective;  // after each sweep
  std::size_t sweeps = 0;
  bool converged = false;
  double last_change = 0.0;
};

LassoFit lasso_fit(const Matrix& X, std::span<const double> y, const LassoOptions& options);

/// Largest lambda for which every coefficient is zero.
double lasso_lambda_max(const Matrix& X, std::span<const double> y);

/// Pairwise-difference Fourier features: for ordered pairs (i, j), i != j, with
/// delta = sum_i - sum_j, columns cos(2 pi delta / f) and sin(2 pi delta / f), f = f_min..f_max.
struct FrequencyFeatures {
  Matrix X;
  std::vector<double> y;
  std::vector<int> period;
  std::vector<bool> is_cosine;
  std::vector<std::string> names;
};

FrequencyFeatures frequency_features(const SimilarityMatrix& sim, std::span<const int> sums, int f_min, int f_max);

struct FrequencyFit {
  double lambda = 0.0;
  LassoFit fit;
  std::size_t dominant = 0;  // feature index with the largest |coefficient|
  std::size_t nonzero = 0;
};

struct FrequencySweep {
  FrequencyFeatures features;
  std::vector<FrequencyFit> fits;  // decreasing lambda
  std::size_t chosen = 0;          // sparsest fit whose dominant feature is stable
};

/// Sweeps lambda over `fractions` of lambda_max and picks the sparsest fit
/// whose dominant feature agrees with the next smaller lambda.
FrequencySweep lasso_frequency_sweep(const SimilarityMatrix& sim, std::span<const int> sums, int f_min, int f_max,
                                     std::span<const double> fractions, const LassoOptions& base = {});

Json to_json(const FrequencySweep& sweep);

}  // namespace epk
