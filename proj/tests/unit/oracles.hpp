#pragma once

// Closed forms and synthetic inputs written independently of the library
// so they can serve as oracles.

#include <cmath>
#include <cstddef>
#include <numbers>
#include <vector>

#include "epk/influence.hpp"
#include "epk/rng.hpp"

namespace epk::testing {

// m_s = sum_{i=1..s} (1 - b1) b1^{s-i} g_i, for every coordinate.
inline std::vector<double> adamw_first_moment(const std::vector<std::vector<double>>& grads, std::size_t s, double b1) {
  std::vector<double> m(grads.front().size(), 0.0);
  for (std::size_t i = 1; i <= s; ++i) {
    const double w = (1.0 - b1) * std::pow(b1, static_cast<double>(s - i));
    for (std::size_t j = 0; j < m.size(); ++j) m[j] += w * grads[i - 1][j];
  }
  return m;
}

inline std::vector<double> adamw_second_moment(const std::vector<std::vector<double>>& grads, std::size_t s, double b2) {
  std::vector<double> v(grads.front().size(), 0.0);
  for (std::size_t i = 1; i <= s; ++i) {
    const double w = (1.0 - b2) * std::pow(b2, static_cast<double>(s - i));
    for (std::size_t j = 0; j < v.size(); ++j) v[j] += w * grads[i - 1][j] * grads[i - 1][j];
  }
  return v;
}

// Momentum with decay inside the buffer, unrolled:
//   theta_s = theta_{s-1} - a_s * k * sum_{i=1..s} beta^{s-i} (g_i + lambda theta_{i-1}),
// k = beta for the scaled step and 1 otherwise. thetas[i] holds theta_i.
inline std::vector<double> momentum_expansion(const std::vector<std::vector<double>>& thetas,
                                              const std::vector<std::vector<double>>& grads,
                                              const std::vector<double>& lrs, std::size_t s, double beta,
                                              double lambda, bool scaled) {
  std::vector<double> out = thetas[s - 1];
  const double k = scaled ? beta : 1.0;
  for (std::size_t i = 1; i <= s; ++i) {
    const double w = lrs[s - 1] * k * std::pow(beta, static_cast<double>(s - i));
    for (std::size_t j = 0; j < out.size(); ++j) out[j] -= w * (grads[i - 1][j] + lambda * thetas[i - 1][j]);
  }
  return out;
}

// Similarity 0.9 cos(2 pi (sum_i - sum_j) / q) + N(0, sigma) over random sums in [0, 2 (p - 1)].
inline SimilarityMatrix synthetic_similarity(int q, int p, std::size_t n, std::uint64_t seed, std::vector<int>& sums,
                                             double sigma = 0.05) {
  SplitMix64 rng(seed);
  sums.resize(n);
  for (int& s : sums) s = static_cast<int>(rng.below(static_cast<std::uint64_t>(2 * p - 1)));
  SimilarityMatrix sim;
  sim.values = Matrix(n, n);
  sim.missing.assign(n * n, false);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      sim.values(i, j) = 0.9 * std::cos(2.0 * std::numbers::pi * (sums[i] - sums[j]) / q) + sigma * rng.normal();
  return sim;
}

}  // namespace epk::testing
