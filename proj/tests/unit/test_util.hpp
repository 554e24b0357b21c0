#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "epk/rng.hpp"

namespace epk::testing {

inline std::vector<double> random_vector(std::size_t n, std::uint64_t seed, double scale = 1.0) {
  SplitMix64 rng(seed);
  std::vector<double> v(n);
  for (double& x : v) x = scale * rng.normal();
  return v;
}

// Relative error with a small absolute floor so exact zeros compare cleanly.
inline double relative_error(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Central difference of a scalar function of the parameter vector along coordinate i.
inline double central_difference(const std::function<double(std::span<const double>)>& f, std::vector<double> x,
                                 std::size_t i, double h = 1e-4) {
  const double x0 = x[i];
  x[i] = x0 + h;
  const double up = f(x);
  x[i] = x0 - h;
  const double down = f(x);
  return (up - down) / (2.0 * h);
}

}  // namespace epk::testing
