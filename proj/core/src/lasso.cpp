#include "epk/lasso.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "epk/errors.hpp"

namespace epk {

namespace {

struct Standardized {
  std::vector<double> mean, scale;  // scale 0 marks a dropped column
  double y_mean = 0.0;
};

Standardized standardize(const Matrix& X, std::span<const double> y) {
  const std::size_t n = X.rows, p = X.cols;
  Standardized st;
  st.mean.assign(p, 0.0);
  st.scale.assign(p, 0.0);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < p; ++c) st.mean[c] += X(r, c);
  for (double& m : st.mean) m /= static_cast<double>(n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < p; ++c) st.scale[c] += (X(r, c) - st.mean[c]) * (X(r, c) - st.mean[c]);
  for (double& s : st.scale) {
    s = std::sqrt(s / static_cast<double>(n));
    if (s < 1e-12) s = 0.0;
  }
  for (double v : y) st.y_mean += v;
  st.y_mean /= static_cast<double>(n);
  return st;
}

double soft_threshold(double z, double t) {
  if (z > t) return z - t;
  if (z < -t) return z + t;
  return 0.0;
}

}  // namespace

double lasso_lambda_max(const Matrix& X, std::span<const double> y) {
  const Standardized st = standardize(X, y);
  double best = 0.0;
  for (std::size_t c = 0; c < X.cols; ++c) {
    if (st.scale[c] == 0.0) continue;
    double g = 0.0;
    for (std::size_t r = 0; r < X.rows; ++r) g += (X(r, c) - st.mean[c]) / st.scale[c] * (y[r] - st.y_mean);
    best = std::max(best, std::abs(g) / static_cast<double>(X.rows));
  }
  return best;
}

LassoFit lasso_fit(const Matrix& X, std::span<const double> y, const LassoOptions& options) {
  const std::size_t n = X.rows, p = X.cols;
  if (n == 0 || y.size() != n) throw ValidationError("lasso: feature rows and targets disagree");
  if (options.lambda < 0.0) throw ValidationError("lasso: penalty must be >= 0");
  const Standardized st = standardize(X, y);

  // Column-major standardized copy for cache-friendly coordinate updates.
  std::vector<double> Z(n * p, 0.0);
  for (std::size_t c = 0; c < p; ++c)
    if (st.scale[c] > 0.0)
      for (std::size_t r = 0; r < n; ++r) Z[c * n + r] = (X(r, c) - st.mean[c]) / st.scale[c];
  std::vector<double> resid(n);
  for (std::size_t r = 0; r < n; ++r) resid[r] = y[r] - st.y_mean;
  std::vector<double> beta(p, 0.0);
  const double inv_n = 1.0 / static_cast<double>(n);

  auto objective = [&] {
    double rss = 0.0, l1 = 0.0;
    for (double v : resid) rss += v * v;
    for (double b : beta) l1 += std::abs(b);
    return 0.5 * inv_n * rss + options.lambda * l1;
  };

  LassoFit fit;
  for (fit.sweeps = 1; fit.sweeps <= options.max_sweeps; ++fit.sweeps) {
    double max_change = 0.0;
    for (std::size_t c = 0; c < p; ++c) {
      if (st.scale[c] == 0.0) continue;
      const double* z = &Z[c * n];
      // Standardized columns have mean 0 and z.z / n = 1.
      double rho = 0.0;
      for (std::size_t r = 0; r < n; ++r) rho += z[r] * resid[r];
      rho = rho * inv_n + beta[c];
      const double updated = soft_threshold(rho, options.lambda);
      const double delta = updated - beta[c];
      if (delta != 0.0) {
        for (std::size_t r = 0; r < n; ++r) resid[r] -= delta * z[r];
        beta[c] = updated;
      }
      max_change = std::max(max_change, std::abs(delta));
    }
    fit.objective.push_back(objective());
    fit.last_change = max_change;
    if (max_change <= options.tolerance) {
      fit.converged = true;
      break;
    }
  }
  fit.sweeps = std::min(fit.sweeps, options.max_sweeps);

  fit.coefficients.assign(p, 0.0);
  fit.intercept = st.y_mean;
  for (std::size_t c = 0; c < p; ++c) {
    if (st.scale[c] == 0.0) continue;
    fit.coefficients[c] = beta[c] / st.scale[c];
    fit.intercept -= fit.coefficients[c] * st.mean[c];
  }
  return fit;
}

FrequencyFeatures frequency_features(const SimilarityMatrix& sim, std::span<const int> sums, int f_min, int f_max) {
  const std::size_t n = sim.values.rows;
  if (sums.size() != n) throw ValidationError("lasso: need one sample sum per similarity row");
  if (f_min < 1 || f_max < f_min) throw ValidationError("lasso: invalid frequency range");
  FrequencyFeatures ff;
  for (int f = f_min; f <= f_max; ++f) {
    for (bool cosine : {true, false}) {
      ff.period.push_back(f);
      ff.is_cosine.push_back(cosine);
      ff.names.push_back((cosine ? "cos_" : "sin_") + std::to_string(f));
    }
  }
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j && !sim.is_missing(i, j)) pairs.push_back({i, j});
  ff.X = Matrix(pairs.size(), ff.period.size());
  ff.y.resize(pairs.size());
  for (std::size_t r = 0; r < pairs.size(); ++r) {
    const auto [i, j] = pairs[r];
    const double delta = static_cast<double>(sums[i] - sums[j]);
    ff.y[r] = sim.values(i, j);
    for (std::size_t c = 0; c < ff.period.size(); ++c) {
      const double angle = 2.0 * std::numbers::pi * delta / static_cast<double>(ff.period[c]);
      ff.X(r, c) = ff.is_cosine[c] ? std::cos(angle) : std::sin(angle);
    }
  }
  return ff;
}

FrequencySweep lasso_frequency_sweep(const SimilarityMatrix& sim, std::span<const int> sums, int f_min, int f_max,
                                     std::span<const double> fractions, const LassoOptions& base) {
  FrequencySweep sweep;
  sweep.features = frequency_features(sim, sums, f_min, f_max);
  if (sweep.features.X.rows == 0) throw ValidationError("lasso: similarity matrix has no usable pairs");
  const double lmax = lasso_lambda_max(sweep.features.X, sweep.features.y);
  std::vector<double> fr(fractions.begin(), fractions.end());
  std::sort(fr.rbegin(), fr.rend());
  for (double f : fr) {
    LassoOptions o = base;
    o.lambda = f * lmax;
    FrequencyFit ff;
    ff.lambda = o.lambda;
    ff.fit = lasso_fit(sweep.features.X, sweep.features.y, o);
    double best = -1.0;
    for (std::size_t c = 0; c < ff.fit.coefficients.size(); ++c) {
      const double a = std::abs(ff.fit.coefficients[c]);
      if (a > 0.0) ++ff.nonzero;
      if (a > best) {
        best = a;
        ff.dominant = c;
      }
    }
    sweep.fits.push_back(std::move(ff));
  }
  sweep.chosen = sweep.fits.size() - 1;
  for (std::size_t i = 0; i + 1 < sweep.fits.size(); ++i) {
    if (sweep.fits[i].nonzero > 0 && sweep.fits[i].dominant == sweep.fits[i + 1].dominant) {
      sweep.chosen = i;
      break;
    }
  }
  return sweep;
}

Json to_json(const FrequencySweep& sweep) {
  Json fits = Json::array();
  for (const auto& f : sweep.fits) {
    Json coefs = Json::object();
    for (std::size_t c = 0; c < f.fit.coefficients.size(); ++c)
      if (f.fit.coefficients[c] != 0.0) coefs[sweep.features.names[c]] = f.fit.coefficients[c];
    fits.push_back({{"lambda", f.lambda},
                    {"nonzero", f.nonzero},
                    {"dominant", sweep.features.names[f.dominant]},
                    {"intercept", f.fit.intercept},
                    {"sweeps", f.fit.sweeps},
                    {"converged", f.fit.converged},
                    {"final_change", f.fit.last_change},
                    {"coefficients", coefs}});
  }
  const auto& chosen = sweep.fits[sweep.chosen];
  return Json{{"pairs", sweep.features.X.rows},
              {"features", sweep.features.X.cols},
              {"chosen", sweep.chosen},
              {"dominant", sweep.features.names[chosen.dominant]},
              {"dominant_period", sweep.features.period[chosen.dominant]},
              {"dominant_coefficient", chosen.fit.coefficients[chosen.dominant]},
              {"fits", fits}};
}

}  // namespace epk
