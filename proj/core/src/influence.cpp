#include "epk/influence.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "epk/errors.hpp"
#include "epk/parallel.hpp"

namespace epk {

namespace {

double range_dot(std::span<const double> a, std::span<const double> b, std::size_t begin, std::size_t end) {
  double s = 0.0;
  for (std::size_t i = begin; i < end; ++i) s += a[i] * b[i];
  return s;
}

std::vector<ComponentRange> select_components(const Registry& registry, const std::vector<std::string>& names) {
  if (names.empty()) return registry.components();
  std::vector<ComponentRange> out;
  for (const auto& n : names) out.push_back(registry.find(n));
  return out;
}

}  // namespace

InfluenceTable::InfluenceTable(std::vector<StepWindow> windows, std::vector<ComponentRange> components,
                               std::size_t num_test, std::size_t num_train, std::size_t num_outputs, bool per_output)
    : windows_(std::move(windows)),
      components_(std::move(components)),
      num_test_(num_test),
      num_train_(num_train),
      num_outputs_(num_outputs) {
  const std::size_t cells = windows_.size() * components_.size() * num_test_;
  kernel_.assign(cells * num_train_, 0.0);
  reg_.assign(cells, 0.0);
  total_kernel_.assign(windows_.size() * num_test_ * num_train_, 0.0);
  total_reg_.assign(windows_.size() * num_test_, 0.0);
  if (per_output) per_output_.assign(cells * num_train_ * num_outputs_, 0.0);
}

std::size_t InfluenceTable::component_index(const std::string& name) const {
  for (std::size_t c = 0; c < components_.size(); ++c)
    if (components_[c].name == name) return c;
  std::string valid;
  for (const auto& c : components_) valid += (valid.empty() ? "" : ", ") + c.name;
  throw ValidationError("unknown component '" + name + "' (table holds: " + valid + ")");
}

double InfluenceTable::kernel_output(std::size_t w, std::size_t c, std::size_t x, std::size_t k,
                                     std::size_t o) const {
  if (per_output_.empty()) throw std::logic_error("influence table was built without per-output scores");
  return per_output_[(index(w, c, x) * num_train_ + k) * num_outputs_ + o];
}

double InfluenceTable::kernel_over_train(std::size_t w, std::size_t c, std::size_t x) const {
  double s = 0.0;
  for (std::size_t k = 0; k < num_train_; ++k) s += kernel(w, c, x, k);
  return s;
}

std::span<const double> InfluenceTable::parameter_vector(std::size_t w, std::size_t x) const {
  if (pvec_.empty()) throw std::logic_error("influence table was built without parameter vectors");
  return std::span<const double>(pvec_).subspan((w * num_test_ + x) * dim_, dim_);
}

std::span<const double> InfluenceTable::reg_parameter_vector(std::size_t w, std::size_t x) const {
  if (pvec_reg_.empty()) throw std::logic_error("influence table was built without parameter vectors");
  return std::span<const double>(pvec_reg_).subspan((w * num_test_ + x) * dim_, dim_);
}

InfluenceTable compute_influence(const TrajectoryLog& log, std::span<const Sample> train, std::span<const Sample> xs,
                                 const InfluenceRequest& request) {
  const Model model(log.setup.model);
  if (request.T == 0) throw ValidationError("influence: T must be >= 1");
  for (const auto& w : request.windows) {
    if (w.end > log.steps() || w.begin > w.end) {
      throw ValidationError("influence: step window [" + std::to_string(w.begin) + ", " + std::to_string(w.end) +
                            ") outside the log's " + std::to_string(log.steps()) + " transitions");
    }
  }
  const auto components = select_components(model.registry(), request.components);
  const std::size_t n = xs.size(), m = train.size(), dim = model.dim(), o = model.num_outputs();
  const std::size_t nw = request.windows.size(), nc = components.size();
  const bool pairwise = request.pairwise || request.per_output;

  InfluenceTable table(request.windows, components, n, pairwise ? m : 0, o, request.per_output);
  table.num_train_ = m;
  if (!pairwise) {
    table.kernel_.clear();
    table.total_kernel_.clear();
  }
  table.dim_ = dim;
  if (request.parameter_vectors) {
    table.pvec_.assign(nw * n * dim, 0.0);
    table.pvec_reg_.assign(nw * n * dim, 0.0);
  }

  std::size_t last_needed = 0;
  for (const auto& w : request.windows) last_needed = std::max(last_needed, w.end);

  const std::size_t rule[] = {request.T};
  const Quadrature q = trapezoid_rules(rule);
  TrainFeatureStream stream(log, train, TrainMapMode::per_sample, request.workers);
  std::vector<std::vector<double>> phi(n);     // summed test maps
  std::vector<Matrix> phi_out(n);              // per-output test maps
  while (stream.position() < last_needed && stream.advance()) {
    const StepTerms& terms = stream.terms();
    const std::size_t s = terms.step;
    std::vector<std::size_t> active;
    for (std::size_t w = 0; w < nw; ++w)
      if (request.windows[w].contains(s)) active.push_back(w);
    if (active.empty()) continue;

    const auto& a = log.at(s).params;
    const auto& b = log.at(s + 1).params;
    std::vector<std::vector<double>> points(q.nodes.size());
    for (std::size_t j = 0; j < q.nodes.size(); ++j) points[j] = path_point(a, b, q.nodes[j]);
    parallel_for(n, request.workers, [&](std::size_t x) {
      if (request.per_output) {
        Matrix acc(o, dim);
        for (std::size_t j = 0; j < q.nodes.size(); ++j) {
          const Matrix jac = sample_jacobian(model, points[j], xs[x]);
          for (std::size_t i = 0; i < acc.values.size(); ++i) acc.values[i] += q.weights[0][j] * jac.values[i];
        }
        phi[x].assign(dim, 0.0);
        for (std::size_t r = 0; r < o; ++r)
          for (std::size_t i = 0; i < dim; ++i) phi[x][i] += acc(r, i);
        phi_out[x] = std::move(acc);
      } else {
        phi[x].assign(dim, 0.0);
        for (std::size_t j = 0; j < q.nodes.size(); ++j) {
          const auto g = sample_summed_gradient(model, points[j], xs[x]);
          for (std::size_t i = 0; i < dim; ++i) phi[x][i] += q.weights[0][j] * g[i];
        }
      }
    });

    // Per-(x, component) sums for this step; shared by every active window.
    std::vector<double> kern(pairwise ? n * nc * m : 0), tot(pairwise ? n * m : 0), reg(n * nc), treg(n);
    std::vector<double> perout(request.per_output ? n * nc * m * o : 0);
    parallel_for(n, request.workers, [&](std::size_t x) {
      const auto& p = phi[x];
      for (std::size_t c = 0; c < nc; ++c) reg[x * nc + c] = range_dot(p, terms.reg, components[c].begin, components[c].end);
      treg[x] = range_dot(p, terms.reg, 0, dim);
      if (!pairwise) return;
      for (std::size_t k = 0; k < m; ++k) {
        const auto ck = terms.per_sample.row(k);
        for (std::size_t c = 0; c < nc; ++c)
          kern[(x * nc + c) * m + k] = range_dot(p, ck, components[c].begin, components[c].end);
        tot[x * m + k] = range_dot(p, ck, 0, dim);
        if (request.per_output) {
          for (std::size_t c = 0; c < nc; ++c)
            for (std::size_t r = 0; r < o; ++r)
              perout[((x * nc + c) * m + k) * o + r] =
                  range_dot(phi_out[x].row(r), ck, components[c].begin, components[c].end);
        }
      }
    });

    for (std::size_t w : active) {
      for (std::size_t x = 0; x < n; ++x) {
        table.total_reg_[w * n + x] += treg[x];
        for (std::size_t c = 0; c < nc; ++c) table.reg_[table.index(w, c, x)] += reg[x * nc + c];
        if (pairwise) {
          for (std::size_t k = 0; k < m; ++k) table.total_kernel_[(w * n + x) * m + k] += tot[x * m + k];
          for (std::size_t c = 0; c < nc; ++c) {
            double* dst = &table.kernel_[table.index(w, c, x) * m];
            const double* src = &kern[(x * nc + c) * m];
            for (std::size_t k = 0; k < m; ++k) dst[k] += src[k];
          }
        }
        if (request.per_output) {
          for (std::size_t c = 0; c < nc; ++c) {
            double* dst = &table.per_output_[table.index(w, c, x) * m * o];
            const double* src = &perout[(x * nc + c) * m * o];
            for (std::size_t i = 0; i < m * o; ++i) dst[i] += src[i];
          }
        }
        if (request.parameter_vectors) {
          double* pk = &table.pvec_[(w * n + x) * dim];
          double* pr = &table.pvec_reg_[(w * n + x) * dim];
          for (std::size_t i = 0; i < dim; ++i) {
            pk[i] += phi[x][i] * terms.direction[i];
            pr[i] += phi[x][i] * terms.reg[i];
          }
        }
      }
    }

    if (request.step_series) {
      StepImportance si;
      si.step = s;
      si.kernel_abs.assign(nc, 0.0);
      si.reg_abs.assign(nc, 0.0);
      si.difference.assign(nc, 0.0);
      for (std::size_t x = 0; x < n; ++x) {
        const auto& p = phi[x];
        for (std::size_t c = 0; c < nc; ++c) {
          double kc = 0.0, rc = 0.0, diff = 0.0;
          for (std::size_t i = components[c].begin; i < components[c].end; ++i) {
            const double ki = p[i] * terms.direction[i], ri = p[i] * terms.reg[i];
            kc += ki;
            rc += ri;
            diff += std::abs(ki) - std::abs(ri);
          }
          si.kernel_abs[c] += std::abs(kc);
          si.reg_abs[c] += std::abs(rc);
          si.difference[c] += diff;
        }
      }
      table.series_.push_back(std::move(si));
    }
  }
  return table;
}

std::vector<double> psi(const TrajectoryLog& log, std::span<const Sample> train, std::size_t s,
                        const std::string& component, const Sample& x, std::size_t k, std::size_t T) {
  const Model model(log.setup.model);
  const auto& range = model.registry().find(component);
  const auto phi = summed_test_feature_map(log, s, x, T);
  const auto c = train_feature_map(log, train, s, k);
  std::vector<double> out(range.size());
  for (std::size_t i = range.begin; i < range.end; ++i) out[i - range.begin] = phi[i] * c[i];
  return out;
}

Matrix psi_per_output(const TrajectoryLog& log, std::span<const Sample> train, std::size_t s,
                      const std::string& component, const Sample& x, std::size_t k, std::size_t T) {
  const Model model(log.setup.model);
  const auto& range = model.registry().find(component);
  const Matrix phi = test_feature_map(log, s, x, T);
  const auto c = train_feature_map(log, train, s, k);
  Matrix out(phi.rows, range.size());
  for (std::size_t r = 0; r < phi.rows; ++r)
    for (std::size_t i = range.begin; i < range.end; ++i) out(r, i - range.begin) = phi(r, i) * c[i];
  return out;
}

double reg_influence(const TrajectoryLog& log, std::size_t s, const std::string& component, const Sample& x,
                     std::size_t T) {
  const Model model(log.setup.model);
  const auto& range = model.registry().find(component);
  const auto phi = summed_test_feature_map(log, s, x, T);
  TrainFeatureStream stream(log, {}, TrainMapMode::aggregate);
  while (stream.position() <= s) stream.advance();
  return range_dot(phi, stream.terms().reg, range.begin, range.end);
}

SimilarityMatrix similarity(const std::vector<std::vector<double>>& vectors) {
  const std::size_t n = vectors.size();
  SimilarityMatrix sim{Matrix(n, n), std::vector<bool>(n * n, false)};
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) norms[i] = std::sqrt(linalg::dot(vectors[i], vectors[i]));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      double v = 0.0;
      bool missing = norms[i] == 0.0 || norms[j] == 0.0;
      if (!missing) {
        v = i == j ? 1.0 : linalg::dot(vectors[i], vectors[j]) / (norms[i] * norms[j]);
        v = std::clamp(v, -1.0, 1.0);
      }
      sim.values(i, j) = sim.values(j, i) = v;
      sim.missing[i * n + j] = sim.missing[j * n + i] = missing;
    }
  }
  return sim;
}

SimilarityMatrix similarity(const InfluenceTable& table, std::size_t window, const ComponentRange& component) {
  std::vector<std::vector<double>> vecs(table.num_test());
  for (std::size_t x = 0; x < table.num_test(); ++x) {
    const auto p = table.parameter_vector(window, x).subspan(component.begin, component.size());
    vecs[x].assign(p.begin(), p.end());
  }
  return similarity(vecs);
}

std::string sample_label(const Sample& s) {
  if (s.a < 0) return "label " + std::to_string(s.label);
  return std::to_string(s.a) + "+" + std::to_string(s.b) + "=" + std::to_string(s.sum) + " (" +
         std::to_string(s.label) + ")";
}

namespace {

std::vector<std::size_t> order_by_sum(std::span<const Sample> samples) {
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) {
    return std::tie(samples[i].sum, samples[i].label) < std::tie(samples[j].sum, samples[j].label);
  });
  return idx;
}

}  // namespace

KernelSlice kernel_slice(const InfluenceTable& table, std::size_t window, std::size_t component,
                         std::span<const Sample> test, std::span<const Sample> train) {
  if (test.size() != table.num_test() || train.size() != table.num_train())
    throw ValidationError("kernel slice: sample sets do not match the influence table");
  KernelSlice slice;
  slice.test_order = order_by_sum(test);
  slice.train_order = order_by_sum(train);
  slice.values = Matrix(test.size(), train.size());
  for (std::size_t r = 0; r < test.size(); ++r)
    for (std::size_t c = 0; c < train.size(); ++c)
      slice.values(r, c) = table.kernel(window, component, slice.test_order[r], slice.train_order[c]);
  for (auto i : slice.test_order) slice.row_labels.push_back(sample_label(test[i]));
  for (auto i : slice.train_order) slice.col_labels.push_back(sample_label(train[i]));
  return slice;
}

ResidueContrast residue_contrast(const KernelSlice& slice, std::span<const Sample> test,
                                 std::span<const Sample> train) {
  ResidueContrast rc;
  for (std::size_t r = 0; r < slice.values.rows; ++r) {
    for (std::size_t c = 0; c < slice.values.cols; ++c) {
      const double v = std::abs(slice.values(r, c));
      if (test[slice.test_order[r]].label == train[slice.train_order[c]].label) {
        rc.matching += v;
        ++rc.matching_pairs;
      } else {
        rc.other += v;
        ++rc.other_pairs;
      }
    }
  }
  if (rc.matching_pairs) rc.matching /= static_cast<double>(rc.matching_pairs);
  if (rc.other_pairs) rc.other /= static_cast<double>(rc.other_pairs);
  return rc;
}

ResidueContrast residue_contrast(const SimilarityMatrix& sim, std::span<const Sample> samples) {
  ResidueContrast rc;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    for (std::size_t j = 0; j < samples.size(); ++j) {
      if (i == j || sim.is_missing(i, j)) continue;
      if (samples[i].label == samples[j].label) {
        rc.matching += sim.values(i, j);
        ++rc.matching_pairs;
      } else {
        rc.other += sim.values(i, j);
        ++rc.other_pairs;
      }
    }
  }
  if (rc.matching_pairs) rc.matching /= static_cast<double>(rc.matching_pairs);
  if (rc.other_pairs) rc.other /= static_cast<double>(rc.other_pairs);
  return rc;
}

}  // namespace epk
