#include "epk/epk.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <stdexcept>

#include "epk/errors.hpp"
#include "epk/parallel.hpp"

namespace epk {

Quadrature trapezoid_rules(std::span<const std::size_t> T) {
  if (T.empty()) throw ValidationError("quadrature: no integration step counts given");
  // Nodes keyed by reduced fraction so shared nodes of nested rules coincide exactly.
  std::map<std::pair<std::size_t, std::size_t>, std::size_t> index;
  auto key = [](std::size_t j, std::size_t n) {
    const std::size_t g = std::gcd(j, n);
    return std::pair{j / g, n / g};
  };
  for (std::size_t n : T) {
    if (n == 0) throw ValidationError("quadrature: T must be >= 1");
    for (std::size_t j = 0; j <= n; ++j) index.emplace(key(j, n), 0);
  }
  std::vector<std::pair<double, std::pair<std::size_t, std::size_t>>> ordered;
  for (const auto& [frac, _] : index)
    ordered.push_back({static_cast<double>(frac.first) / static_cast<double>(frac.second), frac});
  std::sort(ordered.begin(), ordered.end());

  Quadrature q;
  q.T.assign(T.begin(), T.end());
  for (std::size_t i = 0; i < ordered.size(); ++i) {
    q.nodes.push_back(ordered[i].first);
    index[ordered[i].second] = i;
  }
  for (std::size_t n : T) {
    std::vector<double> w(q.nodes.size(), 0.0);
    const double h = 1.0 / static_cast<double>(n);
    for (std::size_t j = 0; j <= n; ++j) w[index[key(j, n)]] += (j == 0 || j == n) ? 0.5 * h : h;
    q.weights.push_back(std::move(w));
  }
  return q;
}

std::vector<double> path_point(std::span<const double> theta_s, std::span<const double> theta_next, double t) {
  std::vector<double> out(theta_s.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = theta_s[i] - t * (theta_s[i] - theta_next[i]);
  return out;
}

std::vector<double> loss_output_gradient(const Model& model, std::span<const double> params, const Sample& x) {
  const auto out = model.outputs(params, x);
  std::vector<double> seed(out.size());
  loss_and_output_grad(model.loss_kind(), out, x.label, seed);
  return seed;
}

std::vector<double> sample_loss_gradient(const Model& model, std::span<const double> params, const Sample& x,
                                         double weight) {
  ComputeGraph graph(params);
  const NodeId out = model.forward(graph, std::span<const Sample>(&x, 1));
  Tensor seed(graph.value(out).shape());
  loss_and_output_grad(model.loss_kind(), graph.value(out).data(), x.label, seed.data());
  for (double& v : seed.data()) v *= weight;
  return graph.backward(out, seed);
}

Matrix sample_jacobian(const Model& model, std::span<const double> params, const Sample& x) {
  ComputeGraph graph(params);
  return graph.output_jacobian(model.forward(graph, std::span<const Sample>(&x, 1)));
}

std::vector<double> sample_summed_gradient(const Model& model, std::span<const double> params, const Sample& x) {
  ComputeGraph graph(params);
  const NodeId out = model.forward(graph, std::span<const Sample>(&x, 1));
  return graph.backward(out, Tensor(graph.value(out).shape(), 1.0));
}

Matrix test_feature_map(const TrajectoryLog& log, std::size_t s, const Sample& x, std::size_t T) {
  const Model model(log.setup.model);
  const auto& a = log.at(s).params;
  const auto& b = log.at(s + 1).params;
  const std::size_t rules[] = {T};
  const Quadrature q = trapezoid_rules(rules);
  Matrix phi(model.num_outputs(), model.dim());
  for (std::size_t n = 0; n < q.nodes.size(); ++n) {
    const Matrix jac = sample_jacobian(model, path_point(a, b, q.nodes[n]), x);
    for (std::size_t i = 0; i < phi.values.size(); ++i) phi.values[i] += q.weights[0][n] * jac.values[i];
  }
  return phi;
}

std::vector<double> summed_test_feature_map(const TrajectoryLog& log, std::size_t s, const Sample& x,
                                            std::size_t T) {
  const Model model(log.setup.model);
  const auto& a = log.at(s).params;
  const auto& b = log.at(s + 1).params;
  const std::size_t rules[] = {T};
  const Quadrature q = trapezoid_rules(rules);
  std::vector<double> phi(model.dim(), 0.0);
  for (std::size_t n = 0; n < q.nodes.size(); ++n) {
    const auto g = sample_summed_gradient(model, path_point(a, b, q.nodes[n]), x);
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += q.weights[0][n] * g[i];
  }
  return phi;
}

TrainFeatureStream::TrainFeatureStream(const TrajectoryLog& log, std::span<const Sample> train, TrainMapMode mode,
                                       std::size_t workers)
    : log_(log), model_(log.setup.model), train_(train), mode_(mode), workers_(workers) {
  if (mode_ == TrainMapMode::per_sample) {
    if (train.size() != log.num_train) {
      throw ValidationError("train feature map: log has " + std::to_string(log.num_train) +
                            " training samples, dataset has " + std::to_string(train.size()));
    }
    accum_ = Matrix(train.size(), log.dim);
  }
  reg_accum_.assign(log.dim, 0.0);
}

bool TrainFeatureStream::advance() {
  if (next_ >= log_.steps()) return false;
  const std::size_t s = next_++;
  const std::size_t t = s + 1;  // optimizer step count after this update
  const StepRecord& before = log_.at(s);
  const StepRecord& after = log_.at(t);
  const OptimizerConfig& opt = log_.setup.optimizer;
  const std::size_t dim = log_.dim;
  const double lr = after.lr;
  const bool adam = opt.kind == OptimizerKind::adamw;
  const double b1 = opt.beta1;
  const double kappa = opt.momentum_scaled_step ? b1 : 1.0;

  terms_.step = s;
  terms_.lr = lr;
  terms_.direction.assign(dim, 0.0);
  terms_.reg.assign(dim, 0.0);

  // Adam denominators are shared by every sample: sqrt(v_t / (1 - b2^t)) + eps.
  std::vector<double> scale(dim, 0.0);
  if (adam) {
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(opt.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < dim; ++i) scale[i] = lr / c1 / (std::sqrt(after.v[i] / c2) + opt.eps);
    for (std::size_t i = 0; i < dim; ++i) terms_.reg[i] = lr * before.params[i];
  } else {
    for (std::size_t i = 0; i < dim; ++i) {
      reg_accum_[i] = b1 * reg_accum_[i] + before.params[i];
      terms_.reg[i] = lr * kappa * reg_accum_[i];
      scale[i] = lr * kappa;
    }
  }

  if (mode_ == TrainMapMode::aggregate) {
    if (adam) {
      for (std::size_t i = 0; i < dim; ++i) terms_.direction[i] = scale[i] * after.m[i];
    } else {
      // Recorded b_t = sum beta^{t-i} (g_i + lambda theta_{i-1}); strip the decay part.
      for (std::size_t i = 0; i < dim; ++i)
        terms_.direction[i] = scale[i] * (after.m[i] - opt.weight_decay * reg_accum_[i]);
    }
    terms_.per_sample = Matrix();
    return true;
  }

  const std::size_t m = train_.size();
  const std::size_t batch = after.batch_count();
  const double weight = 1.0 / static_cast<double>(batch);
  const double keep = b1;
  const double inject = adam ? (1.0 - b1) * weight : weight;
  std::vector<std::size_t> members;
  for (std::size_t k = 0; k < m; ++k)
    if (after.batch[k]) members.push_back(k);

  std::vector<std::vector<double>> grads(members.size());
  parallel_for(members.size(), workers_, [&](std::size_t j) {
    grads[j] = sample_loss_gradient(model_, before.params, train_[members[j]], inject);
  });
  for (std::size_t k = 0; k < m; ++k) {
    auto row = accum_.row(k);
    for (double& v : row) v *= keep;
  }
  for (std::size_t j = 0; j < members.size(); ++j) {
    auto row = accum_.row(members[j]);
    for (std::size_t i = 0; i < dim; ++i) row[i] += grads[j][i];
  }

  terms_.per_sample = Matrix(m, dim);
  for (std::size_t k = 0; k < m; ++k) {
    const auto src = accum_.row(k);
    auto dst = terms_.per_sample.row(k);
    for (std::size_t i = 0; i < dim; ++i) dst[i] = scale[i] * src[i];
  }
  for (std::size_t k = 0; k < m; ++k) {
    const auto row = terms_.per_sample.row(k);
    for (std::size_t i = 0; i < dim; ++i) terms_.direction[i] += row[i];
  }
  return true;
}

std::vector<double> train_feature_map(const TrajectoryLog& log, std::span<const Sample> train, std::size_t s,
                                      std::size_t k) {
  if (s >= log.steps()) log.at(s + 1);  // throws naming the missing step
  if (k >= train.size()) throw ValidationError("train feature map: sample index out of range");
  TrainFeatureStream stream(log, train, TrainMapMode::per_sample);
  while (stream.position() <= s) stream.advance();
  const auto row = stream.terms().per_sample.row(k);
  return {row.begin(), row.end()};
}

Reconstruction reconstruct(const TrajectoryLog& log, std::span<const Sample> train, std::span<const Sample> xs,
                           const ReconstructOptions& options) {
  const Model model(log.setup.model);
  const Quadrature q = trapezoid_rules(options.T);
  const std::size_t rules = q.T.size(), n = xs.size(), o = model.num_outputs(), nodes = q.nodes.size();
  const double lambda = log.setup.optimizer.weight_decay;

  Reconstruction rec;
  rec.T = q.T;
  rec.weight_decay = lambda;
  rec.predictions.assign(rules, std::vector<EpkPrediction>(n));
  rec.model_outputs.resize(n);
  const auto& first = log.at(0).params;
  const auto& last = log.at(log.steps()).params;
  for (std::size_t x = 0; x < n; ++x) {
    const auto base = model.outputs(first, xs[x]);
    rec.model_outputs[x] = model.outputs(last, xs[x]);
    for (auto& rule : rec.predictions) {
      rule[x].base = base;
      rule[x].kernel.assign(o, 0.0);
      rule[x].reg.assign(o, 0.0);
    }
  }

  TrainFeatureStream stream(log, train, options.mode, options.workers);
  // Per node and sample: J . direction and J . r for every output.
  std::vector<double> jc(nodes * n * o), jr(nodes * n * o);
  std::vector<std::vector<double>> points(nodes);
  while (stream.advance()) {
    const StepTerms& terms = stream.terms();
    const auto& a = log.at(terms.step).params;
    const auto& b = log.at(terms.step + 1).params;
    for (std::size_t j = 0; j < nodes; ++j) points[j] = path_point(a, b, q.nodes[j]);
    parallel_for(nodes * n, options.workers, [&](std::size_t task) {
      const std::size_t j = task / n, x = task % n;
      const Matrix jac = sample_jacobian(model, points[j], xs[x]);
      for (std::size_t r = 0; r < o; ++r) {
        jc[task * o + r] = linalg::dot(jac.row(r), terms.direction);
        jr[task * o + r] = linalg::dot(jac.row(r), terms.reg);
      }
    });
    for (std::size_t rule = 0; rule < rules; ++rule) {
      for (std::size_t x = 0; x < n; ++x) {
        EpkPrediction& p = rec.predictions[rule][x];
        std::vector<double> delta(o, 0.0);
        for (std::size_t r = 0; r < o; ++r) {
          double kc = 0.0, kr = 0.0;
          for (std::size_t j = 0; j < nodes; ++j) {
            const double w = q.weights[rule][j];
            if (w == 0.0) continue;
            kc += w * jc[(j * n + x) * o + r];
            kr += w * jr[(j * n + x) * o + r];
          }
          p.kernel[r] += kc;
          p.reg[r] += kr;
          delta[r] = -kc - lambda * kr;
        }
        if (options.keep_step_deltas) p.step_deltas.push_back(std::move(delta));
      }
    }
  }

  for (auto& rule : rec.predictions) {
    for (auto& p : rule) {
      p.reconstructed.resize(o);
      for (std::size_t r = 0; r < o; ++r) p.reconstructed[r] = p.base[r] - p.kernel[r] - lambda * p.reg[r];
    }
  }
  return rec;
}

double output_kl(std::span<const double> p_output, std::span<const double> q_output) {
  auto log_normalize = [](std::span<const double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (double x : v) z += std::exp(x - mx);
    const double lse = mx + std::log(z);
    std::vector<double> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - lse;
    return out;
  };
  const auto lp = log_normalize(p_output), lq = log_normalize(q_output);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) kl += std::exp(lp[i]) * (lp[i] - lq[i]);
  return kl;
}

std::vector<FidelityPoint> fidelity(const Reconstruction& rec) {
  std::vector<FidelityPoint> out;
  for (std::size_t rule = 0; rule < rec.T.size(); ++rule) {
    FidelityPoint f;
    f.T = rec.T[rule];
    const auto& preds = rec.predictions[rule];
    std::size_t agree = 0;
    for (std::size_t x = 0; x < preds.size(); ++x) {
      const auto& model_out = rec.model_outputs[x];
      const auto& recon = preds[x].reconstructed;
      if (argmax(model_out) == argmax(recon)) ++agree;
      const double kl = output_kl(model_out, recon);
      f.mean_kl += kl;
      f.max_kl = std::max(f.max_kl, kl);
      for (std::size_t r = 0; r < recon.size(); ++r)
        f.max_abs_error = std::max(f.max_abs_error, std::abs(recon[r] - model_out[r]));
    }
    if (!preds.empty()) {
      f.agreement = static_cast<double>(agree) / static_cast<double>(preds.size());
      f.mean_kl /= static_cast<double>(preds.size());
    }
    out.push_back(f);
  }
  return out;
}

Json to_json(const FidelityPoint& p) {
  return Json{{"T", p.T},
              {"agreement", p.agreement},
              {"mean_kl", p.mean_kl},
              {"max_kl", p.max_kl},
              {"max_abs_error", p.max_abs_error}};
}

}  // namespace epk
