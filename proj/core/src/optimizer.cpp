#include "epk/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace epk {

std::string to_string(OptimizerKind kind) { return kind == OptimizerKind::adamw ? "adamw" : "sgd_momentum"; }

OptimizerKind optimizer_kind_from_string(const std::string& name) {
  if (name == "adamw") return OptimizerKind::adamw;
  if (name == "sgd_momentum") return OptimizerKind::sgd_momentum;
  throw std::invalid_argument("unknown optimizer '" + name + "' (expected adamw or sgd_momentum)");
}

double Schedule::at(std::size_t step) const {
  if (kind == Kind::constant) return peak;
  const double s = static_cast<double>(step);
  if (step <= peak_step) return peak * s / static_cast<double>(peak_step);
  return peak * static_cast<double>(total_steps + 1 - step) / static_cast<double>(total_steps + 1 - peak_step);
}

void Schedule::validate() const {
  if (!(peak > 0.0) || !std::isfinite(peak)) throw std::invalid_argument("schedule: peak learning rate must be > 0");
  if (kind == Kind::linear_warmup_peak_decay && (peak_step == 0 || peak_step > total_steps)) {
    throw std::invalid_argument("schedule: peak step must lie in [1, total steps]");
  }
}

void OptimizerConfig::validate() const {
  schedule.validate();
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw std::invalid_argument("optimizer: beta1 must lie in [0, 1)");
  if (kind == OptimizerKind::adamw && !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("optimizer: beta2 must lie in [0, 1)");
  }
  if (eps < 0.0) throw std::invalid_argument("optimizer: eps must be >= 0");
  if (weight_decay < 0.0) throw std::invalid_argument("optimizer: weight decay must be >= 0");
}

namespace {

[[noreturn]] void non_finite(std::size_t step) {
  throw std::domain_error("optimizer: non-finite update at step " + std::to_string(step));
}

void check_sizes(std::span<double> params, const OptimizerState& state, std::span<const double> grad) {
  if (grad.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw std::invalid_argument("optimizer: parameter, gradient and state sizes differ");
  }
}

}  // namespace

void adamw_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
                const OptimizerConfig& config, double lr) {
  check_sizes(params, state, grad);
  const std::size_t t = ++state.step;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
  const double decay = lr * config.weight_decay;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double g = grad[i];
    state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
    state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
    const double m_hat = state.m[i] / c1;
    const double v_hat = state.v[i] / c2;
    const double decayed = params[i] - decay * params[i];
    params[i] = decayed - lr * m_hat / (std::sqrt(v_hat) + config.eps);
    if (!std::isfinite(params[i])) non_finite(t);
  }
}

void sgd_momentum_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
                       const OptimizerConfig& config, double lr) {
  check_sizes(params, state, grad);
  const std::size_t t = ++state.step;
  const double beta = config.beta1;
  const double step_scale = config.momentum_scaled_step ? lr * beta : lr;
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = beta * state.m[i] + grad[i] + config.weight_decay * params[i];
    params[i] = params[i] - step_scale * state.m[i];
    if (!std::isfinite(params[i])) non_finite(t);
  }
}

void optimizer_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
                    const OptimizerConfig& config, double lr) {
  if (config.kind == OptimizerKind::adamw) {
    adamw_step(params, state, grad, config, lr);
  } else {
    sgd_momentum_step(params, state, grad, config, lr);
  }
}

}  // namespace epk
