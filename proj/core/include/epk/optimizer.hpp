#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace epk {

enum class OptimizerKind { adamw, sgd_momentum };
std::string to_string(OptimizerKind kind);
OptimizerKind optimizer_kind_from_string(const std::string& name);

/// Learning-rate schedule alpha_s for update steps s = 1..total.
struct Schedule {
  enum class Kind { constant, linear_warmup_peak_decay };
  Kind kind = Kind::constant;
  double peak = 1e-3;
  std::size_t peak_step = 1;
  std::size_t total_steps = 1;

  static Schedule constant(double value) { return {Kind::constant, value, 1, 1}; }
  static Schedule warmup_decay(double peak, std::size_t peak_step, std::size_t total) {
    return {Kind::linear_warmup_peak_decay, peak, peak_step, total};
  }

  /// Linear ramp to `peak` at `peak_step`, then linear decay that stays > 0 through `total_steps`.
  double at(std::size_t step) const;
  void validate() const;
  friend bool operator==(const Schedule&, const Schedule&) = default;
};

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::adamw;
  Schedule schedule = Schedule::constant(1e-3);
  double beta1 = 0.9;   // AdamW first moment, or SGD momentum
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
  /// SGD only: step with theta -= alpha * beta * b (true) or theta -= alpha * b.
  bool momentum_scaled_step = true;
  std::size_t steps = 100;
  std::size_t batch_size = 0;  // 0 means full batch

  void validate() const;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

struct OptimizerState {
  std::vector<double> m;  // AdamW first moment / SGD momentum buffer b
  std::vector<double> v;  // AdamW second moment (zero for SGD)
  std::size_t step = 0;

  OptimizerState() = default;
  explicit OptimizerState(std::size_t dim) : m(dim, 0.0), v(dim, 0.0) {}
};

/// Decoupled weight decay:
///   m_s = b1 m + (1-b1) g,  v_s = b2 v + (1-b2) g^2
///   theta_s = theta - a lambda theta - a * (m_s/(1-b1^s)) / (sqrt(v_s/(1-b2^s)) + eps)
/// Throws std::domain_error naming the step when the update is not finite.
void adamw_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
                const OptimizerConfig& config, double lr);

/// Coupled weight decay: b_s = beta b + g + lambda theta; theta_s = theta - a [beta] b_s (b_0 = 0).
void sgd_momentum_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
                       const OptimizerConfig& config, double lr);

void optimizer_step(std::span<double> params, OptimizerState& state, std::span<const double> grad,
                    const OptimizerConfig& config, double lr);

}  // namespace epk
