#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "epk/io.hpp"
#include "epk/model.hpp"
#include "epk/tensor.hpp"
#include "epk/trajectory.hpp"

namespace epk {

/// Trapezoid rules for several T on the union of their nodes t = j / T, so
/// a single sweep serves every rule. weights[r][n] belongs to rule r and node n.
struct Quadrature {
  std::vector<std::size_t> T;
  std::vector<double> nodes;
  std::vector<std::vector<double>> weights;
};

Quadrature trapezoid_rules(std::span<const std::size_t> T);

/// theta_s(t) = theta_s - t (theta_s - theta_{s+1}).
std::vector<double> path_point(std::span<const double> theta_s, std::span<const double> theta_next, double t);

/// dL/d(output) for one sample at `params`, i.e. a_{k,s}.
std::vector<double> loss_output_gradient(const Model& model, std::span<const double> params, const Sample& x);

/// Per-sample loss gradient J(x)^T a(x), scaled by `weight`.
std::vector<double> sample_loss_gradient(const Model& model, std::span<const double> params, const Sample& x,
                                         double weight = 1.0);

/// O x D output Jacobian of one sample.
Matrix sample_jacobian(const Model& model, std::span<const double> params, const Sample& x);

/// Sum of the Jacobian rows (one backward pass with a ones seed).
std::vector<double> sample_summed_gradient(const Model& model, std::span<const double> params, const Sample& x);

/// phi_s^test(x): O x D trapezoid integral of the output Jacobian along the segment theta_s -> theta_{s+1}.
Matrix test_feature_map(const TrajectoryLog& log, std::size_t s, const Sample& x, std::size_t T);

/// Sum over outputs of test_feature_map.
std::vector<double> summed_test_feature_map(const TrajectoryLog& log, std::size_t s, const Sample& x, std::size_t T);

enum class TrainMapMode {
  per_sample,  // per-sample loss gradients accumulated through the optimizer weights
  aggregate,   // only the summed direction, read from the recorded optimizer state
};

/// Everything the kernel needs for the transition s -> s+1:
///   theta_{s+1} - theta_s = -direction - lambda * reg,  direction = sum_k per_sample.row(k).
struct StepTerms {
  std::size_t step = 0;
  double lr = 0.0;
  std::vector<double> direction;
  std::vector<double> reg;
  Matrix per_sample;  // M x D train maps contracted with a_{k,i}; empty in aggregate mode
};

/// Walks a trajectory once, front to back, producing StepTerms per transition.
/// Per-sample mode keeps one optimizer-weighted accumulator per training
/// sample (memory M x D) and applies batch membership at the contributing step.
class TrainFeatureStream {
 public:
  TrainFeatureStream(const TrajectoryLog& log, std::span<const Sample> train, TrainMapMode mode,
                     std::size_t workers = 1);

  std::size_t num_steps() const { return log_.steps(); }
  /// Index of the transition the next advance() produces.
  std::size_t position() const { return next_; }
  /// Computes the terms of transition position(); false once every step is consumed.
  bool advance();
  const StepTerms& terms() const { return terms_; }

 private:
  const TrajectoryLog& log_;
  Model model_;
  std::span<const Sample> train_;
  TrainMapMode mode_;
  std::size_t workers_;
  Matrix accum_;
  std::vector<double> reg_accum_;
  StepTerms terms_;
  std::size_t next_ = 0;
};

/// phi_s^train(x_k) contracted with a: row k of the per-sample terms at step s.
std::vector<double> train_feature_map(const TrajectoryLog& log, std::span<const Sample> train, std::size_t s,
                                      std::size_t k);

struct ReconstructOptions {
  std::vector<std::size_t> T{100};
  TrainMapMode mode = TrainMapMode::aggregate;
  bool keep_step_deltas = false;
  std::size_t workers = 1;
};

struct EpkPrediction {
  std::vector<double> base;           // f_{theta_0}(x)
  std::vector<double> kernel;         // sum_s phi_s . direction_s
  std::vector<double> reg;            // sum_s phi_s . r_s
  std::vector<double> reconstructed;  // base - kernel - lambda * reg
  std::vector<std::vector<double>> step_deltas;  // per step: -(phi . direction) - lambda phi . r
};

struct Reconstruction {
  std::vector<std::size_t> T;
  double weight_decay = 0.0;
  std::vector<std::vector<double>> model_outputs;       // f_{theta_N}(x)
  std::vector<std::vector<EpkPrediction>> predictions;  // [rule][sample]
};

/// EPK machine prediction for every sample in `xs` and every requested T.
/// `train` is only read in per-sample mode.
Reconstruction reconstruct(const TrajectoryLog& log, std::span<const Sample> train, std::span<const Sample> xs,
                           const ReconstructOptions& options = {});

struct FidelityPoint {
  std::size_t T = 0;
  double agreement = 0.0;  // argmax(reconstruction) == argmax(model)
  double mean_kl = 0.0;    // KL(model || softmax(reconstruction))
  double max_kl = 0.0;
  double max_abs_error = 0.0;
};

std::vector<FidelityPoint> fidelity(const Reconstruction& rec);

/// KL(p || q) between the distributions implied by two output rows.
double output_kl(std::span<const double> p_output, std::span<const double> q_output);

Json to_json(const FidelityPoint& point);

}  // namespace epk
