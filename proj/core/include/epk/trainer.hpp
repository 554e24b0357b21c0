#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epk/dataset.hpp"
#include "epk/model.hpp"
#include "epk/trajectory.hpp"

namespace epk {

struct CurvePoint {
  std::size_t step = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double test_loss = 0.0;
  double test_accuracy = 0.0;
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

struct BatchGradient {
  double loss = 0.0;          // mean over the batch
  std::size_t correct = 0;
  std::vector<double> grad;   // mean loss gradient
};

struct TrainOptions {
  bool record_trajectory = true;
  std::size_t eval_every = 1;
  /// Stop once test accuracy reaches this value (disabled when <= 0).
  double stop_at_test_accuracy = 0.0;
  /// Start from these parameters instead of model.init(init_seed).
  std::optional<std::vector<double>> initial_params;
  std::function<void(const CurvePoint&)> on_eval;
};

struct TrainResult {
  TrajectoryLog log;  // only theta_0 when recording is off
  std::vector<CurvePoint> curves;
  std::vector<double> final_params;
  std::size_t steps_run = 0;
  std::optional<std::size_t> diverged_at;
  std::string divergence_message;
};

BatchGradient batch_gradient(const Model& model, std::span<const double> params, std::span<const Sample> batch);

Evaluation evaluate(const Model& model, std::span<const double> params, std::span<const Sample> samples);

/// Mask over `num_train` samples for update `step`; full batch when batch_size is 0.
std::vector<std::uint8_t> sample_batch(std::size_t num_train, std::size_t batch_size, std::uint64_t seed,
                                       std::size_t step);

std::vector<Sample> gather(std::span<const Sample> samples, const std::vector<std::uint8_t>& mask);

/// Deterministic training loop; divergence stops the run and keeps the partial log.
TrainResult train(const RunSetup& setup, const Dataset& data, const TrainOptions& options = {});

struct ReplayReport {
  bool ok = false;
  std::optional<std::size_t> first_divergent_step;
  double max_abs_diff = 0.0;
  std::string message;
};

/// Re-executes every update from theta_0 with the recorded batches and
/// learning rates, requiring bit-identical params and optimizer state.
ReplayReport replay_check(const TrajectoryLog& log, const Dataset& data);
ReplayReport replay_check(const TrajectoryLog& log);

void write_curves_csv(const std::filesystem::path& path, const std::vector<CurvePoint>& curves);
std::vector<CurvePoint> read_curves_csv(const std::filesystem::path& path);

}  // namespace epk
