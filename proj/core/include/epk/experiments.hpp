#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epk/influence.hpp"
#include "epk/io.hpp"
#include "epk/model.hpp"
#include "epk/trainer.hpp"

namespace epk {

enum class PruneStrategy { epk_score, magnitude, random };
std::string to_string(PruneStrategy s);
PruneStrategy prune_strategy_from_string(const std::string& name);

struct PruneResult {
  double fraction = 1.0;
  PruneStrategy strategy = PruneStrategy::epk_score;
  std::vector<std::uint8_t> keep;  // 1 = kept, over all D parameters
  std::size_t prunable = 0;
  std::size_t kept = 0;            // kept among the prunable set
  std::vector<double> params;
  double accuracy = 0.0;
  double original_accuracy = 0.0;
  double kl = 0.0;                 // mean KL(original || pruned) on the evaluation set
};

/// Per-parameter EPK importance: sum over `xs` of |p_Theta(x)_i| over the whole trajectory.
std::vector<double> epk_parameter_scores(const TrajectoryLog& log, std::span<const Sample> train,
                                         std::span<const Sample> xs, std::size_t T = 10, std::size_t workers = 1);

/// Keeps the top ceil(c D') prunable parameters by |score| (ties to the lower
/// index) and zeroes the rest. Output components are never pruned.
std::vector<std::uint8_t> prune_mask(const Model& model, std::span<const double> scores, double fraction);

/// Scores are required for epk_score and ignored otherwise; random uses `seed`.
PruneResult prune(const Model& model, std::span<const double> params, PruneStrategy strategy,
                  std::span<const double> scores, double fraction, std::span<const Sample> eval,
                  std::uint64_t seed = 0);

Json to_json(const PruneResult& r);

struct SwapResult {
  std::size_t source_step = 0;
  std::size_t target_step = 0;
  std::vector<std::string> components;
  double pre_accuracy = 0.0;   // checkpoint as is
  double post_accuracy = 0.0;  // checkpoint with the swapped components
  double source_accuracy = 0.0;
  Matrix confusion;            // true label x predicted label over the p result classes
  std::size_t off_class_predictions = 0;  // argmax outside the result classes
  std::vector<double> params;
};

/// Copies `components` of `source` into `target`; every other index stays bit-identical.
std::vector<double> swap_components(const Model& model, std::span<const double> source, std::span<const double> target,
                                    const std::vector<std::string>& components);

SwapResult layer_swap(const Model& model, std::span<const double> source, std::size_t source_step,
                      std::span<const double> target, std::size_t target_step,
                      const std::vector<std::string>& components, std::span<const Sample> eval);

/// Rows are true labels, columns predicted labels, over `classes` outputs.
Matrix confusion_matrix(const Model& model, std::span<const double> params, std::span<const Sample> eval,
                        std::size_t classes, std::size_t* off_class = nullptr);

Json to_json(const SwapResult& r);

struct ReinitRun {
  std::vector<std::string> components;
  std::size_t source_step = 0;
  std::vector<std::uint64_t> seeds;
  std::vector<std::vector<CurvePoint>> curves;  // per seed
  std::vector<std::size_t> steps;               // evaluation steps shared by every seed
  std::vector<double> train_mean, train_std, test_mean, test_std;
  std::vector<std::vector<double>> initial_params;  // per seed
};

/// Fresh initialization per seed with the donor components copied in, then ordinary training.
std::vector<double> reinit_params(const Model& model, std::span<const double> donor,
                                  const std::vector<std::string>& components, std::uint64_t seed);

ReinitRun pipeline_reinit_train(const RunSetup& setup, const Dataset& data, std::span<const double> donor,
                                std::size_t source_step, const std::vector<std::string>& components,
                                const std::vector<std::uint64_t>& seeds, std::size_t eval_every = 1);

Json to_json(const ReinitRun& r);
void write_reinit_csv(const std::filesystem::path& path, const ReinitRun& r);

struct SeriesPeak {
  std::string component;
  std::size_t step = 0;
  double value = 0.0;
};

struct GrokkingReport {
  std::optional<std::size_t> memorization_step;  // first train accuracy 1.0
  std::optional<std::size_t> grok_step;          // first test accuracy >= 0.99
  std::optional<std::size_t> gap;
  std::optional<std::size_t> test95_step;
  std::vector<SeriesPeak> peaks;                 // largest kernel_abs per component
};

GrokkingReport grokking_report(const std::vector<CurvePoint>& curves, const std::vector<StepImportance>& series = {},
                               const std::vector<ComponentRange>& components = {});

Json to_json(const GrokkingReport& r);

}  // namespace epk
