#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "epk/epk.hpp"

namespace epk {

/// Half-open range of transitions [begin, end); transition s moves theta_s to theta_{s+1}.
struct StepWindow {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end > begin ? end - begin : 0; }
  bool contains(std::size_t s) const { return s >= begin && s < end; }
  friend bool operator==(const StepWindow&, const StepWindow&) = default;
};

struct InfluenceRequest {
  std::vector<StepWindow> windows;
  std::vector<std::string> components;  // empty selects the whole registry
  std::size_t T = 10;
  /// Accumulate p_Theta(x) over each window (D values per test sample).
  bool parameter_vectors = false;
  /// Keep kernel scores resolved per output dimension (debugging; O times the memory).
  bool per_output = false;
  /// Record the step-importance series for every step inside a window.
  bool step_series = false;
  /// Keep the test x train tables; off when only p_Theta(x) or the series are needed.
  bool pairwise = true;
  std::size_t workers = 1;
};

/// Step-importance series for one step across the selected components.
struct StepImportance {
  std::size_t step = 0;
  std::vector<double> kernel_abs;  // sum_x |Psi_s(Theta, x, X_train)|
  std::vector<double> reg_abs;     // sum_x |Psi_s^reg(Theta, x)|
  std::vector<double> difference;  // D(Theta) = sum_theta (Psi_s(theta) - Psi_s^reg(theta)) in absolute sums
};

/// Accumulated influence scores over test sample x, train sample k, window w and component c.
/// Kernel scores are summed over output dimensions; reg scores exclude the lambda factor.
class InfluenceTable {
 public:
  InfluenceTable() = default;
  InfluenceTable(std::vector<StepWindow> windows, std::vector<ComponentRange> components, std::size_t num_test,
                 std::size_t num_train, std::size_t num_outputs, bool per_output);

  const std::vector<StepWindow>& windows() const { return windows_; }
  const std::vector<ComponentRange>& components() const { return components_; }
  std::size_t num_test() const { return num_test_; }
  std::size_t num_train() const { return num_train_; }
  std::size_t component_index(const std::string& name) const;

  double kernel(std::size_t w, std::size_t c, std::size_t x, std::size_t k) const {
    return kernel_[index(w, c, x) * num_train_ + k];
  }
  double reg(std::size_t w, std::size_t c, std::size_t x) const { return reg_[index(w, c, x)]; }
  /// Whole-model score accumulated over all D parameters directly.
  double total_kernel(std::size_t w, std::size_t x, std::size_t k) const {
    return total_kernel_[(w * num_test_ + x) * num_train_ + k];
  }
  double total_reg(std::size_t w, std::size_t x) const { return total_reg_[w * num_test_ + x]; }
  /// Per-output kernel score (requires per_output).
  double kernel_output(std::size_t w, std::size_t c, std::size_t x, std::size_t k, std::size_t o) const;

  /// Psi_S(Theta, x, X_train) for a window and component.
  double kernel_over_train(std::size_t w, std::size_t c, std::size_t x) const;

  /// p_Theta(x) over [begin, end) of the parameter vector (requires parameter_vectors).
  std::span<const double> parameter_vector(std::size_t w, std::size_t x) const;
  std::span<const double> reg_parameter_vector(std::size_t w, std::size_t x) const;
  bool has_parameter_vectors() const { return !pvec_.empty(); }

  const std::vector<StepImportance>& series() const { return series_; }

 private:
  friend InfluenceTable compute_influence(const TrajectoryLog&, std::span<const Sample>, std::span<const Sample>,
                                          const InfluenceRequest&);
  std::size_t index(std::size_t w, std::size_t c, std::size_t x) const {
    return (w * components_.size() + c) * num_test_ + x;
  }

  std::vector<StepWindow> windows_;
  std::vector<ComponentRange> components_;
  std::size_t num_test_ = 0, num_train_ = 0, num_outputs_ = 0, dim_ = 0;
  std::vector<double> kernel_, reg_, total_kernel_, total_reg_, per_output_;
  std::vector<double> pvec_, pvec_reg_;  // [w][x][D]
  std::vector<StepImportance> series_;
};

/// One sweep of the trajectory producing every requested accumulation.
InfluenceTable compute_influence(const TrajectoryLog& log, std::span<const Sample> train, std::span<const Sample> xs,
                                 const InfluenceRequest& request);

/// psi_s(theta_i, x, x_k) restricted to a component: phi_s^test(x)_i * phi_s^train(x_k)_i, summed over outputs.
std::vector<double> psi(const TrajectoryLog& log, std::span<const Sample> train, std::size_t s,
                        const std::string& component, const Sample& x, std::size_t k, std::size_t T);

/// Per-output psi (O rows) for debugging.
Matrix psi_per_output(const TrajectoryLog& log, std::span<const Sample> train, std::size_t s,
                      const std::string& component, const Sample& x, std::size_t k, std::size_t T);

/// Psi_s^reg(Theta, x) summed over the component and output dimensions.
double reg_influence(const TrajectoryLog& log, std::size_t s, const std::string& component, const Sample& x,
                     std::size_t T);

/// Cosine similarity over a test subset; pairs with a zero vector are flagged missing.
struct SimilarityMatrix {
  Matrix values;
  std::vector<bool> missing;  // row-major, same layout as values
  bool is_missing(std::size_t i, std::size_t j) const { return missing[i * values.cols + j]; }
};

SimilarityMatrix similarity(const std::vector<std::vector<double>>& vectors);
/// S_Theta for one window, restricted to the component's index range.
SimilarityMatrix similarity(const InfluenceTable& table, std::size_t window, const ComponentRange& component);

/// Test x train EPK slice for one component and window, rows and columns ordered by (sum, label).
struct KernelSlice {
  Matrix values;
  std::vector<std::size_t> test_order;   // indices into the test set, in row order
  std::vector<std::size_t> train_order;  // indices into the train set, in column order
  std::vector<std::string> row_labels;   // "a+b=sum (label)"
  std::vector<std::string> col_labels;
};

KernelSlice kernel_slice(const InfluenceTable& table, std::size_t window, std::size_t component,
                         std::span<const Sample> test, std::span<const Sample> train);

/// Mean |value| over pairs with equal label versus all other pairs.
struct ResidueContrast {
  double matching = 0.0;
  double other = 0.0;
  std::size_t matching_pairs = 0;
  std::size_t other_pairs = 0;
  double ratio() const { return other > 0.0 ? matching / other : 0.0; }
};

ResidueContrast residue_contrast(const KernelSlice& slice, std::span<const Sample> test,
                                 std::span<const Sample> train);

/// Signed mean similarity for equal versus unequal labels (diagonal excluded, missing skipped).
ResidueContrast residue_contrast(const SimilarityMatrix& sim, std::span<const Sample> samples);

std::string sample_label(const Sample& s);

}  // namespace epk
