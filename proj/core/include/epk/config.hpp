#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "epk/influence.hpp"
#include "epk/io.hpp"
#include "epk/setup.hpp"

namespace epk {

/// Flat JSON run configuration. Every key is optional; missing keys keep the
/// defaults of the preset named by "preset" (desk_transformer, p113_transformer
/// or desk_mlp). Keys are listed in README and by `epk --config-keys`.
struct RunConfig {
  std::string preset = "desk_transformer";
  RunSetup setup = desk_transformer_setup();

  // training
  bool record_trajectory = true;
  bool verify_replay = true;
  std::size_t eval_every = 1;
  double stop_at_test_accuracy = 0.0;

  // epk / influence
  std::vector<std::size_t> T{1, 10, 100};
  std::size_t influence_T = 10;
  std::string epk_mode = "aggregate";
  std::vector<std::string> components;  // empty = whole registry
  std::vector<StepWindow> windows;      // empty = every transition
  bool log_scale = true;

  // prune
  std::vector<double> prune_fractions{0.5};
  std::vector<std::string> prune_strategies{"epk_score", "magnitude", "random"};
  std::vector<std::uint64_t> prune_seeds{0, 1, 2, 3, 4};

  // swap
  std::vector<std::string> swap_components{"embedding", "linear2", "decoder"};
  std::vector<std::size_t> swap_targets;  // checkpoint steps; empty = every 50 steps
  std::size_t swap_source = 0;            // 0 = final step

  // reinit
  std::vector<std::string> reinit_components{"att_encoders", "att_decoders"};
  std::size_t reinit_source = 0;  // 0 = final step
  std::vector<std::uint64_t> reinit_seeds{1, 2, 3};
  std::size_t reinit_steps = 200;

  // lasso
  std::string lasso_component = "linear2";
  std::size_t lasso_f_min = 2;
  std::size_t lasso_f_max = 0;  // 0 = 2 (p - 1)
  std::vector<double> lasso_fractions{0.5, 0.2, 0.1, 0.05, 0.02, 0.01, 0.005};

  std::size_t workers = 1;
  std::string out;

  /// Throws ValidationError naming the key, listing valid component names where relevant.
  void validate() const;
};

RunConfig config_from_json(const Json& j);
Json to_json(const RunConfig& c);

/// Applies a `--key value` override. The value is parsed as JSON when possible
/// (numbers, booleans, arrays) and otherwise taken as a string.
void apply_override(Json& config, const std::string& key, const std::string& value);

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::pair<std::string, std::string>>& overrides);

/// Keys accepted by config_from_json with a one-line description each.
std::vector<std::pair<std::string, std::string>> config_keys();

}  // namespace epk
