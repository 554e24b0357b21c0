#pragma once

#include <cstdint>

#include "epk/dataset.hpp"
#include "epk/io.hpp"
#include "epk/model.hpp"
#include "epk/optimizer.hpp"

namespace epk {

/// Everything needed to regenerate a training run from scratch.
struct RunSetup {
  ModelSpec model;
  DatasetConfig data;
  OptimizerConfig optimizer;
  std::uint64_t init_seed = 0;
  std::uint64_t batch_seed = 0;

  friend bool operator==(const RunSetup&, const RunSetup&) = default;
};

Json to_json(const ModelSpec& spec);
Json to_json(const DatasetConfig& data);
Json to_json(const OptimizerConfig& opt);
Json to_json(const RunSetup& setup);

ModelSpec model_spec_from_json(const Json& j);
DatasetConfig dataset_config_from_json(const Json& j);
OptimizerConfig optimizer_config_from_json(const Json& j);
RunSetup run_setup_from_json(const Json& j);

/// Desk-scale modular addition setup (p = 13, dim 32, 4 heads, full-batch AdamW).
RunSetup desk_transformer_setup();
/// Full modular-addition setup (p = 113, dim 64, 4 x 16 heads, MLP 512, AdamW lr 1e-3, wd 4.0).
RunSetup p113_transformer_setup();
/// Small MLP on synthetic binary data trained by SGD with momentum and coupled decay.
RunSetup desk_mlp_setup();

}  // namespace epk
