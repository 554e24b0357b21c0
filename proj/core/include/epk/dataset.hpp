#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "epk/model.hpp"

namespace epk {

enum class DataKind { modular_addition, synthetic_binary };

std::string to_string(DataKind kind);
DataKind data_kind_from_string(const std::string& name);

struct DatasetConfig {
  DataKind kind = DataKind::modular_addition;

  // modular_addition: pairs a >= b (a > b unless include_diagonal)
  int modulus = 113;
  double train_fraction = 4000.0 / 6328.0;
  std::size_t test_limit = 0;  // 0 keeps the whole remaining pool
  bool include_diagonal = false;

  // synthetic_binary: Gaussian inputs labelled by a fixed random tanh teacher
  std::size_t input_dim = 8;
  std::size_t train_size = 256;
  std::size_t test_size = 256;

  std::uint64_t seed = 0;

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct Dataset {
  std::vector<Sample> train;
  std::vector<Sample> test;
};

/// Number of (a, b) pairs the enumeration produces.
std::size_t modadd_pair_count(int modulus, bool include_diagonal);

Dataset generate_dataset(const DatasetConfig& config, const ModelSpec& spec);

/// Convenience for the modular-addition task.
Dataset generate_modadd_dataset(const ModelSpec& spec, double train_fraction, std::uint64_t seed,
                                bool include_diagonal = false, std::size_t test_limit = 0);

/// CSV with a header row: `a,b,label,split` for modular addition, or
/// `x0,...,x{n-1},label,split` for vector data.
void write_dataset_csv(const std::filesystem::path& path, const Dataset& data);
Dataset read_dataset_csv(const std::filesystem::path& path, const ModelSpec& spec);

}  // namespace epk
