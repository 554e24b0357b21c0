#include "epk/dataset.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "epk/io.hpp"
#include "epk/rng.hpp"

namespace epk {

std::string to_string(DataKind kind) {
  return kind == DataKind::modular_addition ? "modular_addition" : "synthetic_binary";
}

DataKind data_kind_from_string(const std::string& name) {
  if (name == "modular_addition") return DataKind::modular_addition;
  if (name == "synthetic_binary") return DataKind::synthetic_binary;
  throw std::invalid_argument("unknown dataset kind '" + name + "' (expected modular_addition or synthetic_binary)");
}

std::size_t modadd_pair_count(int modulus, bool include_diagonal) {
  const auto p = static_cast<std::size_t>(modulus);
  return include_diagonal ? p * (p + 1) / 2 : p * (p - 1) / 2;
}

namespace {

Dataset modular_addition(const DatasetConfig& cfg, const ModelSpec& spec) {
  if (!(cfg.train_fraction > 0.0 && cfg.train_fraction < 1.0)) {
    throw std::invalid_argument("dataset: train fraction must lie in (0, 1)");
  }
  if (spec.kind != ModelKind::modadd_transformer || spec.modulus != cfg.modulus) {
    throw std::invalid_argument("dataset: modular addition needs a transformer spec with the same modulus");
  }
  std::vector<Sample> all;
  all.reserve(modadd_pair_count(cfg.modulus, cfg.include_diagonal));
  for (int a = 0; a < cfg.modulus; ++a)
    for (int b = 0; b <= a; ++b)
      if (a > b || cfg.include_diagonal) all.push_back(make_modadd_sample(spec, a, b));

  SplitMix64 rng(cfg.seed);
  rng.shuffle(all);
  const auto n_train = static_cast<std::size_t>(std::llround(cfg.train_fraction * static_cast<double>(all.size())));
  if (n_train == 0 || n_train >= all.size()) throw std::invalid_argument("dataset: split leaves an empty side");

  Dataset out;
  out.train.assign(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(n_train));
  auto test_end = all.end();
  if (cfg.test_limit > 0 && cfg.test_limit < all.size() - n_train) {
    test_end = all.begin() + static_cast<std::ptrdiff_t>(n_train + cfg.test_limit);
  }
  out.test.assign(all.begin() + static_cast<std::ptrdiff_t>(n_train), test_end);
  return out;
}

Dataset synthetic_binary(const DatasetConfig& cfg, const ModelSpec& spec) {
  if (spec.kind == ModelKind::modadd_transformer || spec.input_dim != cfg.input_dim || spec.output_dim != 2) {
    throw std::invalid_argument("dataset: synthetic binary data needs a 2-class vector model with input dim " +
                                std::to_string(cfg.input_dim));
  }
  constexpr std::size_t kTeacherHidden = 8;
  SplitMix64 teacher_rng(derive_seed(cfg.seed, 0));
  std::vector<double> w1(cfg.input_dim * kTeacherHidden), w2(kTeacherHidden);
  for (double& w : w1) w = teacher_rng.normal() / std::sqrt(static_cast<double>(cfg.input_dim));
  for (double& w : w2) w = teacher_rng.normal();

  SplitMix64 rng(derive_seed(cfg.seed, 1));
  auto draw = [&](std::size_t count) {
    std::vector<Sample> out(count);
    for (auto& s : out) {
      s.features.resize(cfg.input_dim);
      for (double& f : s.features) f = rng.normal();
      double score = 0.0;
      for (std::size_t h = 0; h < kTeacherHidden; ++h) {
        double pre = 0.0;
        for (std::size_t i = 0; i < cfg.input_dim; ++i) pre += s.features[i] * w1[i * kTeacherHidden + h];
        score += w2[h] * std::tanh(2.0 * pre);
      }
      s.label = score > 0.0 ? 1 : 0;
    }
    return out;
  };
  Dataset data;
  data.train = draw(cfg.train_size);
  data.test = draw(cfg.test_size);
  return data;
}

}  // namespace

Dataset generate_dataset(const DatasetConfig& config, const ModelSpec& spec) {
  return config.kind == DataKind::modular_addition ? modular_addition(config, spec) : synthetic_binary(config, spec);
}

Dataset generate_modadd_dataset(const ModelSpec& spec, double train_fraction, std::uint64_t seed,
                                bool include_diagonal, std::size_t test_limit) {
  DatasetConfig cfg;
  cfg.kind = DataKind::modular_addition;
  cfg.modulus = spec.modulus;
  cfg.train_fraction = train_fraction;
  cfg.include_diagonal = include_diagonal;
  cfg.test_limit = test_limit;
  cfg.seed = seed;
  return generate_dataset(cfg, spec);
}

void write_dataset_csv(const std::filesystem::path& path, const Dataset& data) {
  CsvWriter csv(path);
  const bool tokens = !data.train.empty() ? !data.train.front().tokens.empty()
                                          : (!data.test.empty() && !data.test.front().tokens.empty());
  std::vector<std::string> header;
  if (tokens) {
    header = {"a", "b"};
  } else {
    const std::size_t n = !data.train.empty() ? data.train.front().features.size() : data.test.front().features.size();
    for (std::size_t i = 0; i < n; ++i) header.push_back("x" + std::to_string(i));
  }
  header.push_back("label");
  header.push_back("split");
  csv.header(header);
  auto emit = [&](const std::vector<Sample>& samples, const char* split) {
    for (const auto& s : samples) {
      std::vector<std::string> row;
      if (tokens) {
        row = {std::to_string(s.a), std::to_string(s.b)};
      } else {
        for (double f : s.features) row.push_back(format_double(f));
      }
      row.push_back(std::to_string(s.label));
      row.push_back(split);
      csv.row(row);
    }
  };
  emit(data.train, "train");
  emit(data.test, "test");
}

Dataset read_dataset_csv(const std::filesystem::path& path, const ModelSpec& spec) {
  const auto table = read_csv(path);
  if (table.empty()) throw std::runtime_error("dataset csv '" + path.string() + "' is empty");
  const auto& header = table.front();
  if (header.size() < 3 || header.back() != "split" || header[header.size() - 2] != "label") {
    throw std::runtime_error("dataset csv '" + path.string() + "': expected trailing label,split columns");
  }
  const bool tokens = header[0] == "a";
  Dataset out;
  for (std::size_t r = 1; r < table.size(); ++r) {
    const auto& row = table[r];
    if (row.size() != header.size()) throw std::runtime_error("dataset csv: ragged row " + std::to_string(r));
    Sample s;
    if (tokens) {
      s = make_modadd_sample(spec, std::stoi(row[0]), std::stoi(row[1]));
    } else {
      for (std::size_t i = 0; i + 2 < row.size(); ++i) s.features.push_back(std::stod(row[i]));
      s.label = std::stoi(row[row.size() - 2]);
    }
    (row.back() == "train" ? out.train : out.test).push_back(std::move(s));
  }
  return out;
}

}  // namespace epk
