#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "epk/setup.hpp"

namespace epk {

/// State after `s` updates. For s >= 1, `lr` and `batch` describe update s
/// (gradient taken at theta_{s-1}); record 0 carries lr = 0 and an empty batch.
struct StepRecord {
  std::vector<double> params;
  std::vector<double> m;
  std::vector<double> v;
  double lr = 0.0;
  std::vector<std::uint8_t> batch;  // one 0/1 entry per training sample

  std::size_t batch_count() const;
};

struct TrajectoryLog {
  RunSetup setup;
  std::size_t dim = 0;
  std::size_t num_train = 0;
  std::vector<StepRecord> records;

  std::size_t steps() const { return records.empty() ? 0 : records.size() - 1; }
  /// Throws InputError naming the step when it is not in the log.
  const StepRecord& at(std::size_t step) const;
  /// Contiguous records, consistent sizes, batch cardinality per config.
  void validate() const;
};

/// Binary layout: one line of JSON header terminated by '\n', then steps+1
/// records of [theta | m | v] as little-endian float64, alpha as float64 and
/// ceil(num_train / 8) bytes of batch bits (bit k of byte k/8, LSB first).
void save_trajectory(const std::filesystem::path& path, const TrajectoryLog& log);

/// Header is validated before the payload is read. Version or endianness
/// mismatches raise ValidationError; missing or truncated files raise InputError.
TrajectoryLog load_trajectory(const std::filesystem::path& path);

Json trajectory_header(const TrajectoryLog& log);

}  // namespace epk
