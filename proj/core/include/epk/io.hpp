#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "epk/tensor.hpp"

namespace epk {

using Json = nlohmann::json;

/// Shortest form that still carries 17 significant digits ("%.17g").
std::string format_double(double v);

/// RFC-4180 style writer: fields containing commas, quotes or newlines are quoted.
class CsvWriter {
 public:
  explicit CsvWriter(const std::filesystem::path& path);
  void header(const std::vector<std::string>& names) { row(names); }
  void row(const std::vector<std::string>& fields);
  void numeric_row(const std::vector<double>& values);

 private:
  std::ofstream out_;
};

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path);

void write_json(const std::filesystem::path& path, const Json& value);
Json read_json(const std::filesystem::path& path);

/// Writes a numeric matrix as CSV, optionally with row and column labels.
void write_matrix_csv(const std::filesystem::path& path, const Matrix& m,
                      const std::vector<std::string>& row_labels = {},
                      const std::vector<std::string>& col_labels = {});

struct HeatmapOptions {
  std::string title;
  bool log_scale = false;  // signed log10 magnitude, as in the kernel plots
  std::size_t cell = 6;    // pixels per cell
};

/// Minimal SVG heatmap with a linear blue-white-red map centred at zero.
/// `missing` marks cells drawn grey.
void write_heatmap_svg(const std::filesystem::path& path, const Matrix& m, const HeatmapOptions& options,
                       const std::vector<bool>& missing = {});

}  // namespace epk
