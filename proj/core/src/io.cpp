#include "epk/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace epk {

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

CsvWriter::CsvWriter(const std::filesystem::path& path) : out_(path, std::ios::binary) {
  if (!out_) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
}

void CsvWriter::row(const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ << ',';
    const auto& f = fields[i];
    if (f.find_first_of(",\"\r\n") == std::string::npos) {
      out_ << f;
    } else {
      out_ << '"';
      for (char c : f) {
        if (c == '"') out_ << '"';
        out_ << c;
      }
      out_ << '"';
    }
  }
  out_ << "\r\n";
}

void CsvWriter::numeric_row(const std::vector<double>& values) {
  std::vector<std::string> fields;
  fields.reserve(values.size());
  for (double v : values) fields.push_back(format_double(v));
  row(fields);
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          field += '"';
          in.get(c);
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      row.push_back(std::move(field));
      field.clear();
    } else if (c == '\n' || c == '\r') {
      if (c == '\r' && in.peek() == '\n') in.get(c);
      row.push_back(std::move(field));
      field.clear();
      rows.push_back(std::move(row));
      row.clear();
      any = false;
    } else {
      field += c;
    }
  }
  if (any) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_json(const std::filesystem::path& path, const Json& value) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << value.dump(2) << '\n';
}

Json read_json(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path.string() + "'");
  return Json::parse(in);
}

void write_matrix_csv(const std::filesystem::path& path, const Matrix& m, const std::vector<std::string>& row_labels,
                      const std::vector<std::string>& col_labels) {
  CsvWriter csv(path);
  if (!col_labels.empty()) {
    std::vector<std::string> header;
    if (!row_labels.empty()) header.push_back("");
    header.insert(header.end(), col_labels.begin(), col_labels.end());
    csv.header(header);
  }
  for (std::size_t r = 0; r < m.rows; ++r) {
    std::vector<std::string> fields;
    if (!row_labels.empty()) fields.push_back(row_labels[r]);
    for (double v : m.row(r)) fields.push_back(std::isnan(v) ? "" : format_double(v));
    csv.row(fields);
  }
}

namespace {

std::string color(double t) {
  // t in [-1, 1]: blue (-1) -> white (0) -> red (+1)
  t = std::clamp(t, -1.0, 1.0);
  int r = 255, g = 255, b = 255;
  if (t >= 0) {
    g = b = static_cast<int>(std::lround(255.0 * (1.0 - t)));
  } else {
    r = g = static_cast<int>(std::lround(255.0 * (1.0 + t)));
  }
  char buf[16];
  std::snprintf(buf, sizeof buf, "#%02x%02x%02x", r, g, b);
  return buf;
}

}  // namespace

void write_heatmap_svg(const std::filesystem::path& path, const Matrix& m, const HeatmapOptions& options,
                       const std::vector<bool>& missing) {
  std::vector<double> mapped(m.values.size(), 0.0);
  double scale = 0.0;
  if (options.log_scale) {
    double floor = INFINITY;
    for (double v : m.values)
      if (v != 0.0 && std::isfinite(v)) floor = std::min(floor, std::abs(v));
    if (!std::isfinite(floor)) floor = 1.0;
    for (std::size_t i = 0; i < mapped.size(); ++i) {
      const double v = m.values[i];
      mapped[i] = (v == 0.0 || !std::isfinite(v)) ? 0.0 : std::copysign(std::log10(std::abs(v) / floor) + 1.0, v);
    }
  } else {
    for (std::size_t i = 0; i < mapped.size(); ++i) mapped[i] = std::isfinite(m.values[i]) ? m.values[i] : 0.0;
  }
  for (double v : mapped) scale = std::max(scale, std::abs(v));
  if (scale == 0.0) scale = 1.0;

  const std::size_t cell = options.cell, top = options.title.empty() ? 0 : 20;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << m.cols * cell << "\" height=\"" << m.rows * cell + top
      << "\">\n";
  if (!options.title.empty()) out << "<text x=\"2\" y=\"14\" font-size=\"12\">" << options.title << "</text>\n";
  for (std::size_t r = 0; r < m.rows; ++r)
    for (std::size_t c = 0; c < m.cols; ++c) {
      const std::size_t i = r * m.cols + c;
      const bool grey = (i < missing.size() && missing[i]) || std::isnan(m.values[i]);
      out << "<rect x=\"" << c * cell << "\" y=\"" << r * cell + top << "\" width=\"" << cell << "\" height=\""
          << cell << "\" fill=\"" << (grey ? std::string("#999999") : color(mapped[i] / scale)) << "\"/>\n";
    }
  out << "</svg>\n";
}

}  // namespace epk
