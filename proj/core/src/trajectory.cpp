#include "epk/trajectory.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

#include "epk/errors.hpp"

namespace epk {

namespace {

constexpr int kFormatVersion = 1;
constexpr const char* kFormatName = "epk-trajectory";

std::size_t bitset_bytes(std::size_t n) { return (n + 7) / 8; }

std::size_t record_bytes(std::size_t dim, std::size_t num_train) {
  return (3 * dim + 1) * sizeof(double) + bitset_bytes(num_train);
}

void put_f64(std::string& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  char buf[8];
  std::memcpy(buf, &bits, 8);
  out.append(buf, 8);
}

double get_f64(const char* p) {
  std::uint64_t bits;
  std::memcpy(&bits, p, 8);
  if constexpr (std::endian::native == std::endian::big) bits = __builtin_bswap64(bits);
  return std::bit_cast<double>(bits);
}

}  // namespace

std::size_t StepRecord::batch_count() const {
  return static_cast<std::size_t>(std::count(batch.begin(), batch.end(), std::uint8_t{1}));
}

const StepRecord& TrajectoryLog::at(std::size_t step) const {
  if (step >= records.size()) {
    throw InputError("trajectory: missing checkpoint for step " + std::to_string(step) + " (log holds steps 0.." +
                     std::to_string(steps()) + ")");
  }
  return records[step];
}

void TrajectoryLog::validate() const {
  if (records.empty()) throw ValidationError("trajectory: no records");
  const std::size_t full = setup.optimizer.batch_size == 0 ? num_train : std::min(setup.optimizer.batch_size, num_train);
  for (std::size_t s = 0; s < records.size(); ++s) {
    const auto& r = records[s];
    if (r.params.size() != dim || r.m.size() != dim || r.v.size() != dim || r.batch.size() != num_train) {
      throw ValidationError("trajectory: record " + std::to_string(s) + " has inconsistent sizes");
    }
    if (s > 0 && r.batch_count() != full) {
      throw ValidationError("trajectory: step " + std::to_string(s) + " batch holds " +
                            std::to_string(r.batch_count()) + " samples, expected " + std::to_string(full));
    }
  }
}

Json trajectory_header(const TrajectoryLog& log) {
  return Json{{"format", kFormatName},
              {"version", kFormatVersion},
              {"endianness", "little"},
              {"dim", log.dim},
              {"steps", log.steps()},
              {"num_train", log.num_train},
              {"record_bytes", record_bytes(log.dim, log.num_train)},
              {"seeds", {{"init", log.setup.init_seed}, {"batch", log.setup.batch_seed}, {"data", log.setup.data.seed}}},
              {"setup", to_json(log.setup)}};
}

void save_trajectory(const std::filesystem::path& path, const TrajectoryLog& log) {
  log.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
  out << trajectory_header(log).dump() << '\n';
  std::string buf;
  buf.reserve(record_bytes(log.dim, log.num_train));
  for (const auto& r : log.records) {
    buf.clear();
    for (double x : r.params) put_f64(buf, x);
    for (double x : r.m) put_f64(buf, x);
    for (double x : r.v) put_f64(buf, x);
    put_f64(buf, r.lr);
    std::string bits(bitset_bytes(log.num_train), '\0');
    for (std::size_t k = 0; k < log.num_train; ++k)
      if (r.batch[k]) bits[k / 8] = static_cast<char>(bits[k / 8] | (1u << (k % 8)));
    buf += bits;
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
  if (!out) throw InputError("failed writing trajectory '" + path.string() + "'");
}

TrajectoryLog load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("trajectory file '" + path.string() + "' not found");
  std::string line;
  if (!std::getline(in, line)) throw InputError("trajectory file '" + path.string() + "' is empty");
  Json header;
  try {
    header = Json::parse(line);
  } catch (const Json::exception& e) {
    throw InputError("trajectory '" + path.string() + "': unreadable header (" + e.what() + ")");
  }
  auto expect = [&](const char* key, const Json& want) {
    const Json found = header.value(key, Json());
    if (found != want) {
      throw ValidationError("trajectory '" + path.string() + "': " + key + " mismatch, expected " + want.dump() +
                            ", found " + found.dump());
    }
  };
  expect("format", kFormatName);
  expect("version", kFormatVersion);
  expect("endianness", "little");

  TrajectoryLog log;
  log.setup = run_setup_from_json(header.at("setup"));
  log.dim = header.at("dim").get<std::size_t>();
  log.num_train = header.at("num_train").get<std::size_t>();
  const auto steps = header.at("steps").get<std::size_t>();
  const std::size_t rb = record_bytes(log.dim, log.num_train);
  expect("record_bytes", rb);

  const auto payload_start = static_cast<std::uintmax_t>(line.size() + 1);
  const auto expected = payload_start + static_cast<std::uintmax_t>(steps + 1) * rb;
  const auto actual = std::filesystem::file_size(path);
  if (actual < expected) {
    throw InputError("trajectory '" + path.string() + "' is truncated: " + std::to_string(actual) + " bytes, expected " +
                     std::to_string(expected));
  }
  if (actual > expected) {
    throw ValidationError("trajectory '" + path.string() + "' has " + std::to_string(actual - expected) +
                          " trailing bytes");
  }

  std::vector<char> buf(rb);
  log.records.resize(steps + 1);
  for (auto& r : log.records) {
    if (!in.read(buf.data(), static_cast<std::streamsize>(rb))) throw InputError("trajectory: short read");
    const char* p = buf.data();
    auto take = [&](std::vector<double>& dst) {
      dst.resize(log.dim);
      for (auto& x : dst) {
        x = get_f64(p);
        p += 8;
      }
    };
    take(r.params);
    take(r.m);
    take(r.v);
    r.lr = get_f64(p);
    p += 8;
    r.batch.assign(log.num_train, 0);
    for (std::size_t k = 0; k < log.num_train; ++k)
      r.batch[k] = static_cast<std::uint8_t>((static_cast<unsigned char>(p[k / 8]) >> (k % 8)) & 1u);
  }
  log.validate();
  return log;
}

}  // namespace epk
