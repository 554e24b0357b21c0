#include "epk/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <stdexcept>

namespace epk {

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_string(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_size(shape_) != data_.size()) {
    throw std::invalid_argument("Tensor: shape " + shape_string(shape_) + " holds " +
                                std::to_string(shape_size(shape_)) + " values, got " +
                                std::to_string(data_.size()));
  }
}

Tensor::Tensor(Shape shape, std::initializer_list<double> data)
    : Tensor(std::move(shape), std::vector<double>(data)) {}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

namespace linalg {

void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b, double* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + n * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double* __restrict crow = c + i * m;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      const double* __restrict brow = b + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b, double* c,
             bool accumulate) {
  if (!accumulate) std::fill(c, c + k * m, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = a + i * k;
    const double* __restrict brow = b + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      if (av == 0.0) continue;
      double* __restrict crow = c + p * m;
      for (std::size_t j = 0; j < m; ++j) crow[j] += av * brow[j];
    }
  }
}

void gemm_nt(std::size_t n, std::size_t m, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate) {
  // Transpose B (k x m) into m x k so the inner loop streams contiguously.
  thread_local std::vector<double> scratch;
  scratch.resize(m * k);
  for (std::size_t r = 0; r < k; ++r)
    for (std::size_t j = 0; j < m; ++j) scratch[j * k + r] = b[r * m + j];
  gemm_nn(n, m, k, a, scratch.data(), c, accumulate);
}

double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  const std::size_t n = std::min(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

}  // namespace linalg

}  // namespace epk
