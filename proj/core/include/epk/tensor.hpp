#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace epk {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);
  Tensor(Shape shape, std::initializer_list<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  bool all_finite() const;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Row-major dense matrix used for Jacobians and per-sample vector stacks.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  std::span<double> row(std::size_t r) { return {values.data() + r * cols, cols}; }
  std::span<const double> row(std::size_t r) const { return {values.data() + r * cols, cols}; }
  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
};

namespace linalg {

// C[n x m] (+)= A[n x k] * B[k x m], all row-major and contiguous.
void gemm_nn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b, double* c,
             bool accumulate);

// C[k x m] (+)= A[n x k]^T * B[n x m].
void gemm_tn(std::size_t n, std::size_t k, std::size_t m, const double* a, const double* b, double* c,
             bool accumulate);

// C[n x k] (+)= A[n x m] * B[k x m]^T.
void gemm_nt(std::size_t n, std::size_t m, std::size_t k, const double* a, const double* b, double* c,
             bool accumulate);

double dot(std::span<const double> a, std::span<const double> b);

}  // namespace linalg

}  // namespace epk
