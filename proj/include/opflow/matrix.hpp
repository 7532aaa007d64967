// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <vector>

namespace opflow {

// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(size_t rows, size_t cols, double fill = 0.0) : r_(rows), c_(cols), d_(rows * cols, fill) {}

  size_t rows() const { return r_; }
  size_t cols() const { return c_; }
  size_t size() const { return d_.size(); }

  double& operator()(size_t i, size_t j) { return d_[i * c_ + j]; }
  double operator()(size_t i, size_t j) const { return d_[i * c_ + j]; }
  double* row(size_t i) { return d_.data() + i * c_; }
  const double* row(size_t i) const { return d_.data() + i * c_; }
  double* data() { return d_.data(); }
  const double* data() const { return d_.data(); }
  std::vector<double>& values() { return d_; }
  const std::vector<double>& values() const { return d_; }

  void fill(double v);
  bool all_finite() const;
  bool operator==(const Matrix& o) const { return r_ == o.r_ && c_ == o.c_ && d_ == o.d_; }

 private:
  size_t r_ = 0, c_ = 0;
  std::vector<double> d_;
};

Matrix matmul(const Matrix& a, const Matrix& b);     // a b
Matrix matmul_tn(const Matrix& a, const Matrix& b);  // a^T b
Matrix matmul_nt(const Matrix& a, const Matrix& b);  // a b^T
Matrix transpose(const Matrix& a);
double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace opflow
