#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace loadcast {

/// Dense row-major float64 matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix scalar(double v) { return Matrix(1, 1, v); }
  static Matrix row(std::span<const double> values) {
    Matrix m(1, values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m.data_[i] = values[i];
    return m;
  }
  static Matrix column(std::span<const double> values) {
    Matrix m(values.size(), 1);
    for (std::size_t i = 0; i < values.size(); ++i) m.data_[i] = values[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  /// Resizes keeping capacity; contents are set to `fill`.
  void reset(std::size_t rows, std::size_t cols, double fill = 0.0) {
    rows_ = rows;
    cols_ = cols;
    data_.assign(rows * cols, fill);
  }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }
  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

}  // namespace loadcast
