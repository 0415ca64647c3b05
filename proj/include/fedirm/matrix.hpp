#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <vector>

#include "fedirm/common.hpp"

namespace fedirm {

/// Dense row-major matrix of doubles. Deliberately dumb: the numerics live in
/// free functions that know what they are computing.
class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static Matrix from_rows(std::initializer_list<std::initializer_list<double>> rows) {
    Matrix m(rows.size(), rows.size() ? rows.begin()->size() : 0);
    std::size_t r = 0;
    for (const auto& row : rows) {
      if (row.size() != m.cols_) throw InvalidInput("from_rows: ragged rows");
      std::size_t c = 0;
      for (double v : row) m.at(r, c++) = v;
      ++r;
    }
    return m;
  }

  double& at(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_;
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Matrix& other) const {
    return rows_ == other.rows_ && cols_ == other.cols_ && data_ == other.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Index of the largest entry in a row; ties resolve to the lowest index.
inline std::size_t argmax_row(const Matrix& m, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < m.cols(); ++c)
    if (m.at(r, c) > m.at(r, best)) best = c;
  return best;
}

}  // namespace fedirm
