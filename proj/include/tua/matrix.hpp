#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "tua/error.hpp"

namespace tua {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ == 0 ? 0 : init.begin()->size();
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ValidationError("Matrix: ragged initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }

  void fill(double value) { std::fill(data_.begin(), data_.end(), value); }

  Matrix& operator+=(const Matrix& other) {
    require_same_shape(other, "operator+=");
    for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
    return *this;
  }

  Matrix& operator*=(double s) {
    for (double& x : data_) x *= s;
    return *this;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const Matrix&) const = default;

 private:
  void require_same_shape(const Matrix& other, const char* op) const {
    if (rows_ != other.rows_ || cols_ != other.cols_)
      throw ValidationError(std::string("Matrix::") + op + ": shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ValidationError("max_abs_diff: shape mismatch");
  double worst = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k)
    worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]));
  return worst;
}

/// One row of a sparse feature matrix.
struct SparseRowRef {
  std::span<const std::size_t> cols;
  std::span<const double> values;
};

/// Compressed sparse rows. Column indices in each row are strictly increasing.
class SparseRows {
 public:
  SparseRows() = default;
  explicit SparseRows(std::size_t num_cols) : num_cols_(num_cols) {}

  static SparseRows from_dense(const Matrix& dense) {
    SparseRows out(dense.cols());
    std::vector<std::size_t> cols;
    std::vector<double> vals;
    for (std::size_t r = 0; r < dense.rows(); ++r) {
      cols.clear();
      vals.clear();
      for (std::size_t c = 0; c < dense.cols(); ++c) {
        if (dense(r, c) != 0.0) {
          cols.push_back(c);
          vals.push_back(dense(r, c));
        }
      }
      out.append_row(cols, vals);
    }
    return out;
  }

  std::size_t num_rows() const noexcept { return offsets_.size() - 1; }
  std::size_t num_cols() const noexcept { return num_cols_; }
  std::size_t nnz() const noexcept { return cols_.size(); }

  SparseRowRef row(std::size_t r) const noexcept {
    const std::size_t b = offsets_[r];
    const std::size_t e = offsets_[r + 1];
    return {std::span<const std::size_t>(cols_).subspan(b, e - b),
            std::span<const double>(values_).subspan(b, e - b)};
  }

  void append_row(std::span<const std::size_t> cols, std::span<const double> values) {
    if (cols.size() != values.size())
      throw ValidationError("SparseRows::append_row: cols/values length mismatch");
    for (std::size_t k = 0; k < cols.size(); ++k) {
      if (cols[k] >= num_cols_) throw StructuralError("SparseRows::append_row: column out of range");
      if (k > 0 && cols[k] <= cols[k - 1])
        throw ValidationError("SparseRows::append_row: columns must be strictly increasing");
    }
    cols_.insert(cols_.end(), cols.begin(), cols.end());
    values_.insert(values_.end(), values.begin(), values.end());
    offsets_.push_back(cols_.size());
  }

  Matrix to_dense() const {
    Matrix out(num_rows(), num_cols_);
    for (std::size_t r = 0; r < num_rows(); ++r) {
      const auto rr = row(r);
      for (std::size_t k = 0; k < rr.cols.size(); ++k) out(r, rr.cols[k]) = rr.values[k];
    }
    return out;
  }

  bool operator==(const SparseRows&) const = default;

 private:
  std::size_t num_cols_ = 0;
  std::vector<std::size_t> offsets_{0};
  std::vector<std::size_t> cols_;
  std::vector<double> values_;
};

}  // namespace tua
