#pragma once

#include <algorithm>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "ensdistill/error.hpp"

namespace ensdistill {

/// Dense row-major matrix of doubles.
///
/// Products below accumulate every output element in a fixed sequential order
/// over the inner dimension, so a row's result never depends on how many other
/// rows share the call. Batched and per-sample evaluation are bitwise equal.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw ShapeError("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static Matrix from_rows(const std::vector<std::vector<double>>& rows) {
    Matrix m(rows.size(), rows.empty() ? 0 : rows.front().size());
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != m.cols_) throw ShapeError("ragged matrix rows");
      std::copy(rows[r].begin(), rows[r].end(), m.row(r).begin());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) noexcept { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const noexcept { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) noexcept { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const noexcept { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }

  /// Copies the listed rows, in order, into a new matrix.
  Matrix gather_rows(std::span<const std::size_t> indices) const {
    Matrix out(indices.size(), cols_);
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= rows_) throw ShapeError("row index out of range");
      auto src = row(indices[i]);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

/// out = a * b + bias (bias broadcast over rows; may be empty).
inline Matrix affine(const Matrix& a, const Matrix& b, std::span<const double> bias) {
  if (a.cols() != b.rows()) {
    throw ShapeError("affine: cannot multiply " + shape_string(a) + " by " + shape_string(b));
  }
  if (!bias.empty() && bias.size() != b.cols()) throw ShapeError("affine: bias length mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto out_row = out.row(i);
    if (!bias.empty()) std::copy(bias.begin(), bias.end(), out_row.begin());
    auto a_row = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a_row[k];
      const double* b_row = b.row(k).data();
      double* o = out_row.data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * b_row[j];
    }
  }
  return out;
}

/// out += a^T * b.
inline void add_transpose_product(const Matrix& a, const Matrix& b, Matrix& out) {
  if (a.rows() != b.rows() || out.rows() != a.cols() || out.cols() != b.cols()) {
    throw ShapeError("add_transpose_product: shape mismatch");
  }
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto a_row = a.row(i);
    const double* b_row = b.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a_row[k];
      double* o = out.row(k).data();
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * b_row[j];
    }
  }
}

/// out = a * b^T.
inline Matrix product_transpose(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw ShapeError("product_transpose: shape mismatch");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* a_row = a.row(i).data();
    for (std::size_t k = 0; k < b.rows(); ++k) {
      const double* b_row = b.row(k).data();
      double acc = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) acc += a_row[j] * b_row[j];
      out(i, k) = acc;
    }
  }
  return out;
}

}  // namespace ensdistill
