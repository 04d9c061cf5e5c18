// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace icvl {

/// Dense row-major matrix of doubles. Every activation, weight and score
/// table in the toolkit is one of these; a vector is a 1×n matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t dims, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t dims, std::vector<double> data);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);
  static Matrix row_vector(std::span<const double> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t dims() const noexcept { return dims_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * dims_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * dims_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * dims_, dims_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * dims_, dims_}; }

  std::span<double> data() noexcept { return data_; }
  std::span<const double> data() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }

  bool all_finite() const noexcept;
  std::string shape_string() const;

  friend bool operator==(const Matrix& a, const Matrix& b) {
    return a.rows_ == b.rows_ && a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 private:
  std::size_t rows_ = 0;
  std::size_t dims_ = 0;
  std::vector<double> data_;
};

/// Throws NumericError naming `where` if any entry is NaN or infinite.
void ensure_finite(const Matrix& m, const char* where);

/// Row-major product. Each output entry accumulates over the shared index
/// in ascending order, so results are bit-reproducible.
Matrix matmul(const Matrix& a, const Matrix& b);

/// a × bᵀ without materialising the transpose.
Matrix matmul_nt(const Matrix& a, const Matrix& b);

/// aᵀ × b without materialising the transpose.
Matrix matmul_tn(const Matrix& a, const Matrix& b);

Matrix transpose(const Matrix& m);
Matrix add(const Matrix& a, const Matrix& b);
Matrix subtract(const Matrix& a, const Matrix& b);
Matrix scale(const Matrix& m, double factor);

/// Row-wise softmax with per-row max subtraction.
Matrix softmax_rows(const Matrix& m);

/// m × weight + bias broadcast over rows.
Matrix linear(const Matrix& m, const Matrix& weight, std::span<const double> bias);

/// Sinusoidal encoding over a (segment, frame) grid. The first dims/2
/// channels encode the segment index and the last dims/2 channels the frame
/// index within its segment, each as interleaved sin/cos pairs with
/// frequency 1 / 10000^(2i / (dims/2)). Row order is segment-major.
Matrix positional_encoding_2d(std::size_t n_segments, std::size_t frames_per_segment,
                              std::size_t dims);

/// Standard 1D sinusoidal table (rows = positions).
Matrix positional_encoding_1d(std::size_t positions, std::size_t dims);

/// Mean over rows of −log softmax(logits[r])[targets[r]].
double cross_entropy(const Matrix& logits, std::span<const std::size_t> targets);

/// Row-wise concatenation; all inputs must share `dims`.
Matrix concat_rows(std::span<const Matrix> parts);

/// Column means; throws DataError on an empty matrix.
std::vector<double> column_means(const Matrix& m);

double max_abs_diff(const Matrix& a, const Matrix& b);

}  // namespace icvl
