// SPDX-License-Identifier: Apache-2.0

#include "icvl/matrix.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "icvl/error.hpp"

namespace icvl {

namespace {

std::string shape_pair(const char* op, const Matrix& a, const Matrix& b) {
  std::ostringstream os;
  os << op << ": shape mismatch " << a.shape_string() << " vs " << b.shape_string();
  return os.str();
}

}  // namespace

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kShape: return "shape";
    case ErrorKind::kConfig: return "config";
    case ErrorKind::kData: return "data";
    case ErrorKind::kNumeric: return "numeric";
    case ErrorKind::kTransport: return "transport";
    case ErrorKind::kProtocol: return "protocol";
    case ErrorKind::kParse: return "parse";
    case ErrorKind::kIo: return "io";
  }
  return "unknown";
}

Matrix::Matrix(std::size_t rows, std::size_t dims, double fill)
    : rows_(rows), dims_(dims), data_(rows * dims, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t dims, std::vector<double> data)
    : rows_(rows), dims_(dims), data_(std::move(data)) {
  if (data_.size() != rows_ * dims_) {
    std::ostringstream os;
    os << "matrix data length " << data_.size() << " != " << rows_ << "x" << dims_;
    throw ShapeError(os.str());
  }
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  dims_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * dims_);
  for (const auto& r : rows) {
    if (r.size() != dims_) throw ShapeError("ragged matrix literal");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::row_vector(std::span<const double> values) {
  return Matrix(1, values.size(), std::vector<double>(values.begin(), values.end()));
}

bool Matrix::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

std::string Matrix::shape_string() const {
  std::ostringstream os;
  os << "[" << rows_ << "x" << dims_ << "]";
  return os.str();
}

void ensure_finite(const Matrix& m, const char* where) {
  if (!m.all_finite()) throw NumericError(std::string(where) + ": non-finite value");
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.dims() != b.rows()) throw ShapeError(shape_pair("matmul", a, b));
  Matrix out(a.rows(), b.dims());
  const std::size_t n = b.dims();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.dims(); ++k) {
      const double aik = a(i, k);
      const double* br = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.dims() != b.dims()) throw ShapeError(shape_pair("matmul_nt", a, b));
  Matrix out(a.rows(), b.rows());
  const std::size_t d = a.dims();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* ar = a.row(i).data();
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* br = b.row(j).data();
      double acc[4] = {0.0, 0.0, 0.0, 0.0};
      std::size_t k = 0;
      for (; k + 4 <= d; k += 4) {
        acc[0] += ar[k] * br[k];
        acc[1] += ar[k + 1] * br[k + 1];
        acc[2] += ar[k + 2] * br[k + 2];
        acc[3] += ar[k + 3] * br[k + 3];
      }
      for (; k < d; ++k) acc[0] += ar[k] * br[k];
      out(i, j) = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    }
  }
  return out;
}

Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) throw ShapeError(shape_pair("matmul_tn", a, b));
  Matrix out(a.dims(), b.dims());
  const std::size_t n = b.dims();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* br = b.row(k).data();
    for (std::size_t i = 0; i < a.dims(); ++i) {
      const double aki = a(k, i);
      if (aki == 0.0) continue;
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * br[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& m) {
  Matrix out(m.dims(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.dims(); ++j) out(j, i) = m(i, j);
  return out;
}

Matrix add(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.dims() != b.dims()) throw ShapeError(shape_pair("add", a, b));
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] += bd[i];
  return out;
}

Matrix subtract(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.dims() != b.dims()) throw ShapeError(shape_pair("subtract", a, b));
  Matrix out = a;
  auto o = out.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] -= bd[i];
  return out;
}

Matrix scale(const Matrix& m, double factor) {
  Matrix out = m;
  for (double& v : out.data()) v *= factor;
  return out;
}

Matrix softmax_rows(const Matrix& m) {
  if (m.empty()) throw ShapeError("softmax_rows: empty matrix");
  Matrix out(m.rows(), m.dims());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto in = m.row(r);
    auto o = out.row(r);
    const double mx = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      o[c] = std::exp(in[c] - mx);
      sum += o[c];
    }
    for (double& v : o) v /= sum;
  }
  return out;
}

Matrix linear(const Matrix& m, const Matrix& weight, std::span<const double> bias) {
  if (m.dims() != weight.rows()) throw ShapeError(shape_pair("linear", m, weight));
  if (bias.size() != weight.dims()) {
    std::ostringstream os;
    os << "linear: bias length " << bias.size() << " != weight dims " << weight.dims();
    throw ShapeError(os.str());
  }
  Matrix out = matmul(m, weight);
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += bias[c];
  }
  ensure_finite(out, "linear");
  return out;
}

namespace {

// Writes interleaved sin/cos pairs for `pos` into `channels`.
void sinusoid(double pos, std::span<double> channels) {
  const double width = static_cast<double>(channels.size());
  for (std::size_t i = 0; 2 * i < channels.size(); ++i) {
    const double freq = std::pow(10000.0, -(2.0 * static_cast<double>(i)) / width);
    channels[2 * i] = std::sin(pos * freq);
    if (2 * i + 1 < channels.size()) channels[2 * i + 1] = std::cos(pos * freq);
  }
}

}  // namespace

Matrix positional_encoding_2d(std::size_t n_segments, std::size_t frames_per_segment,
                              std::size_t dims) {
  if (dims == 0 || dims % 4 != 0) {
    throw ConfigError("positional_encoding_2d: dims must be a positive multiple of 4, got " +
                      std::to_string(dims));
  }
  const std::size_t half = dims / 2;
  Matrix pe(n_segments * frames_per_segment, dims);
  for (std::size_t s = 0; s < n_segments; ++s) {
    for (std::size_t f = 0; f < frames_per_segment; ++f) {
      auto row = pe.row(s * frames_per_segment + f);
      sinusoid(static_cast<double>(s), row.subspan(0, half));
      sinusoid(static_cast<double>(f), row.subspan(half, half));
    }
  }
  return pe;
}

Matrix positional_encoding_1d(std::size_t positions, std::size_t dims) {
  Matrix pe(positions, dims);
  for (std::size_t p = 0; p < positions; ++p) sinusoid(static_cast<double>(p), pe.row(p));
  return pe;
}

double cross_entropy(const Matrix& logits, std::span<const std::size_t> targets) {
  if (targets.size() != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " rows");
  }
  if (logits.rows() == 0) throw ShapeError("cross_entropy: no rows");
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (targets[r] >= logits.dims()) {
      throw DataError("cross_entropy: target " + std::to_string(targets[r]) +
                      " out of range for " + std::to_string(logits.dims()) + " classes");
    }
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += -(row[targets[r]] - mx - std::log(sum));
  }
  return total / static_cast<double>(logits.rows());
}

Matrix concat_rows(std::span<const Matrix> parts) {
  std::size_t rows = 0;
  std::size_t dims = 0;
  bool have_dims = false;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    if (have_dims && p.dims() != dims) {
      throw ShapeError("concat_rows: dims " + std::to_string(p.dims()) + " vs " +
                       std::to_string(dims));
    }
    dims = p.dims();
    have_dims = true;
    rows += p.rows();
  }
  Matrix out(rows, dims);
  auto o = out.data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    if (p.rows() == 0) continue;
    std::copy(p.data().begin(), p.data().end(), o.begin() + static_cast<std::ptrdiff_t>(off));
    off += p.size();
  }
  return out;
}

std::vector<double> column_means(const Matrix& m) {
  if (m.rows() == 0) throw DataError("mean_pool: empty matrix");
  std::vector<double> out(m.dims(), 0.0);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < out.size(); ++c) out[c] += row[c];
  }
  const double n = static_cast<double>(m.rows());
  for (double& v : out) v /= n;
  return out;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.dims() != b.dims()) throw ShapeError(shape_pair("max_abs_diff", a, b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace icvl
