// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <set>

#include "icvl/error.hpp"
#include "icvl/matrix.hpp"
#include "icvl/matrix_io.hpp"
#include "icvl/random.hpp"

using namespace icvl;

namespace {

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.dims());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.dims(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.dims(); ++k) s += a(i, k) * b(k, j);
      out(i, j) = s;
    }
  return out;
}

// long double reference, no max-subtraction; fine for |x| <= 1000.
std::vector<long double> softmax_ld(const std::vector<double>& row) {
  std::vector<long double> e(row.size());
  long double s = 0;
  for (std::size_t i = 0; i < row.size(); ++i) s += e[i] = std::exp(static_cast<long double>(row[i]));
  for (auto& x : e) x /= s;
  return e;
}

}  // namespace

TEST(Matmul, IdentityAndHandCase) {
  Rng rng(1);
  const Matrix m = random_normal(2, 5, 1.0, rng);
  EXPECT_EQ(matmul(Matrix::identity(2), m), m);
  const Matrix a(2, 2, {1, 2, 3, 4});
  const Matrix b(2, 1, {5, 6});
  EXPECT_EQ(matmul(a, b), Matrix(2, 1, {17, 39}));
}

TEST(Matmul, MatchesTripleLoop) {
  Rng rng(2);
  const Matrix a = random_normal(7, 5, 1.0, rng);
  const Matrix b = random_normal(5, 3, 1.0, rng);
  EXPECT_LE(max_abs_diff(matmul(a, b), naive_matmul(a, b)), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_nt(a, transpose(b)), naive_matmul(a, b)), 1e-12);
  EXPECT_LE(max_abs_diff(matmul_tn(transpose(a), b), naive_matmul(a, b)), 1e-12);
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    (void)matmul(Matrix(2, 3), Matrix(4, 1));
    FAIL();
  } catch (const ShapeError& e) {
    const std::string what = e.what();
    EXPECT_NE(what.find("2x3"), std::string::npos);
    EXPECT_NE(what.find("4x1"), std::string::npos);
  }
}

TEST(Matmul, AssociativityOnChains) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = random_normal(6, 6, 1.0, rng);
    const Matrix b = random_normal(6, 6, 1.0, rng);
    const Matrix c = random_normal(6, 6, 1.0, rng);
    const Matrix left = matmul(matmul(a, b), c);
    const Matrix right = matmul(a, matmul(b, c));
    for (std::size_t i = 0; i < left.size(); ++i) {
      const double scale_ref = std::max(1.0, std::abs(left.data()[i]));
      EXPECT_LE(std::abs(left.data()[i] - right.data()[i]) / scale_ref, 1e-9);
    }
  }
}

TEST(Softmax, UniformShiftAndOverflow) {
  const Matrix u = softmax_rows(Matrix(1, 3, {0, 0, 0}));
  for (double x : u.data()) EXPECT_NEAR(x, 1.0 / 3.0, 1e-15);

  Rng rng(4);
  Matrix x = random_normal(4, 6, 3.0, rng);
  Matrix shifted = x;
  for (std::size_t r = 0; r < x.rows(); ++r)
    for (std::size_t c = 0; c < x.dims(); ++c) shifted(r, c) += 17.5 * static_cast<double>(r + 1);
  EXPECT_LE(max_abs_diff(softmax_rows(x), softmax_rows(shifted)), 1e-12);

  const Matrix big = softmax_rows(Matrix(1, 2, {1000, 0}));
  EXPECT_TRUE(big.all_finite());
  EXPECT_NEAR(big(0, 0), 1.0, 1e-15);
  EXPECT_GE(big(0, 1), 0.0);

  const std::vector<double> row = {3.0, -1.5, 0.25, 7.0};
  const auto ref = softmax_ld(row);
  const Matrix got = softmax_rows(Matrix(1, 4, std::vector<double>(row)));
  for (std::size_t i = 0; i < row.size(); ++i)
    EXPECT_NEAR(got(0, i), static_cast<double>(ref[i]), 1e-15);
}

TEST(Softmax, RowsSumToOneFuzz) {
  Rng rng(5);
  std::uniform_int_distribution<int> width(1, 12);
  std::uniform_real_distribution<double> spread(0.1, 200.0);
  for (int i = 0; i < 10000; ++i) {
    const Matrix row = random_normal(1, static_cast<std::size_t>(width(rng)), spread(rng), rng);
    const Matrix p = softmax_rows(row);
    double s = 0.0;
    for (double v : p.data()) s += v;
    ASSERT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Linear, IdentityBiasOnlyAndOracle) {
  Rng rng(6);
  const Matrix m = random_normal(3, 4, 1.0, rng);
  const std::vector<double> zeros(4, 0.0);
  EXPECT_EQ(linear(m, Matrix::identity(4), zeros), m);

  const std::vector<double> bias = {1.0, -2.0};
  const Matrix only_bias = linear(m, Matrix(4, 2), bias);
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_EQ(only_bias(r, 0), 1.0);
    EXPECT_EQ(only_bias(r, 1), -2.0);
  }

  const Matrix w = random_normal(4, 2, 1.0, rng);
  Matrix expected = naive_matmul(m, w);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 2; ++c) expected(r, c) += bias[c];
  EXPECT_LE(max_abs_diff(linear(m, w, bias), expected), 1e-12);
  EXPECT_THROW((void)linear(m, w, zeros), ShapeError);
  EXPECT_THROW((void)linear(m, Matrix(3, 2), bias), ShapeError);
}

TEST(PositionalEncoding2d, OriginBoundsDistinctness) {
  const Matrix pe = positional_encoding_2d(3, 2, 8);
  for (std::size_t c = 0; c < 8; c += 2) {
    EXPECT_EQ(pe(0, c), 0.0);
    EXPECT_EQ(pe(0, c + 1), 1.0);
  }
  EXPECT_THROW((void)positional_encoding_2d(2, 2, 6), ConfigError);

  for (std::size_t dims : {8u, 12u, 16u}) {
    const Matrix grid = positional_encoding_2d(16, 16, dims);
    ASSERT_EQ(grid.rows(), 256u);
    for (double v : grid.data()) {
      EXPECT_GE(v, -1.0);
      EXPECT_LE(v, 1.0);
    }
    std::set<std::vector<double>> rows;
    for (std::size_t r = 0; r < grid.rows(); ++r) rows.emplace(grid.row(r).begin(), grid.row(r).end());
    EXPECT_EQ(rows.size(), grid.rows()) << "dims " << dims;
  }
  EXPECT_EQ(positional_encoding_2d(4, 3, 8), positional_encoding_2d(4, 3, 8));
}

TEST(PositionalEncoding2d, ChannelLayoutMatchesFormula) {
  const std::size_t dims = 12;
  const std::size_t half = dims / 2;
  const Matrix pe = positional_encoding_2d(5, 3, dims);
  for (std::size_t s = 0; s < 5; ++s)
    for (std::size_t f = 0; f < 3; ++f)
      for (std::size_t i = 0; i < half / 2; ++i) {
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(half));
        const std::size_t r = s * 3 + f;
        EXPECT_NEAR(pe(r, 2 * i), std::sin(s * freq), 1e-15);
        EXPECT_NEAR(pe(r, 2 * i + 1), std::cos(s * freq), 1e-15);
        EXPECT_NEAR(pe(r, half + 2 * i), std::sin(f * freq), 1e-15);
        EXPECT_NEAR(pe(r, half + 2 * i + 1), std::cos(f * freq), 1e-15);
      }
}

TEST(CrossEntropy, AnalyticAndOracle) {
  const std::vector<std::size_t> t = {0, 3, 2};
  EXPECT_NEAR(cross_entropy(Matrix(3, 5), t), std::log(5.0), 1e-12);

  Matrix sharp(1, 4);
  sharp(0, 2) = 30.0;
  EXPECT_LT(cross_entropy(sharp, std::vector<std::size_t>{2}), 1e-12);

  Rng rng(7);
  const Matrix logits = random_normal(5, 4, 2.0, rng);
  const std::vector<std::size_t> targets = {1, 0, 3, 3, 2};
  double ref = 0.0;
  for (std::size_t r = 0; r < 5; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits(r, c));
    ref += -std::log(std::exp(logits(r, targets[r])) / z);
  }
  EXPECT_NEAR(cross_entropy(logits, targets), ref / 5.0, 1e-12);

  Matrix shifted = logits;
  for (std::size_t c = 0; c < 4; ++c) shifted(2, c) += 123.0;
  EXPECT_NEAR(cross_entropy(shifted, targets), cross_entropy(logits, targets), 1e-12);

  EXPECT_THROW((void)cross_entropy(logits, std::vector<std::size_t>{1, 0, 4, 0, 0}), DataError);
}

TEST(MatrixIo, RoundTripAndHeader) {
  Rng rng(8);
  const Matrix m = random_normal(3, 5, 1.0, rng);
  const auto bytes = encode_matrix(m);
  ASSERT_EQ(bytes.size(), 4u + 4 + 1 + 8 + 8 + 15 * 8);
  EXPECT_EQ(std::memcmp(bytes.data(), "ICVL", 4), 0);
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 0);
  EXPECT_EQ(bytes[9], 3);
  EXPECT_EQ(bytes[17], 5);
  const Matrix back = decode_matrix(bytes);
  EXPECT_EQ(std::memcmp(back.data().data(), m.data().data(), m.size() * sizeof(double)), 0);

  const Matrix f32 = decode_matrix(encode_matrix(m, DType::kF32));
  EXPECT_LE(max_abs_diff(f32, m), 1e-6);

  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW((void)decode_matrix(truncated), IoError);
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  EXPECT_THROW((void)decode_matrix(bad_magic), IoError);
}

TEST(MatrixIo, CheckpointRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "icvl_test_ckpt";
  std::filesystem::remove_all(dir);
  Checkpoint ck;
  ck.seed = 99;
  ck.tensors = {{"a.w", Matrix(2, 3, {1, 2, 3, 4, 5, 6})}, {"b", Matrix(1, 1, {-0.5})}};
  ck.meta = {{"kind", "test"}};
  write_checkpoint(dir / "x.ckpt", ck);
  const Checkpoint back = read_checkpoint(dir / "x.ckpt");
  EXPECT_EQ(back.seed, 99u);
  EXPECT_EQ(back.tensors, ck.tensors);
  EXPECT_EQ(back.meta, ck.meta);
  std::filesystem::remove_all(dir);
}
