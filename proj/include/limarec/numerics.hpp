#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <random>
#include <span>
#include <vector>

namespace limarec {

using Vector = std::vector<double>;

// Row-major dense matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t n);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }

  void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

Matrix matmul(const Matrix& a, const Matrix& b);
Matrix transpose(const Matrix& a);

Vector softmax(std::span<const double> v);

// Normalizes v to zero mean / unit variance, then applies gain and bias.
Vector layer_norm(std::span<const double> v, std::span<const double> gain,
                  std::span<const double> bias, double eps = 1e-8);

double dot(std::span<const double> a, std::span<const double> b);
// y += alpha * x
void axpy(double alpha, std::span<const double> x, std::span<double> y);
// out = W x   (W is rows x cols, x has cols entries)
void matvec(const Matrix& w, std::span<const double> x, std::span<double> out);
// out = W^T x (x has rows entries)
void matvec_t(const Matrix& w, std::span<const double> x, std::span<double> out);
// W += alpha * a b^T
void add_outer(double alpha, std::span<const double> a, std::span<const double> b, Matrix& w);

double max_abs_diff(std::span<const double> a, std::span<const double> b);
double max_abs_diff(const Matrix& a, const Matrix& b);
bool all_finite(std::span<const double> v);

// Deterministic random stream.
//
// Bits come from std::mt19937_64, whose state transition is fixed by the C++
// standard. Conversions are done here rather than with std:: distributions,
// which are implementation-defined:
//   uniform(): top 53 bits of one draw scaled by 2^-53, in [0, 1)
//   below(n):  rejection sampling against 2^64 mod n, then modulo
//   normal():  Box-Muller on two uniforms; the second variate is cached
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t next_u64() { return engine_(); }
  double uniform();
  std::uint64_t below(std::uint64_t n);
  double normal();

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// SplitMix64 finalizer over (seed, stream); derives independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, SeededRng& rng);

}  // namespace limarec
