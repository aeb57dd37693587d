#include "limarec/numerics.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace limarec {

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows) {
  rows_ = rows.size();
  cols_ = rows_ == 0 ? 0 : rows.begin()->size();
  data_.reserve(rows_ * cols_);
  for (const auto& r : rows) {
    if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
    data_.insert(data_.end(), r.begin(), r.end());
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: dimension mismatch " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " * " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  }
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto dst = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto src = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) dst[j] += aik * src[j];
    }
  }
  return out;
}

Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

Vector softmax(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("softmax: empty vector");
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  Vector out(v.size());
  double total = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

Vector layer_norm(std::span<const double> v, std::span<const double> gain,
                  std::span<const double> bias, double eps) {
  if (v.size() != gain.size() || v.size() != bias.size())
    throw std::invalid_argument("layer_norm: dimension mismatch");
  if (v.empty()) throw std::invalid_argument("layer_norm: empty vector");
  if (!(eps > 0.0)) throw std::invalid_argument("layer_norm: eps must be positive");
  const double n = static_cast<double>(v.size());
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + eps);
  Vector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - mean) * rstd * gain[i] + bias[i];
  return out;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

void matvec(const Matrix& w, std::span<const double> x, std::span<double> out) {
  for (std::size_t i = 0; i < w.rows(); ++i) out[i] = dot(w.row(i), x);
}

void matvec_t(const Matrix& w, std::span<const double> x, std::span<double> out) {
  std::fill(out.begin(), out.end(), 0.0);
  for (std::size_t i = 0; i < w.rows(); ++i) axpy(x[i], w.row(i), out);
}

void add_outer(double alpha, std::span<const double> a, std::span<const double> b, Matrix& w) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double s = alpha * a[i];
    if (s != 0.0) axpy(s, b, w.row(i));
  }
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("max_abs_diff: size mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double max_abs_diff(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("max_abs_diff: shape mismatch");
  return max_abs_diff(a.values(), b.values());
}

bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

double SeededRng::uniform() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

std::uint64_t SeededRng::below(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("SeededRng::below: empty range");
  const std::uint64_t threshold = (0 - n) % n;
  for (;;) {
    const std::uint64_t r = engine_();
    if (r >= threshold) return r % n;
  }
}

double SeededRng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Matrix gaussian_matrix(std::size_t rows, std::size_t cols, SeededRng& rng) {
  if (rows == 0 || cols == 0) throw std::invalid_argument("gaussian_matrix: empty shape");
  Matrix m(rows, cols);
  for (double& x : m.values()) x = rng.normal();
  return m;
}

}  // namespace limarec
