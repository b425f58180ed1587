#include "editlab/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace editlab::linalg {

std::optional<Cholesky> Cholesky::factor(const MatrixD& a, double relative_tolerance) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw std::invalid_argument("Cholesky: matrix not square");
  double max_diag = 0.0;
  for (std::size_t i = 0; i < n; ++i) max_diag = std::max(max_diag, std::abs(a(i, i)));
  const double floor = relative_tolerance * max_diag;

  Cholesky c;
  c.lower_ = MatrixD(n, n);
  MatrixD& L = c.lower_;
  for (std::size_t j = 0; j < n; ++j) {
    double d = a(j, j);
    for (std::size_t k = 0; k < j; ++k) d -= L(j, k) * L(j, k);
    if (!std::isfinite(d) || d <= floor || d <= 0.0) return std::nullopt;
    const double ljj = std::sqrt(d);
    L(j, j) = ljj;
    for (std::size_t i = j + 1; i < n; ++i) {
      double s = a(i, j);
      for (std::size_t k = 0; k < j; ++k) s -= L(i, k) * L(j, k);
      L(i, j) = s / ljj;
    }
  }
  return c;
}

Vec Cholesky::solve(std::span<const double> b) const {
  const std::size_t n = size();
  if (b.size() != n) throw std::invalid_argument("Cholesky::solve: size mismatch");
  const MatrixD& L = lower_;
  Vec y(b.begin(), b.end());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < i; ++k) y[i] -= L(i, k) * y[k];
    y[i] /= L(i, i);
  }
  for (std::size_t i = n; i-- > 0;) {
    for (std::size_t k = i + 1; k < n; ++k) y[i] -= L(k, i) * y[k];
    y[i] /= L(i, i);
  }
  return y;
}

MatrixD Cholesky::solve(const MatrixD& b) const {
  if (b.rows() != size()) throw std::invalid_argument("Cholesky::solve: size mismatch");
  MatrixD x(b.rows(), b.cols());
  Vec col(b.rows());
  for (std::size_t j = 0; j < b.cols(); ++j) {
    for (std::size_t i = 0; i < b.rows(); ++i) col[i] = b(i, j);
    const Vec s = solve(col);
    for (std::size_t i = 0; i < b.rows(); ++i) x(i, j) = s[i];
  }
  return x;
}

double Cholesky::condition_estimate() const {
  double lo = INFINITY, hi = 0.0;
  for (std::size_t i = 0; i < size(); ++i) {
    lo = std::min(lo, lower_(i, i));
    hi = std::max(hi, lower_(i, i));
  }
  return (hi / lo) * (hi / lo);
}

MatrixD transpose(const MatrixD& a) {
  MatrixD t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

MatrixD multiply(const MatrixD& a, const MatrixD& b) {
  if (a.cols() != b.rows()) throw std::invalid_argument("multiply: inner dimension mismatch");
  MatrixD c(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.cols(); ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Vec multiply(const MatrixD& a, std::span<const double> x) {
  if (a.cols() != x.size()) throw std::invalid_argument("multiply: vector size mismatch");
  Vec y(a.rows(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i) y[i] = dot(a.row(i), x);
  return y;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

double max_abs_diff(const MatrixD& a, const MatrixD& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("max_abs_diff: shape mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

}  // namespace editlab::linalg
