#pragma once

#include <optional>
#include <span>

#include "editlab/tensor.hpp"

namespace editlab::linalg {

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
class Cholesky {
 public:
  /// nullopt when a pivot is non-positive, non-finite, or below
  /// `relative_tolerance` times the largest diagonal entry.
  static std::optional<Cholesky> factor(const MatrixD& a, double relative_tolerance = 1e-12);

  Vec solve(std::span<const double> b) const;
  /// Solves A X = B column by column.
  MatrixD solve(const MatrixD& b) const;

  std::size_t size() const { return lower_.rows(); }
  /// (max pivot / min pivot)^2: a cheap lower bound on the 2-norm condition.
  double condition_estimate() const;

 private:
  MatrixD lower_;
};

MatrixD transpose(const MatrixD& a);
MatrixD multiply(const MatrixD& a, const MatrixD& b);
Vec multiply(const MatrixD& a, std::span<const double> x);
double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);
double max_abs_diff(const MatrixD& a, const MatrixD& b);

}  // namespace editlab::linalg
