#pragma once

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace llmprior {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline constexpr double kLog2Pi = 1.8378770664093454835606594728112;

/// log(sum(exp(x))) over the finite entries of `x`; -inf for an empty or all -inf input.
inline double log_sum_exp(const std::vector<double>& x) {
  double m = -std::numeric_limits<double>::infinity();
  for (double v : x) m = std::max(m, v);
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
/// Throws std::domain_error when `m` is not positive definite.
inline Matrix cholesky_lower(const Matrix& m) {
  Eigen::LLT<Matrix> llt(m);
  if (llt.info() != Eigen::Success) throw std::domain_error("matrix is not positive definite");
  Matrix l = llt.matrixL();
  for (Eigen::Index i = 0; i < l.rows(); ++i) {
    if (!(l(i, i) > 0.0) || !std::isfinite(l(i, i)))
      throw std::domain_error("matrix is not positive definite");
  }
  return l;
}

/// log|L Lᵀ| for a lower-triangular factor with positive diagonal.
inline double log_det_from_chol(const Matrix& l) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < l.rows(); ++i) s += std::log(l(i, i));
  return 2.0 * s;
}

/// log N(x | mean, L Lᵀ).
inline double normal_log_pdf(const Vector& x, const Vector& mean, const Matrix& chol) {
  const auto d = static_cast<double>(mean.size());
  Vector r = chol.triangularView<Eigen::Lower>().solve(x - mean);
  return -0.5 * (d * kLog2Pi + log_det_from_chol(chol) + r.squaredNorm());
}

/// Same as normal_log_pdf but with a full covariance, used where no factor is at hand.
inline double normal_log_pdf_cov(const Vector& x, const Vector& mean, const Matrix& cov) {
  return normal_log_pdf(x, mean, cholesky_lower(cov));
}

inline Matrix symmetrize(const Matrix& m) { return 0.5 * (m + m.transpose()); }

}  // namespace llmprior
