#pragma once

#include "llmprior/linalg.hpp"

#include <Eigen/QR>

#include <cmath>
#include <limits>
#include <vector>

namespace llmprior::detail {

struct NnlsResult {
  Vector x;
  double residual_norm = 0.0;
  bool converged = false;
};

/// Lawson–Hanson active-set solver for min ||A x - b|| subject to x >= 0.
inline NnlsResult nnls(const Matrix& a, const Vector& b, int max_iterations = -1) {
  const Eigen::Index n = a.cols();
  if (max_iterations < 0) max_iterations = static_cast<int>(3 * n + 10);
  NnlsResult res;
  res.x = Vector::Zero(n);
  std::vector<bool> passive(static_cast<std::size_t>(n), false);
  const double tol = 10.0 * std::numeric_limits<double>::epsilon() * a.cwiseAbs().colwise().sum().maxCoeff() *
                     static_cast<double>(std::max(a.rows(), n));

  auto solve_passive = [&](Vector& s) {
    std::vector<Eigen::Index> idx;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (passive[static_cast<std::size_t>(j)]) idx.push_back(j);
    }
    s.setZero(n);
    if (idx.empty()) return;
    Matrix ap(a.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) ap.col(static_cast<Eigen::Index>(k)) = a.col(idx[k]);
    Vector z = ap.colPivHouseholderQr().solve(b);
    for (std::size_t k = 0; k < idx.size(); ++k) s[idx[k]] = z[static_cast<Eigen::Index>(k)];
  };

  int iter = 0;
  Vector w = a.transpose() * (b - a * res.x);
  while (iter < max_iterations) {
    Eigen::Index best = -1;
    double best_w = tol;
    for (Eigen::Index j = 0; j < n; ++j) {
      if (!passive[static_cast<std::size_t>(j)] && w[j] > best_w) {
        best_w = w[j];
        best = j;
      }
    }
    if (best < 0) {
      res.converged = true;
      break;
    }
    passive[static_cast<std::size_t>(best)] = true;

    Vector s;
    while (true) {
      ++iter;
      solve_passive(s);
      bool feasible = true;
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0) feasible = false;
      }
      if (feasible) break;
      double alpha = std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && s[j] <= 0.0) {
          const double denom = res.x[j] - s[j];
          if (denom > 0.0) alpha = std::min(alpha, res.x[j] / denom);
        }
      }
      if (!std::isfinite(alpha)) alpha = 0.0;
      res.x += alpha * (s - res.x);
      for (Eigen::Index j = 0; j < n; ++j) {
        if (passive[static_cast<std::size_t>(j)] && res.x[j] <= tol) {
          passive[static_cast<std::size_t>(j)] = false;
          res.x[j] = 0.0;
        }
      }
      if (iter >= max_iterations) break;
    }
    res.x = s.cwiseMax(0.0);
    w = a.transpose() * (b - a * res.x);
  }
  res.residual_norm = (a * res.x - b).norm();
  return res;
}

}  // namespace llmprior::detail
