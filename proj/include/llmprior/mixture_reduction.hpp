#pragma once

#include "llmprior/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace llmprior {

/// A component weight paired with its Gaussian.
struct WeightedGaussian {
  double weight;
  GaussianComponent gaussian;
};

/// Moment-preserving merge: combined weight, weight-convex mean, and convex
/// covariance plus the mean-spread outer product.
inline WeightedGaussian merge_components(const WeightedGaussian& x, const WeightedGaussian& y) {
  const double w = x.weight + y.weight;
  const double px = w > 0.0 ? x.weight / w : 0.5;
  const double py = 1.0 - px;
  const Vector& mx = x.gaussian.mean();
  const Vector& my = y.gaussian.mean();
  const Vector m = px * mx + py * my;
  const Vector dm = mx - my;
  const Matrix cov = px * x.gaussian.covariance() + py * y.gaussian.covariance() + px * py * dm * dm.transpose();
  return {w, GaussianComponent::from_covariance(m, cov)};
}

/// Upper bound on the KL discrepancy introduced by merging two components
/// (Runnalls' bound); zero when either weight is zero.
inline double merge_cost(const WeightedGaussian& x, const WeightedGaussian& y) {
  if (x.weight <= 0.0 || y.weight <= 0.0) return 0.0;
  const auto merged = merge_components(x, y);
  const double c = 0.5 * (merged.weight * merged.gaussian.log_det_covariance() -
                          x.weight * x.gaussian.log_det_covariance() - y.weight * y.gaussian.log_det_covariance());
  return std::max(c, 0.0);
}

/// Greedy pairwise reduction to at most `k_out` components. At each step the pair
/// with the smallest merge cost is merged; ties go to the lowest (i, j) index pair.
/// The merged component takes index i and j is removed.
inline std::vector<WeightedGaussian> reduce_components(std::vector<WeightedGaussian> comps, std::size_t k_out) {
  if (k_out < 1) throw std::invalid_argument("k_out must be at least 1");
  const std::size_t n = comps.size();
  if (n <= k_out) return comps;

  std::vector<std::vector<double>> cost(n, std::vector<double>(n, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) cost[i][j] = merge_cost(comps[i], comps[j]);
  }
  std::vector<bool> alive(n, true);
  std::size_t remaining = n;
  while (remaining > k_out) {
    std::size_t bi = 0, bj = 0;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      if (!alive[i]) continue;
      for (std::size_t j = i + 1; j < n; ++j) {
        if (alive[j] && cost[i][j] < best) {
          best = cost[i][j];
          bi = i;
          bj = j;
        }
      }
    }
    comps[bi] = merge_components(comps[bi], comps[bj]);
    alive[bj] = false;
    --remaining;
    for (std::size_t k = 0; k < n; ++k) {
      if (!alive[k] || k == bi) continue;
      const double c = merge_cost(comps[std::min(k, bi)], comps[std::max(k, bi)]);
      cost[std::min(k, bi)][std::max(k, bi)] = c;
    }
  }
  std::vector<WeightedGaussian> out;
  out.reserve(k_out);
  for (std::size_t i = 0; i < n; ++i) {
    if (alive[i]) out.push_back(std::move(comps[i]));
  }
  return out;
}

inline std::vector<WeightedGaussian> weighted_components(const Gmm& g) {
  std::vector<WeightedGaussian> out;
  out.reserve(g.size());
  for (std::size_t k = 0; k < g.size(); ++k) out.push_back({g.weights()[k], g.component(k)});
  return out;
}

inline Gmm gmm_from_weighted(const std::vector<WeightedGaussian>& comps) {
  std::vector<double> w;
  std::vector<GaussianComponent> g;
  double s = 0.0;
  for (const auto& c : comps) s += c.weight;
  if (!(s > 0.0)) throw std::domain_error("mixture has no mass");
  for (const auto& c : comps) {
    w.push_back(c.weight / s);
    g.push_back(c.gaussian);
  }
  return {std::move(w), std::move(g)};
}

/// Moment-preserving reduction of a mixture to `k_out` components.
inline Gmm reduce_mixture(const Gmm& g, std::size_t k_out) {
  return gmm_from_weighted(reduce_components(weighted_components(g), k_out));
}

}  // namespace llmprior
