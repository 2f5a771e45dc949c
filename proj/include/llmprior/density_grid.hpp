#pragma once

#include "llmprior/distributions.hpp"

#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace llmprior {

/// Evenly spaced evaluations of a 1-D density.
struct DensityGrid {
  std::vector<double> points;
  std::vector<double> values;
  double spacing = 0.0;

  std::size_t size() const noexcept { return points.size(); }

  /// Composite trapezoid integral of the values.
  double integral() const {
    double s = 0.0;
    for (std::size_t i = 1; i < values.size(); ++i) s += 0.5 * (values[i - 1] + values[i]);
    return s * spacing;
  }

  std::size_t argmax() const {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
      if (values[i] > values[best]) best = i;
    }
    return best;
  }

  /// Interior points strictly greater than both neighbours.
  std::vector<double> local_maxima() const {
    std::vector<double> out;
    for (std::size_t i = 1; i + 1 < values.size(); ++i) {
      if (values[i] > values[i - 1] && values[i] > values[i + 1]) out.push_back(points[i]);
    }
    return out;
  }
};

/// `lo + i * (hi - lo) / (n - 1)` with the last point pinned to `hi`.
inline std::vector<double> linspace(double lo, double hi, std::size_t n) {
  if (!(lo < hi) || !std::isfinite(lo) || !std::isfinite(hi)) throw std::invalid_argument("invalid grid range");
  if (n < 2) throw std::invalid_argument("grid needs at least two points");
  std::vector<double> x(n);
  const double h = (hi - lo) / static_cast<double>(n - 1);
  for (std::size_t i = 0; i < n; ++i) x[i] = lo + static_cast<double>(i) * h;
  x.back() = hi;
  return x;
}

template <class D>
concept ScalarDensity = requires(const D& d, double x) {
  { d.pdf(x) } -> std::convertible_to<double>;
};

template <class D>
concept ScalarLogDensity = requires(const D& d, double x) {
  { d.log_pdf(x) } -> std::convertible_to<double>;
};

template <class F>
DensityGrid density_grid_fn(F&& pdf, double lo, double hi, std::size_t n) {
  DensityGrid g;
  g.points = linspace(lo, hi, n);
  g.spacing = (hi - lo) / static_cast<double>(n - 1);
  g.values.reserve(n);
  for (double x : g.points) g.values.push_back(pdf(x));
  return g;
}

template <ScalarDensity D>
DensityGrid density_grid(const D& dist, double lo, double hi, std::size_t n) {
  if constexpr (std::same_as<D, Gmm>) {
    if (dist.dimension() != 1) throw std::invalid_argument("density grids are 1-D only");
  }
  return density_grid_fn([&](double x) { return static_cast<double>(dist.pdf(x)); }, lo, hi, n);
}

/// Density grid for a prior variant.
inline DensityGrid density_grid(const Prior& p, double lo, double hi, std::size_t n) {
  return std::visit([&](const auto& d) { return density_grid(d, lo, hi, n); }, p);
}

/// Trapezoid integral of samples on a uniform grid.
inline double trapezoid(std::span<const double> y, double h) {
  double s = 0.0;
  for (std::size_t i = 1; i < y.size(); ++i) s += 0.5 * (y[i - 1] + y[i]);
  return s * h;
}

/// Trapezoid integral of |a - b| for two grids on the same points.
inline double grid_l1(const DensityGrid& a, const DensityGrid& b) {
  if (a.size() != b.size()) throw std::invalid_argument("grids differ in size");
  std::vector<double> d(a.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = std::abs(a.values[i] - b.values[i]);
  return trapezoid(d, a.spacing);
}

/// Effective 1-D support of a mixture: the hull of mean ± `width`·sd over all components.
inline std::pair<double, double> effective_support(const Gmm& g, double width = 10.0) {
  if (g.dimension() != 1) throw std::invalid_argument("effective_support is 1-D only");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& c : g.components()) {
    const double m = c.mean()[0], s = c.chol_factor()(0, 0);
    lo = std::min(lo, m - width * s);
    hi = std::max(hi, m + width * s);
  }
  return {lo, hi};
}

struct LogConcavityReport {
  bool log_concave = false;
  double max_second_difference = 0.0;
  double location = 0.0;  ///< grid point where the largest second difference occurs
};

/// Second finite differences of log-density values; log-concave when every
/// difference is at most `tolerance`.
inline LogConcavityReport log_concavity_probe_log(std::span<const double> points, std::span<const double> log_values,
                                                  double tolerance = 1e-9) {
  if (points.size() != log_values.size()) throw std::invalid_argument("points/values length mismatch");
  if (points.size() < 16) throw std::invalid_argument("grid too coarse for a log-concavity probe (need >= 16 points)");
  for (double v : log_values) {
    if (!std::isfinite(v)) throw std::domain_error("density must be strictly positive and finite on the probe grid");
  }
  LogConcavityReport r;
  r.max_second_difference = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 1; i + 1 < log_values.size(); ++i) {
    const double d2 = log_values[i - 1] - 2.0 * log_values[i] + log_values[i + 1];
    if (d2 > r.max_second_difference) {
      r.max_second_difference = d2;
      r.location = points[i];
    }
  }
  r.log_concave = r.max_second_difference <= tolerance;
  return r;
}

inline LogConcavityReport log_concavity_probe(const DensityGrid& grid, double tolerance = 1e-9) {
  std::vector<double> lv(grid.values.size());
  for (std::size_t i = 0; i < lv.size(); ++i) lv[i] = std::log(grid.values[i]);
  return log_concavity_probe_log(grid.points, lv, tolerance);
}

/// Probe a density on `n` evenly spaced points of [lo, hi], using its log_pdf when it has one.
template <ScalarDensity D>
LogConcavityReport log_concavity_probe(const D& dist, double lo, double hi, std::size_t n, double tolerance = 1e-9) {
  const auto x = linspace(lo, hi, n);
  std::vector<double> lv(n);
  for (std::size_t i = 0; i < n; ++i) {
    if constexpr (ScalarLogDensity<D>) {
      lv[i] = dist.log_pdf(x[i]);
    } else {
      lv[i] = std::log(dist.pdf(x[i]));
    }
  }
  return log_concavity_probe_log(x, lv, tolerance);
}

}  // namespace llmprior
