#pragma once

// Linear and logarithmic opinion pools over Beta, Gaussian and Gaussian-mixture priors.
//
// The logarithmic pool p(z) ∝ Π p_i(z)^{w_i} is closed-form for Betas and Gaussians.
// For mixtures the product of powered mixtures is approximated in three stages:
//   1. each p_i^{w_i} is replaced by Σ_k α̃_ik N(μ_ik, Σ_ik / w_i), with α̃_ik ∝ α_ik^{w_i}
//      times the mass of N(μ_ik, Σ_ik)^{w_i};
//   2. the powered mixtures are multiplied out pairwise in closed form, after which the
//      cross-term weights are refitted by nonnegative least squares so that the mixture
//      matches the pooled log-density at collocation points around every component;
//   3. the expansion is reduced to k_out components by greedy moment-preserving merges.
// Stage 1 is exact when components are well separated; the refit in stage 2 removes the
// mass the separated approximation puts between overlapping components.

#include "llmprior/density_grid.hpp"
#include "llmprior/detail/nnls.hpp"
#include "llmprior/distributions.hpp"
#include "llmprior/mixture_reduction.hpp"
#include "llmprior/serialization.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace llmprior {

/// Pooling weights: nonnegative, summing to one.
class WeightVector {
 public:
  /// Accepts weights whose sum is within 1e-6 of one and rescales them exactly.
  explicit WeightVector(std::vector<double> w) : w_(std::move(w)) {
    if (w_.empty()) throw std::invalid_argument("weight vector must be non-empty");
    for (double v : w_) {
      if (!(v >= 0.0) || !std::isfinite(v)) throw std::invalid_argument("pooling weights must be finite and nonnegative");
    }
    // Summed in sorted order so a permuted weight list rescales to the same bits.
    std::vector<double> sorted = w_;
    std::sort(sorted.begin(), sorted.end());
    double s = 0.0;
    for (double v : sorted) s += v;
    if (std::abs(s - 1.0) > 1e-6) throw std::invalid_argument("pooling weights must sum to 1");
    for (double& v : w_) v /= s;
  }

  static WeightVector uniform(std::size_t n) {
    if (n == 0) throw std::invalid_argument("weight vector must be non-empty");
    return WeightVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
  }

  std::size_t size() const noexcept { return w_.size(); }
  double operator[](std::size_t i) const { return w_.at(i); }
  const std::vector<double>& values() const noexcept { return w_; }

 private:
  std::vector<double> w_;
};

/// Raised when an exact mixture product would exceed the expansion cap.
class ExpansionCapExceeded : public std::length_error {
 public:
  ExpansionCapExceeded(std::size_t terms, std::size_t cap)
      : std::length_error("exact product needs " + std::to_string(terms) + " cross-terms (cap " +
                          std::to_string(cap) + "); use pool_gmm_logp_approx"),
        terms_(terms) {}
  std::size_t terms() const noexcept { return terms_; }

 private:
  std::size_t terms_;
};

inline constexpr std::size_t kExpansionCap = 10000;

enum class PoolMethod { logp_exact, logp_expanded, logp_approx, linear, parameter_average };

inline std::string_view to_string(PoolMethod m) {
  switch (m) {
    case PoolMethod::logp_exact: return "logp-exact";
    case PoolMethod::logp_expanded: return "logp-expanded";
    case PoolMethod::logp_approx: return "logp-approx";
    case PoolMethod::linear: return "linear";
    case PoolMethod::parameter_average: return "param-avg";
  }
  return "?";
}

struct PoolDiagnostics {
  std::optional<std::size_t> components_before;
  std::optional<std::size_t> components_after;
  std::optional<double> grid_l1_error;          ///< L1 distance to the quadrature oracle (d <= 2)
  std::optional<double> collocation_residual;   ///< RMS relative misfit of the refitted expansion
};

using PoolResult = std::variant<BetaParams, Gmm, DensityGrid>;

struct PoolReport {
  PoolResult result;
  PoolMethod method;
  PoolDiagnostics diagnostics;

  const Gmm& gmm() const { return std::get<Gmm>(result); }
  const BetaParams& beta() const { return std::get<BetaParams>(result); }
  const DensityGrid& grid() const { return std::get<DensityGrid>(result); }
};

namespace detail {

inline void check_lengths(std::size_t priors, const WeightVector& w) {
  if (priors == 0) throw std::invalid_argument("no priors to pool");
  if (priors != w.size()) throw std::invalid_argument("priors/weights length mismatch");
}

/// Sum of terms in ascending order, so that reordering the inputs never changes the bits.
inline double ordered_sum(std::vector<double> terms) {
  std::sort(terms.begin(), terms.end());
  double s = 0.0;
  for (double t : terms) s += t;
  return s;
}

/// Mixture with log-weights of arbitrary scale.
struct LogMixture {
  std::vector<double> log_weights;
  std::vector<GaussianComponent> components;
};

inline LogMixture to_log_mixture(const Gmm& g) {
  LogMixture m;
  for (std::size_t k = 0; k < g.size(); ++k) {
    m.log_weights.push_back(std::log(g.weights()[k]));
    m.components.push_back(g.component(k));
  }
  return m;
}

/// Lexicographic order on (mean, Cholesky entries).
inline bool component_less(const GaussianComponent& x, const GaussianComponent& y) {
  for (Eigen::Index i = 0; i < x.dimension(); ++i) {
    if (x.mean()[i] != y.mean()[i]) return x.mean()[i] < y.mean()[i];
  }
  for (Eigen::Index i = 0; i < x.dimension(); ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      if (x.chol_factor()(i, j) != y.chol_factor()(i, j)) return x.chol_factor()(i, j) < y.chol_factor()(i, j);
    }
  }
  return false;
}

inline bool component_close(const GaussianComponent& x, const GaussianComponent& y, double rel = 1e-12) {
  auto close = [rel](double a, double b) { return std::abs(a - b) <= rel * (1.0 + std::max(std::abs(a), std::abs(b))); };
  for (Eigen::Index i = 0; i < x.dimension(); ++i) {
    if (!close(x.mean()[i], y.mean()[i])) return false;
    for (Eigen::Index j = 0; j <= i; ++j) {
      if (!close(x.chol_factor()(i, j), y.chol_factor()(i, j))) return false;
    }
  }
  return true;
}

/// Sorts components canonically and folds numerically identical ones together.
inline LogMixture canonicalize(const LogMixture& in) {
  std::vector<std::size_t> order(in.components.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (component_less(in.components[a], in.components[b])) return true;
    if (component_less(in.components[b], in.components[a])) return false;
    return in.log_weights[a] < in.log_weights[b];
  });
  LogMixture out;
  for (std::size_t idx : order) {
    if (!out.components.empty() && component_close(out.components.back(), in.components[idx])) {
      const double a = out.log_weights.back(), b = in.log_weights[idx];
      const double m = std::max(a, b);
      out.log_weights.back() = std::isfinite(m) ? m + std::log(std::exp(a - m) + std::exp(b - m)) : m;
    } else {
      out.log_weights.push_back(in.log_weights[idx]);
      out.components.push_back(in.components[idx]);
    }
  }
  return out;
}

inline std::vector<WeightedGaussian> to_weighted(const LogMixture& m) {
  const double lse = log_sum_exp(m.log_weights);
  std::vector<WeightedGaussian> out;
  for (std::size_t k = 0; k < m.components.size(); ++k)
    out.push_back({std::isfinite(lse) ? std::exp(m.log_weights[k] - lse) : 0.0, m.components[k]});
  return out;
}

inline LogMixture from_weighted(const std::vector<WeightedGaussian>& w) {
  LogMixture m;
  for (const auto& c : w) {
    m.log_weights.push_back(std::log(c.weight));
    m.components.push_back(c.gaussian);
  }
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Closed forms
// ---------------------------------------------------------------------------

/// Logarithmic pool of Betas: Beta(Σ w_i a_i, Σ w_i b_i).
inline BetaParams pool_beta_logp(std::span<const BetaParams> priors, const WeightVector& w) {
  detail::check_lengths(priors.size(), w);
  std::vector<double> ta, tb;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    ta.push_back(w[i] * priors[i].a());
    tb.push_back(w[i] * priors[i].b());
  }
  return {detail::ordered_sum(std::move(ta)), detail::ordered_sum(std::move(tb))};
}

/// Π N(μ_i, Σ_i)^{e_i} for arbitrary positive exponents, normalized: precision Σ e_i Σ_i⁻¹,
/// mean Σ* Σ e_i Σ_i⁻¹ μ_i.
inline GaussianComponent gaussian_power_product(std::span<const GaussianComponent> comps, std::span<const double> exponents) {
  if (comps.empty()) throw std::invalid_argument("no Gaussians to pool");
  if (comps.size() != exponents.size()) throw std::invalid_argument("Gaussians/exponents length mismatch");
  const auto d = comps.front().dimension();
  Matrix prec = Matrix::Zero(d, d);
  Vector info = Vector::Zero(d);
  for (std::size_t i = 0; i < comps.size(); ++i) {
    if (comps[i].dimension() != d) throw std::invalid_argument("Gaussians differ in dimension");
    if (exponents[i] == 0.0) continue;
    const Matrix p = comps[i].precision();
    prec += exponents[i] * p;
    info += exponents[i] * (p * comps[i].mean());
  }
  prec = symmetrize(prec);
  Eigen::LLT<Matrix> llt(prec);
  if (llt.info() != Eigen::Success) throw std::domain_error("pooled precision is singular");
  const Matrix cov = llt.solve(Matrix::Identity(d, d));
  const Vector mean = llt.solve(info);
  return GaussianComponent::from_covariance(mean, cov);
}

/// Logarithmic pool of Gaussians (closed form in precision space).
inline GaussianComponent pool_gaussian_logp(std::span<const GaussianComponent> comps, const WeightVector& w) {
  detail::check_lengths(comps.size(), w);
  return gaussian_power_product(comps, w.values());
}

/// N(μ_a, Σ_a)·N(μ_b, Σ_b) = z·N(μ_c, Σ_c) with z = N(μ_a; μ_b, Σ_a + Σ_b). Returns (log z, N_c).
inline std::pair<double, GaussianComponent> gaussian_product(const GaussianComponent& x, const GaussianComponent& y) {
  const double exps[2] = {1.0, 1.0};
  const GaussianComponent both[2] = {x, y};
  auto c = gaussian_power_product(both, exps);
  const double log_z = normal_log_pdf_cov(x.mean(), y.mean(), x.covariance() + y.covariance());
  return {log_z, std::move(c)};
}

namespace detail {

inline LogMixture multiply(const LogMixture& x, const LogMixture& y) {
  LogMixture out;
  out.log_weights.reserve(x.components.size() * y.components.size());
  out.components.reserve(x.components.size() * y.components.size());
  for (std::size_t i = 0; i < x.components.size(); ++i) {
    for (std::size_t j = 0; j < y.components.size(); ++j) {
      auto [log_z, c] = gaussian_product(x.components[i], y.components[j]);
      out.log_weights.push_back(x.log_weights[i] + y.log_weights[j] + log_z);
      out.components.push_back(std::move(c));
    }
  }
  return out;
}

inline void check_same_dimension(std::span<const Gmm> priors) {
  if (priors.empty()) throw std::invalid_argument("no priors to pool");
  for (const auto& g : priors) {
    if (g.dimension() != priors.front().dimension()) throw std::invalid_argument("priors differ in dimension");
  }
}

}  // namespace detail

/// Exact product of mixtures (all exponents 1). `log_mass` is the log of the total
/// unnormalized mass Σ_t ω_t, so that Π p_i(z) = exp(log_mass) · gmm.pdf(z).
struct ProductExpansion {
  Gmm gmm;
  double log_mass;
};

inline ProductExpansion expand_gmm_product(std::span<const Gmm> priors, std::size_t cap = kExpansionCap) {
  detail::check_same_dimension(priors);
  std::size_t terms = 1;
  for (const auto& g : priors) {
    if (terms > cap / g.size() + 1) throw ExpansionCapExceeded(terms * g.size(), cap);
    terms *= g.size();
  }
  if (terms > cap) throw ExpansionCapExceeded(terms, cap);
  auto acc = detail::to_log_mixture(priors.front());
  for (std::size_t i = 1; i < priors.size(); ++i) acc = detail::multiply(acc, detail::to_log_mixture(priors[i]));
  const double log_mass = log_sum_exp(acc.log_weights);
  return {Gmm::from_log_weights(acc.log_weights, std::move(acc.components)), log_mass};
}

/// Normalized product Π p_i(z) expanded into Π K_i components, none dropped.
inline Gmm pool_gmm_product_expand(std::span<const Gmm> priors, std::size_t cap = kExpansionCap) {
  return expand_gmm_product(priors, cap).gmm;
}

/// p^w ≈ Σ_k α_k^w c_k N(μ_k, Σ_k / w), c_k = ∫ N(z; μ_k, Σ_k)^w dz. Returned with
/// unnormalized log-weights so the product stage can carry the overall scale.
inline detail::LogMixture gmm_power_approximation(const Gmm& g, double w) {
  if (!(w > 0.0)) throw std::invalid_argument("power must be positive");
  const double d = static_cast<double>(g.dimension());
  detail::LogMixture m;
  for (std::size_t k = 0; k < g.size(); ++k) {
    const auto& c = g.component(k);
    const double log_mass = 0.5 * d * (1.0 - w) * kLog2Pi + 0.5 * (1.0 - w) * c.log_det_covariance() - 0.5 * d * std::log(w);
    m.log_weights.push_back(w * std::log(g.weights()[k]) + log_mass);
    m.components.emplace_back(c.mean(), c.chol_factor() / std::sqrt(w));
  }
  return m;
}

struct ApproxOptions {
  std::size_t max_intermediate = 64;   ///< reduce running products above this size
  std::size_t max_refit = 512;         ///< skip the NNLS refit for larger expansions
  bool refit = true;
  std::size_t oracle_points = 100000;  ///< total grid points for the L1 diagnostic (d <= 2)
};

/// Σ_i w_i log p_i(z), the unnormalized pooled log-density.
inline double logp_log_density(std::span<const Gmm> priors, std::span<const double> w, const Vector& z) {
  double s = 0.0;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (w[i] > 0.0) s += w[i] * priors[i].log_pdf(z);
  }
  return s;
}

namespace detail {

/// Collocation points: each mean and mean ± each Cholesky column.
inline std::vector<Vector> collocation_points(const LogMixture& m) {
  std::vector<Vector> pts;
  for (const auto& c : m.components) {
    pts.push_back(c.mean());
    for (Eigen::Index j = 0; j < c.dimension(); ++j) {
      pts.push_back(c.mean() + c.chol_factor().col(j));
      pts.push_back(c.mean() - c.chol_factor().col(j));
    }
  }
  return pts;
}

/// Refits mixture weights so that Σ_t ω_t N_t(x_s) ≈ target(x_s) in relative terms.
inline std::optional<std::pair<std::vector<double>, double>> refit_weights(const LogMixture& m, std::span<const Gmm> priors,
                                                                          std::span<const double> w) {
  const auto pts = collocation_points(m);
  std::vector<Vector> rows;
  std::vector<double> log_target;
  for (const auto& p : pts) {
    const double lt = logp_log_density(priors, w, p);
    if (std::isfinite(lt)) {
      rows.push_back(p);
      log_target.push_back(lt);
    }
  }
  if (rows.empty()) return std::nullopt;
  const auto n = static_cast<Eigen::Index>(m.components.size());
  Matrix a(static_cast<Eigen::Index>(rows.size()), n);
  for (std::size_t s = 0; s < rows.size(); ++s) {
    for (Eigen::Index t = 0; t < n; ++t) {
      const double e = m.components[static_cast<std::size_t>(t)].log_pdf(rows[s]) - log_target[s];
      a(static_cast<Eigen::Index>(s), t) = std::exp(std::min(e, 300.0));
    }
  }
  const Vector ones = Vector::Ones(a.rows());
  auto sol = nnls(a, ones);
  if (!sol.converged || !(sol.x.sum() > 0.0) || !sol.x.allFinite()) return std::nullopt;

  // Keep the original weights if they fit the collocation system better (rescaled to best scale).
  Vector orig(n);
  const double lse = log_sum_exp(m.log_weights);
  for (Eigen::Index t = 0; t < n; ++t) orig[t] = std::exp(m.log_weights[static_cast<std::size_t>(t)] - lse);
  const Vector ao = a * orig;
  const double scale = ao.squaredNorm() > 0.0 ? ao.dot(ones) / ao.squaredNorm() : 0.0;
  const double orig_res = (scale * ao - ones).norm();
  const double rows_d = static_cast<double>(a.rows());
  if (orig_res <= sol.residual_norm) return std::make_pair(std::vector<double>(orig.data(), orig.data() + n), orig_res / std::sqrt(rows_d));
  return std::make_pair(std::vector<double>(sol.x.data(), sol.x.data() + n), sol.residual_norm / std::sqrt(rows_d));
}

/// Effective support per axis: hull of mean ± 10 sd over every component of every prior.
inline std::vector<std::pair<double, double>> support_box(std::span<const Gmm> priors) {
  const auto d = priors.front().dimension();
  std::vector<std::pair<double, double>> box(static_cast<std::size_t>(d),
                                             {std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()});
  for (const auto& g : priors) {
    for (const auto& c : g.components()) {
      const Matrix cov = c.covariance();
      for (Eigen::Index i = 0; i < d; ++i) {
        const double sd = std::sqrt(cov(i, i));
        auto& [lo, hi] = box[static_cast<std::size_t>(i)];
        lo = std::min(lo, c.mean()[i] - 10.0 * sd);
        hi = std::max(hi, c.mean()[i] + 10.0 * sd);
      }
    }
  }
  return box;
}

}  // namespace detail

/// L1 distance between `approx` and the normalized pooled density Π p_i^{w_i},
/// both evaluated on a trapezoid grid over the effective support. d ∈ {1, 2}.
inline double logp_grid_l1(const Gmm& approx, std::span<const Gmm> priors, std::span<const double> w,
                           std::size_t total_points = 100000) {
  const auto d = approx.dimension();
  if (d > 2) throw std::invalid_argument("grid diagnostic is only defined for d <= 2");
  const auto box = detail::support_box(priors);
  const std::size_t per_axis =
      d == 1 ? total_points : static_cast<std::size_t>(std::ceil(std::sqrt(static_cast<double>(total_points))));
  std::vector<std::vector<double>> axes;
  std::vector<double> h;
  for (const auto& [lo, hi] : box) {
    axes.push_back(linspace(lo, hi, per_axis));
    h.push_back((hi - lo) / static_cast<double>(per_axis - 1));
  }
  const std::size_t n = d == 1 ? per_axis : per_axis * per_axis;
  std::vector<double> log_t(n), approx_v(n), quad_w(n);
  Vector z(d);
  for (std::size_t idx = 0; idx < n; ++idx) {
    const std::size_t i = d == 1 ? idx : idx / per_axis;
    const std::size_t j = d == 1 ? 0 : idx % per_axis;
    z[0] = axes[0][i];
    double qw = h[0] * ((i == 0 || i + 1 == per_axis) ? 0.5 : 1.0);
    if (d == 2) {
      z[1] = axes[1][j];
      qw *= h[1] * ((j == 0 || j + 1 == per_axis) ? 0.5 : 1.0);
    }
    log_t[idx] = logp_log_density(priors, w, z);
    approx_v[idx] = approx.pdf(z);
    quad_w[idx] = qw;
  }
  double m = -std::numeric_limits<double>::infinity();
  for (double v : log_t) m = std::max(m, v);
  double mass = 0.0;
  for (std::size_t idx = 0; idx < n; ++idx) mass += quad_w[idx] * std::exp(log_t[idx] - m);
  double l1 = 0.0;
  for (std::size_t idx = 0; idx < n; ++idx) l1 += quad_w[idx] * std::abs(approx_v[idx] - std::exp(log_t[idx] - m) / mass);
  return l1;
}

/// Approximate logarithmic pool of mixtures with `k_out` output components.
inline PoolReport pool_gmm_logp_approx(std::span<const Gmm> priors, const WeightVector& w, std::size_t k_out,
                                       const ApproxOptions& opt = {}) {
  if (priors.empty()) throw std::invalid_argument("no priors to pool");
  if (k_out < 1) throw std::invalid_argument("k_out must be at least 1");
  detail::check_lengths(priors.size(), w);
  detail::check_same_dimension(priors);

  // Stage 1 + 2: powered mixtures multiplied out, reducing the running product when it grows.
  std::optional<detail::LogMixture> acc;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    if (w[i] == 0.0) continue;
    auto powered = gmm_power_approximation(priors[i], w[i]);
    acc = acc ? detail::canonicalize(detail::multiply(*acc, powered)) : detail::canonicalize(powered);
    if (acc->components.size() > opt.max_intermediate) {
      acc = detail::from_weighted(reduce_components(detail::to_weighted(*acc), opt.max_intermediate));
    }
  }
  PoolDiagnostics diag;
  diag.components_before = acc->components.size();

  auto weighted = detail::to_weighted(*acc);
  if (opt.refit && acc->components.size() <= opt.max_refit) {
    if (auto fit = detail::refit_weights(*acc, priors, w.values())) {
      double s = 0.0;
      for (double v : fit->first) s += v;
      for (std::size_t t = 0; t < weighted.size(); ++t) weighted[t].weight = fit->first[t] / s;
      diag.collocation_residual = fit->second;
    }
  }

  // Stage 3.
  auto reduced = reduce_components(std::move(weighted), k_out);
  Gmm result = gmm_from_weighted(reduced);
  diag.components_after = result.size();
  if (result.dimension() <= 2) diag.grid_l1_error = logp_grid_l1(result, priors, w.values(), opt.oracle_points);
  return {std::move(result), PoolMethod::logp_approx, diag};
}

// ---------------------------------------------------------------------------
// Baselines
// ---------------------------------------------------------------------------

/// Linear pool of mixtures: the mixture of mixtures with weights w_i α_ik.
inline Gmm pool_linear(std::span<const Gmm> priors, const WeightVector& w) {
  detail::check_lengths(priors.size(), w);
  detail::check_same_dimension(priors);
  std::vector<double> weights;
  std::vector<GaussianComponent> comps;
  for (std::size_t i = 0; i < priors.size(); ++i) {
    for (std::size_t k = 0; k < priors[i].size(); ++k) {
      weights.push_back(w[i] * priors[i].weights()[k]);
      comps.push_back(priors[i].component(k));
    }
  }
  return {std::move(weights), std::move(comps)};
}

/// Linear pool of Betas on a grid over [0, 1]; the result is generally not a Beta.
inline DensityGrid pool_linear(std::span<const BetaParams> priors, const WeightVector& w, std::size_t n = 10001) {
  detail::check_lengths(priors.size(), w);
  return density_grid_fn(
      [&](double x) {
        double s = 0.0;
        for (std::size_t i = 0; i < priors.size(); ++i) s += w[i] * priors[i].pdf(x);
        return s;
      },
      0.0, 1.0, n);
}

/// Beta with the same mean and variance as a density grid on [0, 1].
inline BetaParams fit_beta_moments(const DensityGrid& g) {
  std::vector<double> xm(g.size()), x2m(g.size());
  for (std::size_t i = 0; i < g.size(); ++i) {
    xm[i] = g.points[i] * g.values[i];
    x2m[i] = g.points[i] * g.points[i] * g.values[i];
  }
  const double mass = g.integral();
  const double mean = trapezoid(xm, g.spacing) / mass;
  const double var = trapezoid(x2m, g.spacing) / mass - mean * mean;
  const double common = mean * (1.0 - mean) / var - 1.0;
  return {mean * common, (1.0 - mean) * common};
}

/// Weighted arithmetic mean of mixture parameters, component by component. This
/// assumes component k means the same thing in every prior, which is exactly the
/// assumption that fails when contexts are heterogeneous.
inline Gmm pool_parameter_average(std::span<const Gmm> priors, const WeightVector& w) {
  detail::check_lengths(priors.size(), w);
  detail::check_same_dimension(priors);
  const std::size_t k = priors.front().size();
  for (const auto& g : priors) {
    if (g.size() != k) throw std::invalid_argument("parameter averaging needs equal component counts");
  }
  const auto d = priors.front().dimension();
  std::vector<double> weights(k, 0.0);
  std::vector<GaussianComponent> comps;
  for (std::size_t c = 0; c < k; ++c) {
    Vector mean = Vector::Zero(d);
    Matrix cov = Matrix::Zero(d, d);
    for (std::size_t i = 0; i < priors.size(); ++i) {
      weights[c] += w[i] * priors[i].weights()[c];
      mean += w[i] * priors[i].component(c).mean();
      cov += w[i] * priors[i].component(c).covariance();
    }
    comps.push_back(GaussianComponent::from_covariance(mean, cov));
  }
  return {std::move(weights), std::move(comps)};
}

// ---------------------------------------------------------------------------
// Dispatch over prior variants
// ---------------------------------------------------------------------------

namespace detail {

inline Family common_family(std::span<const Prior> priors) {
  if (priors.empty()) throw std::invalid_argument("no priors to pool");
  const Family f = family_of(priors.front());
  for (const auto& p : priors) {
    if (family_of(p) != f) throw std::invalid_argument("cannot pool priors of different families");
  }
  return f;
}

template <class T>
std::vector<T> unwrap(std::span<const Prior> priors) {
  std::vector<T> out;
  for (const auto& p : priors) out.push_back(std::get<T>(p));
  return out;
}

}  // namespace detail

/// Logarithmic pool of priors of one family: exact for Betas, approximate for mixtures.
inline PoolReport pool_logp(std::span<const Prior> priors, const WeightVector& w, std::size_t k_out = 2,
                            const ApproxOptions& opt = {}) {
  if (detail::common_family(priors) == Family::beta) {
    const auto betas = detail::unwrap<BetaParams>(priors);
    return {pool_beta_logp(betas, w), PoolMethod::logp_exact, {}};
  }
  const auto gmms = detail::unwrap<Gmm>(priors);
  return pool_gmm_logp_approx(gmms, w, k_out, opt);
}

inline PoolReport pool_linear(std::span<const Prior> priors, const WeightVector& w) {
  PoolDiagnostics diag;
  if (detail::common_family(priors) == Family::beta) {
    const auto betas = detail::unwrap<BetaParams>(priors);
    return {pool_linear(betas, w), PoolMethod::linear, diag};
  }
  const auto gmms = detail::unwrap<Gmm>(priors);
  auto g = pool_linear(gmms, w);
  diag.components_after = g.size();
  return {std::move(g), PoolMethod::linear, diag};
}

inline PoolReport pool_parameter_average(std::span<const Prior> priors, const WeightVector& w) {
  if (detail::common_family(priors) == Family::beta) {
    // For Betas the parameter average and the logarithmic pool coincide.
    const auto betas = detail::unwrap<BetaParams>(priors);
    return {pool_beta_logp(betas, w), PoolMethod::parameter_average, {}};
  }
  const auto gmms = detail::unwrap<Gmm>(priors);
  return {pool_parameter_average(gmms, w), PoolMethod::parameter_average, {}};
}

/// Exact expansion of the plain product (all exponents one).
inline PoolReport pool_product(std::span<const Prior> priors) {
  if (detail::common_family(priors) == Family::beta)
    throw std::invalid_argument("the exact product expansion is defined for mixtures only");
  const auto gmms = detail::unwrap<Gmm>(priors);
  std::size_t terms = 1;
  for (const auto& g : gmms) terms *= g.size();
  auto g = pool_gmm_product_expand(gmms);
  PoolDiagnostics diag;
  diag.components_before = terms;
  diag.components_after = g.size();
  return {std::move(g), PoolMethod::logp_expanded, diag};
}

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline json to_json(const PoolReport& r) {
  json j;
  j["method"] = std::string(to_string(r.method));
  j["result"] = std::visit([](const auto& v) { return to_json(v); }, r.result);
  json d = json::object();
  if (r.diagnostics.components_before) d["components_before"] = *r.diagnostics.components_before;
  if (r.diagnostics.components_after) d["components_after"] = *r.diagnostics.components_after;
  if (r.diagnostics.grid_l1_error) d["grid_l1_error"] = *r.diagnostics.grid_l1_error;
  if (r.diagnostics.collocation_residual) d["collocation_residual"] = *r.diagnostics.collocation_residual;
  j["diagnostics"] = d;
  return j;
}

inline PoolMethod pool_method_from_string(std::string_view s) {
  for (auto m : {PoolMethod::logp_exact, PoolMethod::logp_expanded, PoolMethod::logp_approx, PoolMethod::linear,
                 PoolMethod::parameter_average}) {
    if (to_string(m) == s) return m;
  }
  throw std::invalid_argument("unknown pool method '" + std::string(s) + "'");
}

inline PoolReport pool_report_from_json(const json& j) {
  PoolReport r{BetaParams(1.0, 1.0), pool_method_from_string(detail::field(j, "method").get<std::string>()), {}};
  const auto& res = detail::field(j, "result");
  if (res.contains("family")) {
    auto p = prior_from_json(res);
    if (auto* b = std::get_if<BetaParams>(&p)) r.result = *b;
    else r.result = std::get<Gmm>(std::move(p));
  } else {
    r.result = grid_from_json(res);
  }
  if (auto it = j.find("diagnostics"); it != j.end()) {
    const auto& d = *it;
    if (d.contains("components_before")) r.diagnostics.components_before = d["components_before"].get<std::size_t>();
    if (d.contains("components_after")) r.diagnostics.components_after = d["components_after"].get<std::size_t>();
    if (d.contains("grid_l1_error")) r.diagnostics.grid_l1_error = d["grid_l1_error"].get<double>();
    if (d.contains("collocation_residual")) r.diagnostics.collocation_residual = d["collocation_residual"].get<double>();
  }
  return r;
}

}  // namespace llmprior
