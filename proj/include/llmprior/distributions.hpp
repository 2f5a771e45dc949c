#pragma once

#include "llmprior/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace llmprior {

enum class Family { beta, gmm };

inline std::string_view to_string(Family f) { return f == Family::beta ? "beta" : "gmm"; }

inline Family family_from_string(std::string_view s) {
  if (s == "beta") return Family::beta;
  if (s == "gmm") return Family::gmm;
  throw std::invalid_argument("unknown family '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// Beta
// ---------------------------------------------------------------------------

/// Beta(a, b) prior over [0, 1]. Construction rejects non-positive or non-finite shapes.
class BetaParams {
 public:
  BetaParams(double a, double b) : a_(a), b_(b) {
    if (!(a > 0.0) || !(b > 0.0) || !std::isfinite(a) || !std::isfinite(b))
      throw std::invalid_argument("Beta shapes must be finite and positive");
  }

  double a() const noexcept { return a_; }
  double b() const noexcept { return b_; }

  /// log B(a, b)
  double log_beta_function() const { return std::lgamma(a_) + std::lgamma(b_) - std::lgamma(a_ + b_); }

  double log_pdf(double theta) const {
    if (!(theta >= 0.0 && theta <= 1.0)) throw std::domain_error("theta outside [0, 1]");
    const double lo = a_ == 1.0 ? 0.0 : (a_ - 1.0) * std::log(theta);
    const double hi = b_ == 1.0 ? 0.0 : (b_ - 1.0) * std::log1p(-theta);
    return lo + hi - log_beta_function();
  }

  /// Density at theta; +inf at an endpoint where the shape parameter is below 1.
  double pdf(double theta) const { return std::exp(log_pdf(theta)); }

  double mean() const noexcept { return a_ / (a_ + b_); }

  double variance() const noexcept {
    const double s = a_ + b_;
    return a_ * b_ / (s * s * (s + 1.0));
  }

  friend bool operator==(const BetaParams&, const BetaParams&) = default;

 private:
  double a_;
  double b_;
};

inline double beta_pdf(const BetaParams& p, double theta) { return p.pdf(theta); }
inline double beta_mean(const BetaParams& p) { return p.mean(); }

/// Where a Beta density peaks. Only `interior` carries a finite mode inside (0, 1).
struct BetaMode {
  enum class Kind {
    interior,   ///< a > 1 and b > 1
    at_zero,    ///< density maximal (possibly unbounded) at 0
    at_one,     ///< density maximal (possibly unbounded) at 1
    uniform,    ///< Beta(1, 1): every point is a mode
    both_ends,  ///< a < 1 and b < 1: U-shaped, unbounded at both ends
  };
  Kind kind;
  std::optional<double> value;

  bool has_value() const noexcept { return value.has_value(); }
};

inline std::string_view to_string(BetaMode::Kind k) {
  switch (k) {
    case BetaMode::Kind::interior: return "interior";
    case BetaMode::Kind::at_zero: return "at_zero";
    case BetaMode::Kind::at_one: return "at_one";
    case BetaMode::Kind::uniform: return "uniform";
    case BetaMode::Kind::both_ends: return "both_ends";
  }
  return "?";
}

inline BetaMode beta_mode(const BetaParams& p) {
  const double a = p.a(), b = p.b();
  using K = BetaMode::Kind;
  if (a > 1.0 && b > 1.0) return {K::interior, (a - 1.0) / (a + b - 2.0)};
  if (a == 1.0 && b == 1.0) return {K::uniform, std::nullopt};
  if (a < 1.0 && b < 1.0) return {K::both_ends, std::nullopt};
  // Exactly one side is at or below 1 (or one shape is 1 and the other differs).
  if (a <= 1.0 && b >= 1.0) return {K::at_zero, 0.0};
  if (a >= 1.0 && b <= 1.0) return {K::at_one, 1.0};
  return {K::both_ends, std::nullopt};
}

// ---------------------------------------------------------------------------
// Gaussian mixtures
// ---------------------------------------------------------------------------

/// One Gaussian stored as mean + lower Cholesky factor of its covariance.
class GaussianComponent {
 public:
  GaussianComponent(Vector mean, Matrix chol_factor) : mean_(std::move(mean)), chol_(std::move(chol_factor)) {
    const auto d = mean_.size();
    if (d < 1) throw std::invalid_argument("Gaussian dimension must be at least 1");
    if (chol_.rows() != d || chol_.cols() != d)
      throw std::invalid_argument("Cholesky factor shape does not match mean dimension");
    if (!mean_.allFinite() || !chol_.allFinite()) throw std::invalid_argument("non-finite Gaussian parameter");
    for (Eigen::Index i = 0; i < d; ++i) {
      if (!(chol_(i, i) > 0.0)) throw std::invalid_argument("Cholesky diagonal must be strictly positive");
      for (Eigen::Index j = i + 1; j < d; ++j) {
        if (chol_(i, j) != 0.0) throw std::invalid_argument("Cholesky factor must be lower triangular");
      }
    }
  }

  /// 1-D convenience: N(mean, sd²).
  static GaussianComponent scalar(double mean, double sd) {
    return {Vector::Constant(1, mean), Matrix::Constant(1, 1, sd)};
  }

  /// Factor a full covariance.
  static GaussianComponent from_covariance(Vector mean, const Matrix& cov) {
    return {std::move(mean), cholesky_lower(symmetrize(cov))};
  }

  Eigen::Index dimension() const noexcept { return mean_.size(); }
  const Vector& mean() const noexcept { return mean_; }
  const Matrix& chol_factor() const noexcept { return chol_; }
  Matrix covariance() const { return chol_ * chol_.transpose(); }
  Matrix precision() const {
    Matrix inv_l = chol_.triangularView<Eigen::Lower>().solve(Matrix::Identity(dimension(), dimension()));
    return inv_l.transpose() * inv_l;
  }
  double log_det_covariance() const { return log_det_from_chol(chol_); }

  double log_pdf(const Vector& x) const {
    if (x.size() != dimension()) throw std::invalid_argument("dimension mismatch");
    return normal_log_pdf(x, mean_, chol_);
  }
  double pdf(const Vector& x) const { return std::exp(log_pdf(x)); }

  template <class Rng>
  Vector sample(Rng& rng) const {
    std::normal_distribution<double> n01(0.0, 1.0);
    Vector z(dimension());
    for (Eigen::Index i = 0; i < z.size(); ++i) z[i] = n01(rng);
    return mean_ + chol_ * z;
  }

 private:
  Vector mean_;
  Matrix chol_;
};

/// K-component Gaussian mixture. Weights are nonnegative and sum to one; every
/// covariance exists only through its Cholesky factor.
class Gmm {
 public:
  /// Weights within 1e-9 of summing to one are rescaled exactly; anything else throws.
  Gmm(std::vector<double> weights, std::vector<GaussianComponent> components)
      : weights_(std::move(weights)), components_(std::move(components)) {
    if (components_.empty()) throw std::invalid_argument("a mixture needs at least one component");
    if (weights_.size() != components_.size()) throw std::invalid_argument("weights/components length mismatch");
    const auto d = components_.front().dimension();
    for (const auto& c : components_) {
      if (c.dimension() != d) throw std::invalid_argument("mixture components differ in dimension");
    }
    double s = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0) || !std::isfinite(w)) throw std::invalid_argument("mixture weights must be finite and nonnegative");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9) throw std::invalid_argument("mixture weights must sum to 1");
    for (double& w : weights_) w /= s;
  }

  /// Builds a mixture from log-weights of arbitrary scale.
  static Gmm from_log_weights(const std::vector<double>& log_weights, std::vector<GaussianComponent> components) {
    const double lse = log_sum_exp(log_weights);
    if (!std::isfinite(lse)) throw std::domain_error("mixture has no finite mass");
    std::vector<double> w(log_weights.size());
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = std::exp(log_weights[k] - lse);
    const double s = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w) v /= s;
    return {std::move(w), std::move(components)};
  }

  /// 1-D mixture from parallel weight/mean/standard-deviation lists.
  static Gmm scalar(const std::vector<double>& weights, const std::vector<double>& means, const std::vector<double>& sds) {
    if (means.size() != weights.size() || sds.size() != weights.size())
      throw std::invalid_argument("weights/means/std_devs length mismatch");
    std::vector<GaussianComponent> comps;
    comps.reserve(means.size());
    for (std::size_t k = 0; k < means.size(); ++k) {
      if (!(sds[k] > 0.0)) throw std::invalid_argument("standard deviations must be positive");
      comps.push_back(GaussianComponent::scalar(means[k], sds[k]));
    }
    return {weights, std::move(comps)};
  }

  std::size_t size() const noexcept { return components_.size(); }
  Eigen::Index dimension() const noexcept { return components_.front().dimension(); }
  const std::vector<double>& weights() const noexcept { return weights_; }
  const std::vector<GaussianComponent>& components() const noexcept { return components_; }
  const GaussianComponent& component(std::size_t k) const { return components_.at(k); }

  double log_pdf(const Vector& x) const {
    if (x.size() != dimension()) throw std::invalid_argument("dimension mismatch");
    std::vector<double> terms;
    terms.reserve(size());
    for (std::size_t k = 0; k < size(); ++k) {
      if (weights_[k] > 0.0) terms.push_back(std::log(weights_[k]) + components_[k].log_pdf(x));
    }
    return log_sum_exp(terms);
  }
  double pdf(const Vector& x) const { return std::exp(log_pdf(x)); }

  double log_pdf(double x) const { return log_pdf(Vector::Constant(1, x)); }
  double pdf(double x) const { return std::exp(log_pdf(x)); }

  Vector mean() const {
    Vector m = Vector::Zero(dimension());
    for (std::size_t k = 0; k < size(); ++k) m += weights_[k] * components_[k].mean();
    return m;
  }

  Matrix covariance() const {
    const Vector m = mean();
    Matrix c = Matrix::Zero(dimension(), dimension());
    for (std::size_t k = 0; k < size(); ++k) {
      const Vector dm = components_[k].mean() - m;
      c += weights_[k] * (components_[k].covariance() + dm * dm.transpose());
    }
    return c;
  }

 private:
  std::vector<double> weights_;
  std::vector<GaussianComponent> components_;
};

inline double gmm_pdf(const Gmm& g, const Vector& z) { return g.pdf(z); }
inline double gmm_log_pdf(const Gmm& g, const Vector& z) { return g.log_pdf(z); }

/// Hierarchical sampling: pick a component by weight, then draw from it.
/// Deterministic for a fixed (seed, n) within one standard-library build.
inline std::vector<Vector> gmm_sample(const Gmm& g, std::size_t n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("sample count must be at least 1");
  std::mt19937_64 rng(seed);
  std::vector<double> cdf(g.size());
  std::partial_sum(g.weights().begin(), g.weights().end(), cdf.begin());
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::vector<Vector> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double u = u01(rng) * cdf.back();
    auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const auto k = std::min<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), g.size() - 1);
    out.push_back(g.component(k).sample(rng));
  }
  return out;
}

/// A prior is either a Beta over [0, 1] or a Gaussian mixture over R^d.
using Prior = std::variant<BetaParams, Gmm>;

inline Family family_of(const Prior& p) { return std::holds_alternative<BetaParams>(p) ? Family::beta : Family::gmm; }

}  // namespace llmprior
