#pragma once

#include "llmprior/distributions.hpp"
#include "llmprior/pooling.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace llmprior {

/// Coin-flip style evidence: `heads` successes and `tails` failures.
struct BinomialData {
  std::uint64_t heads = 0;
  std::uint64_t tails = 0;

  std::uint64_t trials() const noexcept { return heads + tails; }
  bool informative() const noexcept { return trials() > 0; }
};

/// Conjugate update Beta(a, b) → Beta(a + k, b + (n − k)).
inline BetaParams update_beta_binomial(const BetaParams& prior, const BinomialData& data) {
  return {prior.a() + static_cast<double>(data.heads), prior.b() + static_cast<double>(data.tails)};
}

struct ExternalBayesianityReport {
  BetaParams pool_then_update;
  BetaParams update_then_pool;
  double max_parameter_gap;

  bool holds(double tolerance = 1e-12) const noexcept { return max_parameter_gap < tolerance; }
};

/// Compares pooling-then-updating with updating-then-pooling. For the Beta-Binomial
/// pair under the logarithmic pool the two agree exactly.
inline ExternalBayesianityReport check_external_bayesianity(std::span<const BetaParams> priors, const WeightVector& w,
                                                            const BinomialData& data) {
  const BetaParams pooled_first = update_beta_binomial(pool_beta_logp(priors, w), data);
  std::vector<BetaParams> posteriors;
  posteriors.reserve(priors.size());
  for (const auto& p : priors) posteriors.push_back(update_beta_binomial(p, data));
  const BetaParams updated_first = pool_beta_logp(posteriors, w);
  const double gap = std::max(std::abs(pooled_first.a() - updated_first.a()), std::abs(pooled_first.b() - updated_first.b()));
  return {pooled_first, updated_first, gap};
}

inline json to_json(const ExternalBayesianityReport& r) {
  return {{"pool_then_update", to_json(r.pool_then_update)},
          {"update_then_pool", to_json(r.update_then_pool)},
          {"max_parameter_gap", r.max_parameter_gap}};
}

}  // namespace llmprior
