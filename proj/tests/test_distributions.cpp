#include "llmprior/distributions.hpp"
#include "llmprior/density_grid.hpp"

#include <boost/math/distributions/beta.hpp>
#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace llmprior;

// Reference values below come from scipy.stats.

TEST(Beta, RejectsNonPositiveOrNonFiniteShapes) {
  EXPECT_THROW(BetaParams(0.0, 1.0), std::invalid_argument);
  EXPECT_THROW(BetaParams(1.0, -2.0), std::invalid_argument);
  EXPECT_THROW(BetaParams(std::nan(""), 1.0), std::invalid_argument);
  EXPECT_THROW(BetaParams(INFINITY, 1.0), std::invalid_argument);
}

TEST(Beta, DensityMatchesReference) {
  const BetaParams p(2.5, 4.0);
  EXPECT_NEAR(p.pdf(0.3), 2.0342672530690695, 1e-13);
  EXPECT_NEAR(p.log_beta_function(), -3.586119720156167, 1e-13);
}

TEST(Beta, DensityMatchesBoostAcrossShapes) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> shape(0.2, 40.0), x(0.001, 0.999);
  for (int i = 0; i < 500; ++i) {
    const double a = shape(rng), b = shape(rng), t = x(rng);
    const double ref = boost::math::pdf(boost::math::beta_distribution<double>(a, b), t);
    EXPECT_NEAR(BetaParams(a, b).pdf(t), ref, 1e-10 * std::max(1.0, ref)) << a << ' ' << b << ' ' << t;
  }
}

TEST(Beta, DensityOutsideUnitIntervalIsAnError) {
  EXPECT_THROW(BetaParams(2, 2).pdf(-0.1), std::domain_error);
  EXPECT_THROW(BetaParams(2, 2).pdf(1.5), std::domain_error);
}

TEST(Beta, EndpointBehaviour) {
  EXPECT_EQ(BetaParams(2, 3).pdf(0.0), 0.0);
  EXPECT_EQ(BetaParams(1, 1).pdf(0.0), 1.0);
  EXPECT_EQ(BetaParams(1, 1).pdf(1.0), 1.0);
  EXPECT_TRUE(std::isinf(BetaParams(0.5, 2).pdf(0.0)));
  EXPECT_NEAR(BetaParams(3, 1).pdf(1.0), 3.0, 1e-14);
}

TEST(Beta, UniformIsConstantOne) {
  const BetaParams u(1, 1);
  for (double t : {0.0, 0.1, 0.5, 0.77, 1.0}) EXPECT_DOUBLE_EQ(u.pdf(t), 1.0);
}

TEST(Beta, MeansAndVariance) {
  EXPECT_DOUBLE_EQ(BetaParams(9, 3).mean(), 0.75);
  EXPECT_NEAR(BetaParams(1.6, 1.4).mean(), 0.5333333333333333, 1e-15);
  EXPECT_NEAR(BetaParams(2, 3).variance(), 0.04, 1e-15);
}

TEST(Beta, ModeKinds) {
  using K = BetaMode::Kind;
  EXPECT_EQ(beta_mode(BetaParams(9, 3)).kind, K::interior);
  EXPECT_DOUBLE_EQ(*beta_mode(BetaParams(9, 3)).value, 0.8);
  EXPECT_NEAR(*beta_mode(BetaParams(13, 7)).value, 12.0 / 18.0, 1e-15);
  EXPECT_NEAR(*beta_mode(BetaParams(26, 4)).value, 25.0 / 28.0, 1e-15);
  EXPECT_NEAR(*beta_mode(BetaParams(18, 2)).value, 17.0 / 18.0, 1e-15);
  EXPECT_EQ(beta_mode(BetaParams(1, 1)).kind, K::uniform);
  EXPECT_FALSE(beta_mode(BetaParams(1, 1)).has_value());
  EXPECT_EQ(beta_mode(BetaParams(0.5, 3)).kind, K::at_zero);
  EXPECT_EQ(beta_mode(BetaParams(1, 3)).kind, K::at_zero);
  EXPECT_EQ(beta_mode(BetaParams(4, 0.7)).kind, K::at_one);
  EXPECT_EQ(beta_mode(BetaParams(0.5, 0.5)).kind, K::both_ends);
}

TEST(Gaussian, ValidatesCholeskyFactor) {
  Vector m(2);
  m << 0, 0;
  Matrix upper(2, 2);
  upper << 1, 0.5, 0, 1;
  EXPECT_THROW(GaussianComponent(m, upper), std::invalid_argument);
  Matrix neg(2, 2);
  neg << 1, 0, 0.2, -1;
  EXPECT_THROW(GaussianComponent(m, neg), std::invalid_argument);
  EXPECT_THROW(GaussianComponent(m, Matrix::Identity(3, 3)), std::invalid_argument);
  EXPECT_THROW(GaussianComponent::scalar(0, 0), std::invalid_argument);
}

TEST(Gaussian, BivariateLogDensityMatchesReference) {
  Vector m(2), x(2);
  m << 1, 0;
  x << 0.5, -1;
  Matrix cov(2, 2);
  cov << 2, 0.3, 0.3, 1;
  const auto g = GaussianComponent::from_covariance(m, cov);
  EXPECT_NEAR(g.log_pdf(x), -2.6718998916270964, 1e-13);
  EXPECT_TRUE(g.covariance().isApprox(cov, 1e-14));
  EXPECT_TRUE((g.precision() * cov).isApprox(Matrix::Identity(2, 2), 1e-13));
}

TEST(Gmm, WeightsMustSumToOne) {
  EXPECT_THROW(Gmm::scalar({0.3, 0.5}, {0, 1}, {1, 1}), std::invalid_argument);
  EXPECT_THROW(Gmm::scalar({-0.1, 1.1}, {0, 1}, {1, 1}), std::invalid_argument);
  EXPECT_THROW(Gmm::scalar({0.5, 0.5}, {0}, {1, 1}), std::invalid_argument);
  const auto g = Gmm::scalar({0.4, 0.6 + 1e-12}, {0, 1}, {1, 1});
  EXPECT_NEAR(g.weights()[0] + g.weights()[1], 1.0, 1e-15);
}

TEST(Gmm, MixedDimensionsAreRejected) {
  std::vector<GaussianComponent> c{GaussianComponent::scalar(0, 1), GaussianComponent(Vector::Zero(2), Matrix::Identity(2, 2))};
  EXPECT_THROW(Gmm({0.5, 0.5}, c), std::invalid_argument);
}

TEST(Gmm, DensityMatchesReference) {
  const auto g = Gmm::scalar({0.3, 0.7}, {-1, 2}, {0.5, 1.5});
  EXPECT_NEAR(g.pdf(0.4), 0.11015192376777941, 1e-15);
  EXPECT_NEAR(g.log_pdf(0.4), std::log(0.11015192376777941), 1e-13);
}

TEST(Gmm, LogDensityIsStableFarInTheTail) {
  const auto g = Gmm::scalar({0.5, 0.5}, {0, 1}, {1, 1});
  const double lp = g.log_pdf(60.0);
  EXPECT_TRUE(std::isfinite(lp));
  EXPECT_EQ(g.pdf(60.0), 0.0);
  // log(0.5 N(60;0,1) + 0.5 N(60;1,1)) computed by hand.
  const double a = -0.5 * 3600 - 0.5 * std::log(2 * M_PI), b = -0.5 * 3481 - 0.5 * std::log(2 * M_PI);
  EXPECT_NEAR(lp, std::log(0.5) + b + std::log1p(std::exp(a - b)), 1e-9);
}

TEST(Gmm, MomentsOfMixture) {
  const auto g = Gmm::scalar({0.4, 0.6}, {55, 80}, {6, 6});
  EXPECT_NEAR(g.mean()[0], 70.0, 1e-12);
  // 36 + 0.4*225 + 0.6*100 - 4900 = 150 + 36
  EXPECT_NEAR(g.covariance()(0, 0), 36 + 0.4 * 55 * 55 + 0.6 * 80 * 80 - 4900, 1e-9);
}

TEST(Gmm, IntegratesToOne) {
  const auto g = Gmm::scalar({0.4, 0.6}, {55, 80}, {6, 6});
  const auto grid = density_grid(g, 0, 140, 20001);
  EXPECT_NEAR(grid.integral(), 1.0, 1e-9);
}

TEST(Gmm, SamplingIsDeterministicAndMatchesMoments) {
  const auto g = Gmm::scalar({0.4, 0.6}, {55, 80}, {6, 6});
  const auto s1 = gmm_sample(g, 50000, 42);
  const auto s2 = gmm_sample(g, 50000, 42);
  ASSERT_EQ(s1.size(), 50000u);
  double mean = 0.0, below = 0.0;
  for (std::size_t i = 0; i < s1.size(); ++i) {
    ASSERT_EQ(s1[i][0], s2[i][0]);
    mean += s1[i][0];
    below += s1[i][0] < 67.5 ? 1.0 : 0.0;
  }
  mean /= 50000.0;
  EXPECT_NEAR(mean, 70.0, 0.2);
  EXPECT_NEAR(below / 50000.0, 0.4, 0.01);
  EXPECT_NE(gmm_sample(g, 10, 1)[0][0], gmm_sample(g, 10, 2)[0][0]);
  EXPECT_THROW(gmm_sample(g, 0, 1), std::invalid_argument);
}

TEST(Gmm, BivariateSampleCovariance) {
  Matrix cov(2, 2);
  cov << 2, 0.6, 0.6, 1;
  Gmm g({1.0}, {GaussianComponent::from_covariance(Vector::Zero(2), cov)});
  const auto s = gmm_sample(g, 100000, 3);
  Matrix acc = Matrix::Zero(2, 2);
  for (const auto& x : s) acc += x * x.transpose();
  acc /= static_cast<double>(s.size());
  EXPECT_NEAR(acc(0, 0), 2.0, 0.05);
  EXPECT_NEAR(acc(0, 1), 0.6, 0.03);
  EXPECT_NEAR(acc(1, 1), 1.0, 0.03);
}

TEST(Family, RoundTripsNames) {
  EXPECT_EQ(family_from_string("beta"), Family::beta);
  EXPECT_EQ(family_from_string("gmm"), Family::gmm);
  EXPECT_THROW(family_from_string("normal"), std::invalid_argument);
  EXPECT_EQ(family_of(Prior{BetaParams(1, 1)}), Family::beta);
}
