#include <gtest/gtest.h>

#include <cmath>

#include "proxmala/diagnostics.hpp"
#include "proxmala/sde.hpp"

using namespace proxmala;

TEST(Sde, ZeroTargetMatchesDiscreteOuVariance) {
  // z' = (1 - h dt) z + sqrt(2 h dt) lambda xi has stationary variance
  // lambda^2 / (1 - h dt / 2).
  const auto t = TargetSpec::zero(CovarianceSpec::spectral(1.0, 0.0, 3));
  const double h = 1.0, dt = 1e-3;
  RandomStream rng(1);
  const auto p = integrate(t, h, exact_sample(t, rng), dt, 10'000'000, rng, 10000);
  for (std::size_t i = 0; i < 3; ++i) {
    const double l2 = t.cov.lambda_sq()[i];
    const double oracle = l2 / (1.0 - h * dt / 2.0);
    EXPECT_NEAR(p.moments[i].variance() / oracle, 1.0, 0.05) << i;
    EXPECT_NEAR(p.moments[i].mean() / std::sqrt(l2), 0.0, 0.05) << i;
  }
}

TEST(Sde, ConjugateTargetMarginals) {
  const auto t = TargetSpec::quadratic(CovarianceSpec::spectral(1.0, 0.0, 4));
  RandomStream rng(2);
  const auto p = integrate(t, 0.8, exact_sample(t, rng), 1e-3, 10'000'000, rng, 100000);
  for (std::size_t i = 0; i < 4; ++i) {
    const double sd = exact_sd(t, i);
    EXPECT_NEAR(p.moments[i].variance() / (sd * sd), 1.0, 0.05) << i;
  }
}

TEST(Sde, TimeChangeLeavesMarginalsUnchanged) {
  const auto t = TargetSpec::quadratic(CovarianceSpec::spectral(1.0, 0.0, 2));
  RandomStream r1(3), r2(4);
  const auto z0 = exact_sample(t, r1);
  const auto slow = integrate(t, 1.0, z0, 1e-3, 8'000'000, r1, 1'000'000);
  const auto fast = integrate(t, 2.0, z0, 1e-3, 4'000'000, r2, 1'000'000);
  for (std::size_t i = 0; i < 2; ++i)
    EXPECT_NEAR(fast.moments[i].variance() / slow.moments[i].variance(), 1.0, 0.05) << i;
}

TEST(Sde, ZeroSpeedIsConstant) {
  const auto t = TargetSpec::quadratic(CovarianceSpec::spectral(1.0, 0.0, 5));
  RandomStream rng(5);
  const auto z0 = exact_sample(t, rng);
  const auto p = integrate(t, 0.0, z0, 1e-2, 100, rng);
  ASSERT_EQ(p.states.size(), 101u);
  for (const auto& z : p.states) EXPECT_EQ(z, z0);
}

TEST(Sde, PathLayout) {
  const auto t = TargetSpec::zero(CovarianceSpec::spectral(1.0, 0.0, 3));
  RandomStream rng(6);
  const auto p = integrate(t, 1.0, SpectralVector(3), 1e-3, 1000, rng, 100);
  ASSERT_EQ(p.times.size(), 11u);
  ASSERT_EQ(p.states.size(), 11u);
  EXPECT_EQ(p.times.front(), 0.0);
  for (std::size_t k = 1; k < p.times.size(); ++k) {
    EXPECT_NEAR(p.times[k] - p.times[k - 1], 0.1, 1e-12);
    EXPECT_EQ(p.states[k].size(), 3u);
  }
  EXPECT_EQ(p.moments[0].count(), 1000u);
}

TEST(Sde, SeededRunsAreIdentical) {
  const auto t = TargetSpec::log_cosh(CovarianceSpec::spectral(1.0, 0.2, 6), {0.5, 0.5});
  RandomStream a(7), b(7);
  const auto p = integrate(t, 0.7, SpectralVector(6), 1e-3, 5000, a, 50);
  const auto q = integrate(t, 0.7, SpectralVector(6), 1e-3, 5000, b, 50);
  EXPECT_EQ(p.states, q.states);
}

TEST(Sde, StabilityGuard) {
  const auto t = TargetSpec::quadratic(CovarianceSpec::spectral(1.0, 0.0, 4));
  RandomStream rng(8);
  // Rate 1 + lambda_1^2 * 1 = 2 for the first coordinate.
  EXPECT_THROW(integrate(t, 1.0, SpectralVector(4), 0.25, 10, rng), ConfigError);
  EXPECT_NO_THROW(integrate(t, 1.0, SpectralVector(4), 0.2, 10, rng));
  EXPECT_THROW(integrate(t, -1.0, SpectralVector(4), 0.01, 10, rng), ConfigError);
  EXPECT_THROW(integrate(t, 1.0, SpectralVector(3), 0.01, 10, rng), DimensionError);
}

TEST(MarginalCompare, ChainAgainstPath) {
  const std::size_t n = 64;
  const auto t = TargetSpec::zero(CovarianceSpec::spectral(1.0, 0.0, n));
  ProposalConfig cfg;
  cfg.dim = n;
  RandomStream rng(9);
  const auto s = run_chain(t, cfg, 40000, exact_sample(t, rng), rng);
  // Coordinates are uncoupled, so a short truncation suffices for the SDE.
  const auto t8 = TargetSpec::zero(CovarianceSpec::spectral(1.0, 0.0, 8));
  const auto p = integrate(t8, limit_speed(1.0), exact_sample(t8, rng), 1e-3, 4'000'000, rng, 1'000'000);
  EXPECT_TRUE(marginal_compare(s, p, {}).empty());
  const auto rows = marginal_compare(s, p, {1, 2}, &t);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].coord, 1u);
  ASSERT_TRUE(rows[0].exact_var.has_value());
  EXPECT_EQ(*rows[0].exact_var, 1.0);
  EXPECT_LT(std::abs(rows[0].rel_var_gap), 0.1);
  EXPECT_NEAR(rows[0].sde_var, 1.0, 0.1);
  EXPECT_THROW(marginal_compare(s, p, {9}), ConfigError);
}
