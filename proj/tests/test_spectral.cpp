#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "proxmala/spectral.hpp"
#include "proxmala/stats.hpp"

using namespace proxmala;

namespace {

SpectralVector unit(std::size_t n, std::size_t j) {
  SpectralVector e(n);
  e[j] = 1.0;
  return e;
}

SpectralVector random_vector(std::size_t n, RandomStream& rng) {
  SpectralVector v(n);
  rng.fill_normal(v.span());
  return v;
}

}  // namespace

TEST(SobolevNorm, UnitAndZeroVectors) {
  for (double r : {-1.0, 0.0, 0.5, 2.0}) EXPECT_DOUBLE_EQ(sobolev_norm(unit(5, 0), r), 1.0);
  EXPECT_EQ(sobolev_norm(SpectralVector(7), 1.0), 0.0);
  EXPECT_EQ(sobolev_norm(SpectralVector(), 1.0), 0.0);
}

TEST(SobolevNorm, TwoCoordinatesWithUnitIndex) {
  EXPECT_NEAR(sobolev_norm(SpectralVector{1.0, 1.0}, 1.0), std::sqrt(5.0), 1e-15);
}

TEST(SobolevNorm, ZeroIndexIsEuclidean) {
  RandomStream rng(1);
  for (int k = 0; k < 50; ++k) {
    auto x = random_vector(33, rng);
    double e = 0.0;
    for (double v : x) e += v * v;
    EXPECT_DOUBLE_EQ(sobolev_norm(x, 0.0), std::sqrt(e));
  }
}

TEST(SobolevNorm, DualityPairingBound) {
  RandomStream rng(2);
  const double s = 0.7;
  for (int k = 0; k < 200; ++k) {
    auto u = random_vector(40, rng), v = random_vector(40, rng);
    double pair = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) pair += u[i] * v[i];
    EXPECT_LE(std::abs(pair), sobolev_norm(u, -s) * sobolev_norm(v, s) * (1 + 1e-14));
  }
}

TEST(CNorm, Examples) {
  const auto c = CovarianceSpec::spectral(1.0, 0.0, 4);
  EXPECT_DOUBLE_EQ(c_norm(unit(4, 0), c), 1.0);
  EXPECT_DOUBLE_EQ(c_norm(unit(4, 1), c), 2.0);
  EXPECT_EQ(c_norm(SpectralVector(4), c), 0.0);
  EXPECT_THROW(c_norm(SpectralVector(3), c), DimensionError);
}

TEST(ApplyCov, Examples) {
  const auto c = CovarianceSpec::spectral(1.0, 0.0, 4);
  const auto y = apply_cov(unit(4, 1), c, 1.0);
  EXPECT_EQ(y, (SpectralVector{0.0, 0.25, 0.0, 0.0}));
  EXPECT_THROW(apply_cov(SpectralVector(5), c, 1.0), DimensionError);
}

TEST(ApplyCov, SemigroupAndInverse) {
  const auto c = CovarianceSpec::spectral(1.3, 0.2, 64);
  RandomStream rng(3);
  const auto x = random_vector(64, rng);
  const auto half2 = apply_cov(apply_cov(x, c, 0.5), c, 0.5);
  const auto full = apply_cov(x, c, 1.0);
  const auto back = apply_cov(apply_cov(x, c, -1.0), c, 1.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(half2[i], full[i], 1e-15 * std::abs(full[i]) + 1e-300);
    EXPECT_NEAR(back[i], x[i], 1e-14 * std::abs(x[i]));
  }
}

TEST(ApplyCov, WhiteningIdentity) {
  const auto c = CovarianceSpec::spectral(2.0, 1.0, 128);
  RandomStream rng(4);
  for (int k = 0; k < 20; ++k) {
    const auto x = random_vector(128, rng);
    EXPECT_NEAR(c_norm(apply_cov(x, c, 0.5), c), sobolev_norm(x, 0.0), 1e-12);
  }
}

TEST(CovarianceSpec, RejectsInvalidExponents) {
  try {
    CovarianceSpec::spectral(0.4, 0.0, 8);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("kappa > 1/2"), std::string::npos);
  }
  EXPECT_THROW(CovarianceSpec::spectral(1.0, 0.5, 8), ConfigError);
  EXPECT_THROW(CovarianceSpec::spectral(1.0, -0.1, 8), ConfigError);
  EXPECT_THROW(CovarianceSpec::spectral(1.0, 0.0, 0), ConfigError);
  EXPECT_NO_THROW(CovarianceSpec::spectral(1.0, 0.49, 8));
}

TEST(CovarianceSpec, EigenvaluesPositiveDecreasing) {
  const auto c = CovarianceSpec::spectral(0.75, 0.1, 100);
  for (std::size_t i = 0; i + 1 < c.dim(); ++i) {
    EXPECT_GT(c.lambda(i + 1), 0.0);
    EXPECT_LT(c.lambda(i + 1), c.lambda(i));
  }
}

TEST(SampleReference, MomentsMatchReferenceLaw) {
  const auto c = CovarianceSpec::spectral(1.5, 0.5, 6);
  RandomStream rng(5);
  const std::size_t n = 100000;
  std::vector<RunningMoments> m(c.dim());
  RunningMoments s_norm2;
  for (std::size_t k = 0; k < n; ++k) {
    const auto x = sample_reference(c, rng);
    for (std::size_t i = 0; i < c.dim(); ++i) m[i].add(x[i]);
    s_norm2.add(s_norm_sq(x, c));
  }
  double oracle = 0.0;
  for (std::size_t i = 0; i < c.dim(); ++i) {
    const double l2 = std::pow(static_cast<double>(i + 1), -3.0);
    oracle += std::pow(static_cast<double>(i + 1), 1.0) * l2;
    EXPECT_NEAR(m[i].mean(), 0.0, 3 * m[i].stderr_mean());
    EXPECT_NEAR(m[i].variance(), l2, 3 * l2 * std::sqrt(2.0 / (n - 1)));
  }
  EXPECT_NEAR(s_norm2.mean(), oracle, 3 * s_norm2.stderr_mean());
}

TEST(SampleReference, WhitenedCoordinatesPassChiSquare) {
  const auto c = CovarianceSpec::spectral(1.0, 0.0, 5);
  RandomStream rng(6);
  std::vector<std::vector<double>> w(5);
  for (int k = 0; k < 100000; ++k) {
    const auto x = sample_reference(c, rng);
    for (std::size_t i = 0; i < 5; ++i) w[i].push_back(x[i] / c.lambda(i));
  }
  for (std::size_t i = 0; i < 5; ++i) EXPECT_GT(chi_square_normal(w[i], 0.0, 1.0).p_value, 0.01);
}

TEST(TraceCs, Examples) {
  EXPECT_DOUBLE_EQ(trace_cs(CovarianceSpec::spectral(1.0, 0.0, 2)), 1.25);
  EXPECT_DOUBLE_EQ(trace_cs(CovarianceSpec::spectral(3.0, 1.2, 1)), 1.0);
  EXPECT_DOUBLE_EQ(trace_cs(CovarianceSpec::spectral(0.7, 0.0, 1)), 1.0);
}

TEST(TraceCs, BaselPartialSums) {
  // Tail of sum j^{-2} past N lies between 1/(N+1) and 1/N.
  for (std::size_t n : {1000u, 100000u}) {
    const double gap = std::numbers::pi * std::numbers::pi / 6.0 -
                       trace_cs(CovarianceSpec::spectral(1.0, 0.0, n));
    EXPECT_GT(gap, 1.0 / (n + 1.0) - 1e-12);
    EXPECT_LT(gap, 1.0 / n + 1e-12);
  }
}

TEST(SpectralVector, FiniteCheck) {
  SpectralVector v{1.0, 2.0};
  EXPECT_TRUE(v.all_finite());
  v[1] = std::nan("");
  EXPECT_FALSE(v.all_finite());
}
