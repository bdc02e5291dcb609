#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <span>
#include <vector>

#include <boost/math/special_functions/gamma.hpp>

#include "proxmala/errors.hpp"

namespace proxmala {

/// Welford accumulator for mean and variance.
class RunningMoments {
 public:
  void add(double x) noexcept {
    ++n_;
    const double d = x - mean_;
    mean_ += d / static_cast<double>(n_);
    m2_ += d * (x - mean_);
  }

  void merge(const RunningMoments& o) noexcept {
    if (o.n_ == 0) return;
    if (n_ == 0) {
      *this = o;
      return;
    }
    const double n = static_cast<double>(n_ + o.n_);
    const double d = o.mean_ - mean_;
    mean_ += d * static_cast<double>(o.n_) / n;
    m2_ += o.m2_ + d * d * static_cast<double>(n_) * static_cast<double>(o.n_) / n;
    n_ += o.n_;
  }

  std::size_t count() const noexcept { return n_; }
  double mean() const noexcept { return mean_; }
  /// Unbiased sample variance; 0 with fewer than two samples.
  double variance() const noexcept {
    return n_ > 1 ? m2_ / static_cast<double>(n_ - 1) : 0.0;
  }
  double stderr_mean() const noexcept {
    return n_ > 1 ? std::sqrt(variance() / static_cast<double>(n_)) : 0.0;
  }

  /// Standard error of the sample variance under a Gaussian law.
  double stderr_variance() const noexcept {
    return n_ > 1 ? variance() * std::sqrt(2.0 / static_cast<double>(n_ - 1))
                  : 0.0;
  }

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

inline double mean_of(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

inline double variance_of(std::span<const double> v) {
  RunningMoments m;
  for (double x : v) m.add(x);
  return m.variance();
}

/// Batch-means standard error of the mean for a correlated series.
inline double batch_means_se(std::span<const double> v, std::size_t n_batches = 50) {
  if (v.size() < 2 * n_batches) n_batches = std::max<std::size_t>(2, v.size() / 2);
  const std::size_t b = v.size() / n_batches;
  if (b == 0) return 0.0;
  RunningMoments m;
  for (std::size_t k = 0; k < n_batches; ++k)
    m.add(mean_of(v.subspan(k * b, b)));
  return m.stderr_mean();
}

inline double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

/// P(K > t) for the Kolmogorov distribution.
inline double kolmogorov_tail(double t) {
  if (t < 0.2) return 1.0;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k) {
    const double term = std::exp(-2.0 * k * k * t * t);
    sum += (k % 2 == 1 ? term : -term);
    if (term < 1e-16) break;
  }
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

struct KsResult {
  double statistic = 0.0;
  double p_value = 1.0;
};

/// One-sample Kolmogorov-Smirnov test against a continuous cdf.
inline KsResult ks_test(std::vector<double> sample,
                        const std::function<double(double)>& cdf) {
  if (sample.empty()) throw ConfigError("ks_test: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, f - static_cast<double>(i) / n,
                  static_cast<double>(i + 1) / n - f});
  }
  const double sn = std::sqrt(n);
  return {d, kolmogorov_tail((sn + 0.12 + 0.11 / sn) * d)};
}

inline KsResult ks_test_normal(std::vector<double> sample, double mean,
                               double variance) {
  const double sd = std::sqrt(variance);
  return ks_test(std::move(sample),
                 [=](double x) { return normal_cdf((x - mean) / sd); });
}

/// Two-sample Kolmogorov-Smirnov test.
inline KsResult ks_test_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw ConfigError("ks_test: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  const double na = static_cast<double>(a.size());
  const double nb = static_cast<double>(b.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(static_cast<double>(i) / na -
                             static_cast<double>(j) / nb));
  }
  const double ne = std::sqrt(na * nb / (na + nb));
  return {d, kolmogorov_tail((ne + 0.12 + 0.11 / ne) * d)};
}

struct ChiSquareResult {
  double statistic = 0.0;
  double dof = 0.0;
  double p_value = 1.0;
};

/// Pearson goodness of fit of a sample to N(mean, variance), using bins of
/// equal probability under the null.
inline ChiSquareResult chi_square_normal(std::span<const double> sample,
                                         double mean, double variance,
                                         std::size_t bins = 20) {
  if (sample.size() < 5 * bins) throw ConfigError("chi_square: sample too small");
  std::vector<double> counts(bins, 0.0);
  const double sd = std::sqrt(variance);
  for (double x : sample) {
    const double u = normal_cdf((x - mean) / sd);
    auto k = static_cast<std::size_t>(u * static_cast<double>(bins));
    counts[std::min(k, bins - 1)] += 1.0;
  }
  const double expected = static_cast<double>(sample.size()) / static_cast<double>(bins);
  double stat = 0.0;
  for (double c : counts) stat += (c - expected) * (c - expected) / expected;
  const double dof = static_cast<double>(bins - 1);
  return {stat, dof, boost::math::gamma_q(dof / 2.0, stat / 2.0)};
}

struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;
};

/// Ordinary least squares y = a + b x.
inline LinearFit ols(std::span<const double> x, std::span<const double> y) {
  require_dim(x.size(), y.size());
  if (x.size() < 2) throw ConfigError("ols: need at least two points");
  const double n = static_cast<double>(x.size());
  const double mx = mean_of(x), my = mean_of(y);
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    sxx += (x[k] - mx) * (x[k] - mx);
    sxy += (x[k] - mx) * (y[k] - my);
  }
  if (sxx == 0.0) throw ConfigError("ols: degenerate abscissae");
  LinearFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  if (x.size() > 2) {
    double rss = 0.0;
    for (std::size_t k = 0; k < x.size(); ++k) {
      const double r = y[k] - f.intercept - f.slope * x[k];
      rss += r * r;
    }
    f.slope_se = std::sqrt(rss / (n - 2.0) / sxx);
  }
  return f;
}

/// Least-squares quadratic c0 + c1 x + c2 x^2.
inline std::array<double, 3> fit_quadratic(std::span<const double> x,
                                           std::span<const double> y) {
  require_dim(x.size(), y.size());
  if (x.size() < 3) throw ConfigError("fit_quadratic: need at least three points");
  // Center for conditioning, then solve the 3x3 normal equations.
  const double c = mean_of(x);
  double a[3][4] = {};
  for (std::size_t k = 0; k < x.size(); ++k) {
    const double t = x[k] - c;
    const double p[3] = {1.0, t, t * t};
    for (int i = 0; i < 3; ++i) {
      for (int j = 0; j < 3; ++j) a[i][j] += p[i] * p[j];
      a[i][3] += p[i] * y[k];
    }
  }
  for (int i = 0; i < 3; ++i) {
    int piv = i;
    for (int r = i + 1; r < 3; ++r)
      if (std::abs(a[r][i]) > std::abs(a[piv][i])) piv = r;
    if (a[piv][i] == 0.0) throw ConfigError("fit_quadratic: singular system");
    for (int j = 0; j < 4; ++j) std::swap(a[i][j], a[piv][j]);
    for (int r = 0; r < 3; ++r) {
      if (r == i) continue;
      const double f = a[r][i] / a[i][i];
      for (int j = i; j < 4; ++j) a[r][j] -= f * a[i][j];
    }
  }
  const double b0 = a[0][3] / a[0][0], b1 = a[1][3] / a[1][1], b2 = a[2][3] / a[2][2];
  return {b0 - b1 * c + b2 * c * c, b1 - 2.0 * b2 * c, b2};
}

inline double eval_quadratic(const std::array<double, 3>& c, double x) {
  return c[0] + x * (c[1] + x * c[2]);
}

/// Maximizer of a unimodal f on [a, b].
inline double golden_section_max(const std::function<double(double)>& f,
                                 double a, double b, double tol = 1e-3) {
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double c = b - g * (b - a), d = a + g * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc > fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return 0.5 * (a + b);
}

inline double lag1_autocorrelation(std::span<const double> v) {
  if (v.size() < 3) return 0.0;
  const double m = mean_of(v);
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < v.size(); ++k) {
    den += (v[k] - m) * (v[k] - m);
    if (k + 1 < v.size()) num += (v[k] - m) * (v[k + 1] - m);
  }
  return den > 0.0 ? num / den : 0.0;
}

}  // namespace proxmala
