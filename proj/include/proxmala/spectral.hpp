#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "proxmala/errors.hpp"
#include "proxmala/random.hpp"

namespace proxmala {

/// Coordinates x_j = <x, phi_j> in the Karhunen-Loeve basis. Index 0 holds
/// the coefficient of phi_1.
class SpectralVector {
 public:
  SpectralVector() = default;
  explicit SpectralVector(std::size_t n, double fill = 0.0) : c_(n, fill) {}
  explicit SpectralVector(std::vector<double> c) : c_(std::move(c)) {}
  SpectralVector(std::initializer_list<double> c) : c_(c) {}

  std::size_t size() const noexcept { return c_.size(); }
  bool empty() const noexcept { return c_.empty(); }

  double& operator[](std::size_t i) noexcept { return c_[i]; }
  double operator[](std::size_t i) const noexcept { return c_[i]; }

  double* data() noexcept { return c_.data(); }
  const double* data() const noexcept { return c_.data(); }
  auto begin() noexcept { return c_.begin(); }
  auto end() noexcept { return c_.end(); }
  auto begin() const noexcept { return c_.begin(); }
  auto end() const noexcept { return c_.end(); }

  std::span<double> span() noexcept { return c_; }
  std::span<const double> span() const noexcept { return c_; }
  const std::vector<double>& coords() const noexcept { return c_; }

  bool all_finite() const noexcept {
    for (double v : c_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  friend bool operator==(const SpectralVector&, const SpectralVector&) = default;

 private:
  std::vector<double> c_;
};

/// Reference covariance C with eigenvalues lambda_j^2, lambda_j = j^{-kappa},
/// together with the Sobolev index s of the state space.
///
/// `identity(N)` gives C = I with s = 0, the geometry of product targets.
class CovarianceSpec {
 public:
  static CovarianceSpec spectral(double kappa, double s, std::size_t dim) {
    if (!(kappa > 0.5))
      throw ConfigError("kappa must satisfy kappa > 1/2 (got " +
                        std::to_string(kappa) + ")");
    if (!(s >= 0.0 && s < kappa - 0.5))
      throw ConfigError("s must satisfy 0 <= s < kappa - 1/2 (got s = " +
                        std::to_string(s) + ", kappa = " + std::to_string(kappa) + ")");
    if (dim == 0) throw ConfigError("dimension N must be positive");
    auto d = std::make_shared<Data>();
    d->lambda.resize(dim);
    d->lambda_sq.resize(dim);
    d->weight.resize(dim);
    d->inv_lambda_sq.resize(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      const double j = static_cast<double>(i + 1);
      d->lambda[i] = std::pow(j, -kappa);
      d->lambda_sq[i] = d->lambda[i] * d->lambda[i];
      d->weight[i] = std::pow(j, 2.0 * s);
      d->inv_lambda_sq[i] = 1.0 / d->lambda_sq[i];
    }
    return CovarianceSpec(kappa, s, false, std::move(d));
  }

  static CovarianceSpec identity(std::size_t dim) {
    if (dim == 0) throw ConfigError("dimension N must be positive");
    auto d = std::make_shared<Data>();
    d->lambda.assign(dim, 1.0);
    d->lambda_sq.assign(dim, 1.0);
    d->weight.assign(dim, 1.0);
    d->inv_lambda_sq.assign(dim, 1.0);
    return CovarianceSpec(0.0, 0.0, true, std::move(d));
  }

  double kappa() const noexcept { return kappa_; }
  double s() const noexcept { return s_; }
  std::size_t dim() const noexcept { return d_->lambda.size(); }
  bool is_product() const noexcept { return product_; }

  /// lambda_{i+1}.
  double lambda(std::size_t i) const noexcept { return d_->lambda[i]; }
  std::span<const double> lambdas() const noexcept { return d_->lambda; }
  std::span<const double> lambda_sq() const noexcept { return d_->lambda_sq; }
  std::span<const double> inv_lambda_sq() const noexcept { return d_->inv_lambda_sq; }
  /// Sobolev weights j^{2s}.
  std::span<const double> weights() const noexcept { return d_->weight; }

 private:
  struct Data {
    std::vector<double> lambda, lambda_sq, weight, inv_lambda_sq;
  };

  CovarianceSpec(double kappa, double s, bool product, std::shared_ptr<const Data> d)
      : kappa_(kappa), s_(s), product_(product), d_(std::move(d)) {}

  double kappa_;
  double s_;
  bool product_;
  std::shared_ptr<const Data> d_;
};

/// (sum_j j^{2r} x_j^2)^{1/2}.
inline double sobolev_norm(const SpectralVector& x, double r) {
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double w = r == 0.0 ? 1.0 : std::pow(static_cast<double>(i + 1), 2.0 * r);
    acc += w * x[i] * x[i];
  }
  return std::sqrt(acc);
}

/// ||x||_s^2 using the cached weights of `spec`.
inline double s_norm_sq(const SpectralVector& x, const CovarianceSpec& spec) {
  require_dim(spec.dim(), x.size());
  const auto w = spec.weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += w[i] * x[i] * x[i];
  return acc;
}

inline double s_norm(const SpectralVector& x, const CovarianceSpec& spec) {
  return std::sqrt(s_norm_sq(x, spec));
}

/// ||x||_{-s}, the norm in which gradients are measured.
inline double dual_norm(const SpectralVector& x, const CovarianceSpec& spec) {
  require_dim(spec.dim(), x.size());
  const auto w = spec.weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * x[i] / w[i];
  return std::sqrt(acc);
}

inline double c_norm_sq(std::span<const double> x, const CovarianceSpec& spec) {
  require_dim(spec.dim(), x.size());
  const auto il2 = spec.inv_lambda_sq();
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += x[i] * x[i] * il2[i];
  return acc;
}

inline double c_norm_sq(const SpectralVector& x, const CovarianceSpec& spec) {
  return c_norm_sq(x.span(), spec);
}

/// (sum_j lambda_j^{-2} x_j^2)^{1/2}.
inline double c_norm(const SpectralVector& x, const CovarianceSpec& spec) {
  return std::sqrt(c_norm_sq(x, spec));
}

/// Multiplies coordinate j by (lambda_j^2)^power.
inline SpectralVector apply_cov(const SpectralVector& x, const CovarianceSpec& spec,
                                double power) {
  require_dim(spec.dim(), x.size());
  SpectralVector out(x.size());
  if (power == 1.0) {
    const auto l2 = spec.lambda_sq();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = l2[i] * x[i];
  } else if (power == 0.5) {
    const auto l = spec.lambdas();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = l[i] * x[i];
  } else if (power == -1.0) {
    const auto l2 = spec.lambda_sq();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] / l2[i];
  } else {
    const auto l2 = spec.lambda_sq();
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::pow(l2[i], power) * x[i];
  }
  return out;
}

/// A draw from N(0, C): x_j = lambda_j xi_j.
inline SpectralVector sample_reference(const CovarianceSpec& spec, RandomStream& rng) {
  SpectralVector x(spec.dim());
  const auto l = spec.lambdas();
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = l[i] * rng.normal();
  return x;
}

/// Truncated trace sum_{j<=N} lambda_j^2 j^{2s}.
inline double trace_cs(const CovarianceSpec& spec) {
  const auto l2 = spec.lambda_sq();
  const auto w = spec.weights();
  double acc = 0.0;
  for (std::size_t i = 0; i < spec.dim(); ++i) acc += l2[i] * w[i];
  return acc;
}

}  // namespace proxmala
