#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <string_view>
#include <vector>

#include "proxmala/errors.hpp"
#include "proxmala/random.hpp"
#include "proxmala/spectral.hpp"

namespace proxmala {

enum class PsiKind { Zero, QuadraticSobolev, LogCosh };

inline std::string_view to_string(PsiKind k) {
  switch (k) {
    case PsiKind::Zero: return "zero";
    case PsiKind::QuadraticSobolev: return "quadratic";
    case PsiKind::LogCosh: return "logcosh";
  }
  return "?";
}

/// Change of measure exp(-Psi) relative to N(0, C), truncated to X^N.
///
/// Every shipped Psi is a sum of per-coordinate terms psi_j(x_j), which the
/// prox solver relies on.
struct TargetSpec {
  CovarianceSpec cov;
  PsiKind kind = PsiKind::Zero;
  /// LogCosh weights w_1..w_J; J = weights.size() is the cutoff.
  std::vector<double> weights;

  static TargetSpec zero(CovarianceSpec c) { return {std::move(c), PsiKind::Zero, {}}; }
  static TargetSpec quadratic(CovarianceSpec c) {
    return {std::move(c), PsiKind::QuadraticSobolev, {}};
  }
  static TargetSpec log_cosh(CovarianceSpec c, std::vector<double> w) {
    if (w.size() > c.dim())
      throw ConfigError("logcosh cutoff J = " + std::to_string(w.size()) +
                        " exceeds N = " + std::to_string(c.dim()));
    for (double v : w)
      if (!(v >= 0.0) || !std::isfinite(v))
        throw ConfigError("logcosh weights must be finite and nonnegative");
    return {std::move(c), PsiKind::LogCosh, std::move(w)};
  }

  std::size_t dim() const noexcept { return cov.dim(); }
};

/// d psi_j / d x_j at coordinate index i (0-based).
inline double psi_coord_grad(const TargetSpec& t, std::size_t i, double p) {
  switch (t.kind) {
    case PsiKind::Zero: return 0.0;
    case PsiKind::QuadraticSobolev: return t.cov.weights()[i] * p;
    case PsiKind::LogCosh: return i < t.weights.size() ? t.weights[i] * std::tanh(p) : 0.0;
  }
  return 0.0;
}

/// Second derivative of psi_j.
inline double psi_coord_curv(const TargetSpec& t, std::size_t i, double p) {
  switch (t.kind) {
    case PsiKind::Zero: return 0.0;
    case PsiKind::QuadraticSobolev: return t.cov.weights()[i];
    case PsiKind::LogCosh: {
      if (i >= t.weights.size()) return 0.0;
      const double c = std::cosh(p);
      return t.weights[i] / (c * c);
    }
  }
  return 0.0;
}

namespace detail {

/// log cosh without overflow for large |u|.
inline double log_cosh(double u) {
  const double a = std::abs(u);
  return a + std::log1p(std::exp(-2.0 * a)) - std::log(2.0);
}

}  // namespace detail

inline double psi(const TargetSpec& t, const SpectralVector& x) {
  require_dim(t.dim(), x.size());
  switch (t.kind) {
    case PsiKind::Zero: return 0.0;
    case PsiKind::QuadraticSobolev: return 0.5 * s_norm_sq(x, t.cov);
    case PsiKind::LogCosh: {
      double acc = 0.0;
      for (std::size_t i = 0; i < t.weights.size(); ++i)
        if (t.weights[i] != 0.0) acc += t.weights[i] * detail::log_cosh(x[i]);
      return acc;
    }
  }
  return 0.0;
}

/// Coordinates of grad Psi(x) in the H^{-s}-identified basis.
inline SpectralVector grad_psi(const TargetSpec& t, const SpectralVector& x) {
  require_dim(t.dim(), x.size());
  SpectralVector g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) g[i] = psi_coord_grad(t, i, x[i]);
  return g;
}

/// Unnormalized log pi^N(x) = -1/2 ||x||_C^2 - Psi(x).
inline double log_target(const TargetSpec& t, const SpectralVector& x) {
  return -0.5 * c_norm_sq(x, t.cov) - psi(t, x);
}

/// mu^N(x) = -(x + C grad Psi(x)).
inline SpectralVector mu_n(const TargetSpec& t, const SpectralVector& x) {
  require_dim(t.dim(), x.size());
  const auto l2 = t.cov.lambda_sq();
  SpectralVector m(x.size());
  for (std::size_t i = 0; i < x.size(); ++i)
    m[i] = -(x[i] + l2[i] * psi_coord_grad(t, i, x[i]));
  return m;
}

/// Stationary standard deviation of coordinate i for the Gaussian targets.
inline double exact_sd(const TargetSpec& t, std::size_t i) {
  const double l2 = t.cov.lambda_sq()[i];
  switch (t.kind) {
    case PsiKind::Zero: return std::sqrt(l2);
    case PsiKind::QuadraticSobolev: return std::sqrt(1.0 / (1.0 / l2 + t.cov.weights()[i]));
    case PsiKind::LogCosh: break;
  }
  throw UnsupportedError("no conjugate sampler for the logcosh target");
}

inline bool has_exact_sampler(const TargetSpec& t) noexcept {
  return t.kind != PsiKind::LogCosh;
}

/// Exact draw from pi^N for the Gaussian-conjugate targets.
inline SpectralVector exact_sample(const TargetSpec& t, RandomStream& rng) {
  if (!has_exact_sampler(t))
    throw UnsupportedError("no conjugate sampler for the logcosh target; use warm_start");
  SpectralVector x(t.dim());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = exact_sd(t, i) * rng.normal();
  return x;
}

/// Bound M6 on the Hessian of Psi as a map H^s -> H^{-s}.
inline double curvature_bound(const TargetSpec& t) {
  switch (t.kind) {
    case PsiKind::Zero: return 0.0;
    case PsiKind::QuadraticSobolev: return 1.0;
    case PsiKind::LogCosh: {
      double m = 0.0;
      for (std::size_t i = 0; i < t.weights.size(); ++i)
        m = std::max(m, t.weights[i] / t.cov.weights()[i]);
      return m;
    }
  }
  return 0.0;
}

}  // namespace proxmala
