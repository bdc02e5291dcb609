#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "proxmala/errors.hpp"
#include "proxmala/spectral.hpp"
#include "proxmala/targets.hpp"

namespace proxmala {

enum class ProxMethod {
  Auto,    ///< closed form when Psi is quadratic, Newton otherwise
  Newton,  ///< always iterate, even when a closed form exists
};

struct ProxOptions {
  double tol = 1e-12;
  int max_iterations = 100;
  ProxMethod method = ProxMethod::Auto;
};

struct ProxSolution {
  SpectralVector point;
  /// ||(x - p)/lambda - grad(p)||_{-s} in the weighted geometry.
  double residual = 0.0;
  int iterations = 0;
};

namespace detail {

/// Minimizes  f(y) + ||x - y||_s^2 / (2 lambda)  where
/// f(y) = Psi(y) + (include_reference ? 1/2 ||y||_C^2 : 0).
///
/// Coordinate j solves F(p) = w_j (p - x_j)/lambda + a_j p + psi_j'(p) = 0
/// with a_j = lambda_j^{-2} or 0. F is strictly increasing, so the root is
/// unique and bracketed by x_j and x_j - lambda F(x_j)/w_j.
class ProxSolver {
 public:
  ProxSolver(const TargetSpec& t, double lambda, bool include_reference,
             const ProxOptions& opt)
      : t_(t), lambda_(lambda), ref_(include_reference), opt_(opt) {
    if (!(lambda > 0.0) || !std::isfinite(lambda))
      throw ConfigError("prox parameter lambda must be positive (got " +
                        std::to_string(lambda) + ")");
    if (!(opt.tol > 0.0)) throw ConfigError("prox tolerance must be positive");
    if (opt.max_iterations < 1) throw ConfigError("prox max_iterations must be >= 1");
  }

  /// Writes the minimizer into `out`; returns the residual (NaN when not
  /// requested) and the max iteration count.
  std::pair<double, int> solve(std::span<const double> x, std::span<double> out,
                               bool want_residual = true) const {
    const std::size_t n = x.size();
    require_dim(t_.dim(), n);
    require_dim(n, out.size());
    const auto w = t_.cov.weights();
    const auto l2 = t_.cov.lambda_sq();

    if (t_.kind == PsiKind::Zero && !ref_) {
      std::copy(x.begin(), x.end(), out.begin());
      return {0.0, 0};
    }
    const bool closed = opt_.method == ProxMethod::Auto && t_.kind != PsiKind::LogCosh;
    if (closed) {
      if (t_.kind == PsiKind::QuadraticSobolev && !ref_) {
        for (std::size_t i = 0; i < n; ++i) out[i] = x[i] / (1.0 + lambda_);
      } else {
        for (std::size_t i = 0; i < n; ++i) {
          const double q = ref_ ? 1.0 / l2[i] : 0.0;
          const double c = psi_coord_curv(t_, i, 0.0);
          out[i] = w[i] * x[i] / (w[i] + lambda_ * (q + c));
        }
      }
      return {want_residual ? residual(x, out) : kNaN, 0};
    }

    const double coord_tol = opt_.tol / std::sqrt(static_cast<double>(n));
    int worst = 0;
    std::size_t failed = 0, first_failed = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto [p, it] = solve_coord(i, x[i], w[i], ref_ ? 1.0 / l2[i] : 0.0, coord_tol);
      out[i] = p;
      worst = std::max(worst, it);
      if (it > opt_.max_iterations && failed++ == 0) first_failed = i;
    }
    const double res = want_residual || failed > 0 ? residual(x, out) : kNaN;
    if (failed > 0)
      throw ConvergenceError("prox: " + std::to_string(failed) +
                                 " coordinate(s) did not converge in " +
                                 std::to_string(opt_.max_iterations) +
                                 " iterations (first: j = " + std::to_string(first_failed + 1) + ")",
                             std::vector<double>(out.begin(), out.end()), res);
    return {res, worst};
  }

  double residual(std::span<const double> x, std::span<const double> p) const {
    const auto w = t_.cov.weights();
    const auto l2 = t_.cov.lambda_sq();
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double a = ref_ ? 1.0 / l2[i] : 0.0;
      const double r = w[i] * (x[i] - p[i]) / lambda_ - a * p[i] - psi_coord_grad(t_, i, p[i]);
      acc += r * r / w[i];
    }
    return std::sqrt(acc);
  }

 private:
  static constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

  double eval(std::size_t i, double p, double x, double w, double a) const {
    return w * (p - x) / lambda_ + a * p + psi_coord_grad(t_, i, p);
  }

  /// Returns the root and the iteration count; a count above the cap marks
  /// failure and the root is then the best iterate seen.
  std::pair<double, int> solve_coord(std::size_t i, double x, double w, double a,
                                     double coord_tol) const {
    const double fx = eval(i, x, x, w, a);
    if (std::abs(fx) / std::sqrt(w) <= coord_tol) return {x, 0};
    // Bracket [lo, hi] with F(lo) <= 0 <= F(hi).
    double lo = x, hi = x;
    double width = lambda_ * std::abs(fx) / w;
    for (int k = 0; k < 60; ++k) {
      if (fx > 0.0) {
        lo = x - width;
        if (eval(i, lo, x, w, a) <= 0.0) break;
      } else {
        hi = x + width;
        if (eval(i, hi, x, w, a) >= 0.0) break;
      }
      width *= 2.0;
    }

    double p = x;
    double best = x, best_f = std::abs(fx);
    for (int it = 1; it <= opt_.max_iterations; ++it) {
      const double f = eval(i, p, x, w, a);
      if (std::abs(f) < best_f) {
        best = p;
        best_f = std::abs(f);
      }
      if (std::abs(f) / std::sqrt(w) <= coord_tol) return {p, it - 1};
      if (f > 0.0) hi = p; else lo = p;
      // Floating-point floor: the bracket cannot shrink further.
      if (hi - lo <= 4.0 * std::numeric_limits<double>::epsilon() *
                         std::max({1.0, std::abs(lo), std::abs(hi)}))
        return {best, it - 1};
      const double fp = w / lambda_ + a + psi_coord_curv(t_, i, p);
      // Newton correction below roundoff: F is at its floating-point floor.
      if (std::abs(f / fp) <= 2.0 * std::numeric_limits<double>::epsilon() * std::max(1.0, std::abs(p)))
        return {best, it - 1};
      double next = p - f / fp;
      if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
      p = next;
    }
    return {best, opt_.max_iterations + 1};
  }

  const TargetSpec& t_;
  double lambda_;
  bool ref_;
  ProxOptions opt_;
};

}  // namespace detail

/// argmin_y Psi(y) + ||x - y||_s^2 / (2 lambda).
inline ProxSolution prox(const TargetSpec& t, const SpectralVector& x, double lambda,
                         const ProxOptions& opt = {}) {
  detail::ProxSolver solver(t, lambda, false, opt);
  ProxSolution sol;
  sol.point = SpectralVector(x.size());
  std::tie(sol.residual, sol.iterations) = solver.solve(x.span(), sol.point.span());
  return sol;
}

inline ProxSolution prox(const TargetSpec& t, const SpectralVector& x, double lambda,
                         double tol) {
  ProxOptions opt;
  opt.tol = tol;
  return prox(t, x, lambda, opt);
}

/// Prox of the full potential U(y) = 1/2 ||y||_C^2 + Psi(y), same geometry.
/// On a product target with Psi = 0 this is x / (1 + lambda).
inline ProxSolution prox_potential(const TargetSpec& t, const SpectralVector& x,
                                   double lambda, const ProxOptions& opt = {}) {
  detail::ProxSolver solver(t, lambda, true, opt);
  ProxSolution sol;
  sol.point = SpectralVector(x.size());
  std::tie(sol.residual, sol.iterations) = solver.solve(x.span(), sol.point.span());
  return sol;
}

/// Psi(p) + ||p - x||_s^2 / (2 lambda) at the prox point p.
inline double moreau_envelope(const TargetSpec& t, const SpectralVector& x, double lambda,
                              const ProxOptions& opt = {}) {
  const auto sol = prox(t, x, lambda, opt);
  SpectralVector d(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) d[i] = sol.point[i] - x[i];
  return psi(t, sol.point) + s_norm_sq(d, t.cov) / (2.0 * lambda);
}

/// r^N(x, delta) = delta C (Prox^delta(x) - x).
inline SpectralVector prox_remainder(const TargetSpec& t, const SpectralVector& x,
                                     double delta, const ProxOptions& opt = {}) {
  const auto sol = prox(t, x, delta, opt);
  const auto l2 = t.cov.lambda_sq();
  SpectralVector r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) r[i] = delta * l2[i] * (sol.point[i] - x[i]);
  return r;
}

}  // namespace proxmala
