#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include <boost/math/distributions/normal.hpp>

#include "proxmala/errors.hpp"
#include "proxmala/random.hpp"
#include "proxmala/samplers.hpp"
#include "proxmala/spectral.hpp"
#include "proxmala/stats.hpp"
#include "proxmala/targets.hpp"

namespace proxmala {

// ---------------------------------------------------------------------------
// Limit acceptance and speed

/// alpha(ell) = E[1 ^ e^Z], Z ~ N(-ell^3/4, ell^3/2). Because -2 E Z = Var Z
/// this equals 2 Phi(-sigma/2) with sigma^2 = ell^3/2.
inline double limit_acceptance(double ell) {
  const double sigma = std::sqrt(ell * ell * ell / 2.0);
  return 2.0 * normal_cdf(-sigma / 2.0);
}

/// h(ell) = ell alpha(ell).
inline double limit_speed(double ell) { return ell * limit_acceptance(ell); }

/// Product-case speed 2 l^2 Phi(-(K/2) l^3), with delta proportional to l^2.
inline double product_speed(double l, double k) {
  return 2.0 * l * l * normal_cdf(-0.5 * k * l * l * l);
}

/// Plain Monte Carlo estimate of E[1 ^ e^Z] for Z ~ N(mean, var).
inline RunningMoments mc_gaussian_acceptance(double mean, double var, std::size_t n,
                                             RandomStream& rng) {
  RunningMoments m;
  const double sd = std::sqrt(var);
  for (std::size_t k = 0; k < n; ++k) m.add(std::min(1.0, std::exp(mean + sd * rng.normal())));
  return m;
}

/// u-hat maximizing u^{2/3} Phi(-u) and the acceptance 2 Phi(-u-hat).
inline std::pair<double, double> optimal_limit_acceptance() {
  const double u = golden_section_max(
      [](double v) { return std::pow(v, 2.0 / 3.0) * normal_cdf(-v); }, 1e-6, 5.0, 1e-10);
  return {u, 2.0 * normal_cdf(-u)};
}

/// Maximizer of h(ell) = ell alpha(ell) for the closed-form alpha.
inline double limit_ell_star() {
  return golden_section_max(limit_speed, 0.1, 5.0, 1e-10);
}

// ---------------------------------------------------------------------------
// Q decomposition

struct QDecomposition {
  double q = 0.0;
  double z = 0.0;
  double i = 0.0;
  double e = 0.0;
};

/// The four terms of Q with r(x) = m(x) - (x + delta mu(x)):
///   I1 = -1/2(|y|^2 - |x|^2) - (|x - (1-d)y|^2 - |y - (1-d)x|^2)/(4d)
///   I2 = -(Psi(y) - Psi(x)) - 1/2(<x - (1-d)y, grad Psi(y)> - <y - (1-d)x, grad Psi(x)>)
///   I3 = -(|d C grad Psi(y) - r(y)|^2 - |d C grad Psi(x) - r(x)|^2)/(4d)
///   I4 = (<x - (1-d)y, r(y)>_C - <y - (1-d)x, r(x)>_C)/(2d)
/// with all norms in the C metric. Their sum is Q for every variant with
/// innovation variance 2 delta.
struct QTerms {
  double i1 = 0.0, i2 = 0.0, i3 = 0.0, i4 = 0.0;
  double sum() const noexcept { return i1 + i2 + i3 + i4; }
};

inline QTerms q_terms(const TargetSpec& t, const ProposalConfig& cfg, const SpectralVector& x,
                      const SpectralVector& y) {
  if (cfg.variant == Variant::RWM)
    throw UnsupportedError("the I1..I4 split needs a Langevin-type proposal");
  require_dim(t.dim(), x.size());
  require_dim(t.dim(), y.size());
  const std::size_t n = x.size();
  const double d = cfg.delta();
  const auto l2 = t.cov.lambda_sq();
  ProposalConfig mala = cfg;
  mala.variant = Variant::MALA;
  const auto mx = proposal_mean(t, cfg, x), my = proposal_mean(t, cfg, y);
  const auto ax = proposal_mean(t, mala, x), ay = proposal_mean(t, mala, y);
  const auto gx = grad_psi(t, x), gy = grad_psi(t, y);

  QTerms q;
  double yy = 0, xx = 0, fa = 0, fb = 0, pa = 0, pb = 0, b3y = 0, b3x = 0, p4y = 0, p4x = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double u = x[i] - (1 - d) * y[i];  // x - (1-d) y
    const double v = y[i] - (1 - d) * x[i];  // y - (1-d) x
    const double ry = my[i] - ay[i], rx = mx[i] - ax[i];
    yy += y[i] * y[i] / l2[i];
    xx += x[i] * x[i] / l2[i];
    fa += u * u / l2[i];
    fb += v * v / l2[i];
    pa += u * gy[i];
    pb += v * gx[i];
    const double wy = d * l2[i] * gy[i] - ry, wx = d * l2[i] * gx[i] - rx;
    b3y += wy * wy / l2[i];
    b3x += wx * wx / l2[i];
    p4y += u * ry / l2[i];
    p4x += v * rx / l2[i];
  }
  q.i1 = -0.5 * (yy - xx) - (fa - fb) / (4 * d);
  q.i2 = -(psi(t, y) - psi(t, x)) - 0.5 * (pa - pb);
  q.i3 = -(b3y - b3x) / (4 * d);
  q.i4 = (p4y - p4x) / (2 * d);
  return q;
}

/// Z^N = -ell^3/4 - (ell^{3/2}/sqrt 2) N^{-1/2} sum lambda_j^{-1} xi_j x_j.
inline double z_term(const TargetSpec& t, const ProposalConfig& cfg, std::span<const double> x,
                     std::span<const double> xi) {
  const auto l = t.cov.lambdas();
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += xi[i] * x[i] / l[i];
  const double ell = cfg.ell;
  return -ell * ell * ell / 4.0 -
         std::pow(ell, 1.5) / std::numbers::sqrt2 * s / std::sqrt(static_cast<double>(x.size()));
}

/// i^N = 1/2 (ell dt)^2 (|x|_C^2 - |C^{1/2} xi|_C^2).
inline double i_term(const TargetSpec& t, const ProposalConfig& cfg, std::span<const double> x,
                     std::span<const double> xi) {
  double xi2 = 0.0;
  for (double v : xi) xi2 += v * v;
  const double d = cfg.ell * cfg.time_step();
  return 0.5 * d * d * (c_norm_sq(x, t.cov) - xi2);
}

namespace detail {

inline void require_one_third(const ProposalConfig& cfg) {
  if (std::abs(cfg.gamma - 1.0 / 3.0) > 1e-12)
    throw ConfigError("the Z/i/e decomposition assumes gamma = 1/3");
}

}  // namespace detail

/// Decomposes Q = Z + i + e for n_inner fresh innovations at fixed x. With
/// `verify_terms`, also checks I1 + I2 + I3 + I4 = Q to 1e-10.
inline std::vector<QDecomposition> qn_sample(const TargetSpec& t, const ProposalConfig& cfg,
                                             const SpectralVector& x, RandomStream& rng,
                                             std::size_t n_inner, bool verify_terms = false) {
  detail::require_one_third(cfg);
  MetropolisKernel k(t, cfg);
  k.reset(ChainState::at(t, x));
  std::vector<QDecomposition> out;
  out.reserve(n_inner);
  SpectralVector xi(x.size());
  for (std::size_t s = 0; s < n_inner; ++s) {
    rng.fill_normal(xi.span());
    const auto& r = k.evaluate(xi.span());
    QDecomposition d;
    d.q = r.q;
    d.z = z_term(t, cfg, x.span(), xi.span());
    d.i = i_term(t, cfg, x.span(), xi.span());
    d.e = d.q - d.z - d.i;
    if (verify_terms) {
      const double sum = q_terms(t, cfg, x, r.proposal).sum();
      if (!(std::abs(sum - d.q) <= 1e-10))
        throw Error("I1+I2+I3+I4 differs from Q by " + std::to_string(sum - d.q));
    }
    out.push_back(d);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Error rates of the Gaussian approximation

struct ErrorRateRow {
  std::size_t n = 0;
  RunningMoments abs_i, abs_e;
};

struct ErrorRateResult {
  LinearFit fit_i, fit_e;
  std::vector<ErrorRateRow> rows;
};

/// Regresses log E|i^N| and log E|e^N| on log N. Each sample uses its own
/// stationary x and innovation.
inline ErrorRateResult error_rate_regression(const std::function<TargetSpec(std::size_t)>& target_for,
                                             const ProposalConfig& cfg_template,
                                             const std::vector<std::size_t>& n_grid,
                                             std::size_t samples_per_n, std::uint64_t seed) {
  if (n_grid.size() < 4) throw ConfigError("error_rate_regression needs at least 4 grid points");
  for (std::size_t k = 1; k < n_grid.size(); ++k)
    if (n_grid[k] <= n_grid[k - 1]) throw ConfigError("n_grid must be increasing");
  if (samples_per_n < 2) throw ConfigError("samples_per_n must be >= 2");
  detail::require_one_third(cfg_template);

  ErrorRateResult res;
  std::vector<double> ln, li, le;
  for (std::size_t c = 0; c < n_grid.size(); ++c) {
    const std::size_t n = n_grid[c];
    const TargetSpec t = target_for(n);
    ProposalConfig cfg = cfg_template;
    cfg.dim = n;
    RandomStream rng(derive_seed(seed, c, 0, "error-rates"));
    MetropolisKernel k(t, cfg);
    ErrorRateRow row;
    row.n = n;
    SpectralVector xi(n);
    for (std::size_t s = 0; s < samples_per_n; ++s) {
      k.reset(ChainState::at(t, warm_start(t, rng)));
      rng.fill_normal(xi.span());
      const double q = k.evaluate(xi.span()).q;
      const auto& x = k.state().position;
      const double z = z_term(t, cfg, x.span(), xi.span());
      const double i = i_term(t, cfg, x.span(), xi.span());
      row.abs_i.add(std::abs(i));
      row.abs_e.add(std::abs(q - z - i));
    }
    ln.push_back(std::log(static_cast<double>(n)));
    li.push_back(std::log(row.abs_i.mean()));
    le.push_back(std::log(row.abs_e.mean()));
    res.rows.push_back(row);
  }
  res.fit_i = ols(ln, li);
  res.fit_e = ols(ln, le);
  return res;
}

// ---------------------------------------------------------------------------
// Acceptance curves and the optimal ell

struct OptimumEstimate {
  double ell_star = 0.0;
  double alpha_star = 0.0;
  double h_star = 0.0;
  std::size_t grid_argmax = 0;
  bool on_boundary = false;
};

/// Locates the maximizer of h = ell alpha from noisy grid values. Over the
/// contiguous run of points with h >= keep * max h, u = Phi^{-1}(alpha / 2) is
/// fitted by least squares quadratic in ell and ell * 2 Phi(u(ell)) is
/// maximized by golden-section search. A Gaussian log ratio with mean
/// -sigma^2/2 accepts with probability 2 Phi(-sigma/2), so u is close to
/// polynomial where alpha itself is not; a quadratic fit of h directly
/// underestimates alpha* by about 0.005 on the limit curve.
inline OptimumEstimate estimate_optimum(std::span<const double> ells, std::span<const double> alphas,
                                        double keep = 0.85) {
  require_dim(ells.size(), alphas.size());
  if (ells.size() < 3) throw ConfigError("optimum search needs at least 3 grid points");
  std::vector<double> h(ells.size());
  for (std::size_t k = 0; k < h.size(); ++k) h[k] = ells[k] * alphas[k];
  OptimumEstimate o;
  o.grid_argmax = static_cast<std::size_t>(std::max_element(h.begin(), h.end()) - h.begin());
  o.on_boundary = o.grid_argmax == 0 || o.grid_argmax + 1 == h.size();
  const double hmax = h[o.grid_argmax];

  std::size_t lo = o.grid_argmax, hi = o.grid_argmax;
  while (lo > 0 && h[lo - 1] >= keep * hmax) --lo;
  while (hi + 1 < h.size() && h[hi + 1] >= keep * hmax) ++hi;
  while (hi - lo < 2) {
    if (lo > 0) --lo;
    if (hi - lo < 2 && hi + 1 < h.size()) ++hi;
  }
  const auto xs = ells.subspan(lo, hi - lo + 1);
  const boost::math::normal std_normal;
  std::vector<double> us;
  for (std::size_t k = lo; k <= hi; ++k)
    us.push_back(boost::math::quantile(std_normal, std::clamp(alphas[k], 1e-12, 1.0) / 2.0));
  const auto cu = fit_quadratic(xs, us);
  const auto alpha_fit = [&](double v) { return 2.0 * normal_cdf(std::min(0.0, eval_quadratic(cu, v))); };
  o.ell_star = golden_section_max([&](double v) { return v * alpha_fit(v); }, xs.front(), xs.back(), 1e-5);
  o.alpha_star = alpha_fit(o.ell_star);
  o.h_star = o.ell_star * o.alpha_star;
  return o;
}

struct SpeedCurve {
  std::vector<double> ells;
  std::vector<double> alphas;
  std::vector<double> alpha_se;
  std::vector<double> speeds;
  double ell_star = 0.0;
  double alpha_at_star = 0.0;
  /// Index of the grid point with the largest speed.
  std::size_t grid_argmax = 0;
};

inline SpeedCurve make_speed_curve(std::vector<double> ells, std::vector<double> alphas,
                                   std::vector<double> se) {
  SpeedCurve c;
  c.ells = std::move(ells);
  c.alphas = std::move(alphas);
  c.alpha_se = std::move(se);
  c.speeds.resize(c.ells.size());
  for (std::size_t k = 0; k < c.ells.size(); ++k) c.speeds[k] = c.ells[k] * c.alphas[k];
  const auto o = estimate_optimum(c.ells, c.alphas);
  c.ell_star = o.ell_star;
  c.alpha_at_star = o.alpha_star;
  c.grid_argmax = o.grid_argmax;
  return c;
}

/// Fraction of accepted proposals with a batch-means standard error.
struct AcceptanceEstimate {
  double rate = 0.0;
  double se = 0.0;
  double mean_accept_prob = 0.0;
};

inline AcceptanceEstimate chain_acceptance(const TargetSpec& t, const ProposalConfig& cfg,
                                           std::size_t n_steps, RandomStream& rng) {
  std::vector<double> ind;
  ind.reserve(n_steps);
  const auto s = run_chain(t, cfg, n_steps, warm_start(t, rng), rng,
                           [&](const StepRecord& r, const ChainState&) {
                             ind.push_back(r.accepted ? 1.0 : 0.0);
                           });
  return {s.acceptance_rate, batch_means_se(ind), s.mean_accept_prob};
}

/// One stationary chain per ell; stream k seeded by (seed, k).
inline SpeedCurve acceptance_curve(const TargetSpec& t, Variant variant, const std::vector<double>& ells,
                                   double gamma, std::size_t n_steps, std::uint64_t seed) {
  if (n_steps < 10000) throw ConfigError("acceptance_curve needs n_steps >= 1e4 per ell");
  std::vector<double> a, se;
  for (std::size_t k = 0; k < ells.size(); ++k) {
    ProposalConfig cfg;
    cfg.variant = variant;
    cfg.ell = ells[k];
    cfg.gamma = gamma;
    cfg.dim = t.dim();
    RandomStream rng(derive_seed(seed, k, 0, "chain"));
    const auto est = chain_acceptance(t, cfg, n_steps, rng);
    a.push_back(est.rate);
    se.push_back(est.se);
  }
  return make_speed_curve(ells, std::move(a), std::move(se));
}

// ---------------------------------------------------------------------------
// Product Gaussian log ratio L_n

enum class LnRoute {
  FullVector,           ///< draw x, xi in R^N and evaluate the ratio directly
  SufficientStatistics  ///< draw (|x|^2, <x,xi>, |xi|^2) exactly; O(1) per sample
};

struct LnMoments {
  RunningMoments moments;
  double ks_p = 1.0;  ///< against N(sample mean, sample variance)
  std::vector<double> samples;
};

/// Linear factor a of the proposal mean a x on the standard product Gaussian.
inline double product_mean_factor(Variant v, double delta) {
  switch (v) {
    case Variant::MALA: return 1.0 - delta;
    case Variant::ProxPereyra: return 1.0 / (1.0 + delta);
    default: break;
  }
  throw UnsupportedError("product L_n moments are defined for mala and prox-pereyra");
}

/// Exact L_n from the sufficient statistics A = |x|^2, S = <x, xi>, B = |xi|^2:
/// with |y|^2 = a^2 A + 2 a sqrt(2d) S + 2 d B,
/// L = (|y|^2 - A)((1 - a^2)/(4d) - 1/2).
inline double ln_from_statistics(double a, double delta, double A, double S, double B) {
  const double y2 = a * a * A + 2.0 * a * std::sqrt(2.0 * delta) * S + 2.0 * delta * B;
  return (y2 - A) * ((1.0 - a * a) / (4.0 * delta) - 0.5);
}

/// Draws (A, S, B) for x, xi ~ N(0, I_N) independently.
inline std::array<double, 3> draw_product_statistics(std::size_t n, RandomStream& rng) {
  const double A = rng.chi_squared(static_cast<double>(n));
  const double S = std::sqrt(A) * rng.normal();
  const double B = S * S / A + (n > 1 ? rng.chi_squared(static_cast<double>(n - 1)) : 0.0);
  return {A, S, B};
}

inline LnMoments product_gaussian_ln_moments(Variant variant, std::size_t dim, double ell,
                                             std::size_t n_samples, RandomStream& rng,
                                             LnRoute route = LnRoute::FullVector) {
  ProposalConfig cfg;
  cfg.variant = variant;
  cfg.dim = dim;
  cfg.ell = ell;
  const double d = cfg.delta();
  const double a = product_mean_factor(variant, d);
  LnMoments out;
  out.samples.reserve(n_samples);
  if (route == LnRoute::FullVector) {
    const auto t = TargetSpec::zero(CovarianceSpec::identity(dim));
    MetropolisKernel k(t, cfg);
    SpectralVector x(dim), xi(dim);
    for (std::size_t s = 0; s < n_samples; ++s) {
      rng.fill_normal(x.span());
      k.reset(ChainState::at(t, x));
      rng.fill_normal(xi.span());
      out.samples.push_back(k.evaluate(xi.span()).q);
    }
  } else {
    for (std::size_t s = 0; s < n_samples; ++s) {
      const auto [A, S, B] = draw_product_statistics(dim, rng);
      out.samples.push_back(ln_from_statistics(a, d, A, S, B));
    }
  }
  for (double v : out.samples) out.moments.add(v);
  out.ks_p = ks_test_normal(out.samples, out.moments.mean(), out.moments.variance()).p_value;
  return out;
}

/// Exact finite-N mean of L_n: E[|y|^2 - A] = N(a^2 - 1 + 2 delta).
inline double product_ln_exact_mean(Variant v, std::size_t n, double ell) {
  ProposalConfig cfg;
  cfg.variant = v;
  cfg.dim = n;
  cfg.ell = ell;
  const double d = cfg.delta();
  const double a = product_mean_factor(v, d);
  return static_cast<double>(n) * (a * a - 1.0 + 2.0 * d) * ((1.0 - a * a) / (4.0 * d) - 0.5);
}

/// The delta^{3/2}, delta^2 and delta^{5/2} summand groups of the L_n
/// expansion, evaluated on sufficient statistics.
struct LnGroups {
  double g32 = 0.0, g2 = 0.0, g52 = 0.0;
};

inline LnGroups ln_expansion_groups(Variant v, double delta, double A, double S, double B) {
  const double r2 = std::numbers::sqrt2;
  switch (v) {
    case Variant::MALA:
      return {-std::pow(delta, 1.5) / r2 * S, 0.5 * delta * delta * (A - B),
              std::pow(delta, 2.5) / r2 * S};
    case Variant::ProxPereyra:
      return {-3.0 / r2 * std::pow(delta, 1.5) * S, 1.5 * delta * delta * (A - B),
              7.0 / r2 * std::pow(delta, 2.5) * S};
    default: break;
  }
  throw UnsupportedError("L_n expansion groups exist for mala and prox-pereyra");
}

// ---------------------------------------------------------------------------
// Local acceptance, drift and noise

/// alpha^N(x) = E_xi[1 ^ e^{Q(x, xi)}].
inline RunningMoments local_acceptance(const TargetSpec& t, const ProposalConfig& cfg,
                                       const SpectralVector& x, std::size_t n_inner,
                                       RandomStream& rng) {
  MetropolisKernel k(t, cfg);
  k.reset(ChainState::at(t, x));
  SpectralVector xi(x.size());
  RunningMoments m;
  for (std::size_t s = 0; s < n_inner; ++s) {
    rng.fill_normal(xi.span());
    m.add(k.evaluate(xi.span()).accept_prob);
  }
  return m;
}

namespace detail {

/// Rao-Blackwellized one-step moments at x. The expectation of the
/// displacement x' - x given the proposal y is alpha(x, y)(y - x), so each
/// innovation contributes that weighted displacement instead of a 0/1 draw.
/// Innovations come in antithetic pairs (xi, -xi); each pair is one sample.
template <class PairFn>
void for_each_antithetic(const TargetSpec& t, const ProposalConfig& cfg, const SpectralVector& x,
                         std::size_t n_inner, RandomStream& rng, bool force_reject, PairFn&& fn) {
  MetropolisKernel k(t, cfg);
  k.reset(ChainState::at(t, x));
  const std::size_t n = x.size();
  SpectralVector xi(n), neg(n), dp(n), dm(n);
  const std::size_t pairs = std::max<std::size_t>(1, n_inner / 2);
  for (std::size_t s = 0; s < pairs; ++s) {
    rng.fill_normal(xi.span());
    for (std::size_t i = 0; i < n; ++i) neg[i] = -xi[i];
    const auto& rp = k.evaluate(xi.span());
    const double ap = force_reject ? 0.0 : rp.accept_prob;
    for (std::size_t i = 0; i < n; ++i) dp[i] = rp.proposal[i] - x[i];
    const auto& rm = k.evaluate(neg.span());
    const double am = force_reject ? 0.0 : rm.accept_prob;
    for (std::size_t i = 0; i < n; ++i) dm[i] = rm.proposal[i] - x[i];
    fn(ap, dp, am, dm);
  }
}

inline double h_dt(const ProposalConfig& cfg) { return limit_speed(cfg.ell) * cfg.time_step(); }

}  // namespace detail

struct DriftEstimate {
  SpectralVector d;
  /// Per-coordinate variance of d divided by the number of pairs.
  SpectralVector var_of_mean;
};

/// d^N(x) = (h(ell) dt)^{-1} E[x^{1} - x^{0} | x^{0} = x].
inline DriftEstimate drift_estimate(const TargetSpec& t, const ProposalConfig& cfg,
                                    const SpectralVector& x, std::size_t n_inner, RandomStream& rng,
                                    bool force_reject = false) {
  const std::size_t n = x.size();
  const double scale = 1.0 / detail::h_dt(cfg);
  std::vector<RunningMoments> m(n);
  detail::for_each_antithetic(t, cfg, x, n_inner, rng, force_reject,
                              [&](double ap, const SpectralVector& dp, double am, const SpectralVector& dm) {
                                for (std::size_t i = 0; i < n; ++i)
                                  m[i].add(0.5 * scale * (ap * dp[i] + am * dm[i]));
                              });
  DriftEstimate out{SpectralVector(n), SpectralVector(n)};
  for (std::size_t i = 0; i < n; ++i) {
    out.d[i] = m[i].mean();
    out.var_of_mean[i] = m[i].count() > 1 ? m[i].variance() / static_cast<double>(m[i].count()) : 0.0;
  }
  return out;
}

/// Monte Carlo estimate of E^{pi^N} ||d^N - mu||_s^2. The squared error of
/// each noisy d-hat is corrected by its own estimated variance, which makes
/// the per-state term unbiased.
inline RunningMoments drift_error(const TargetSpec& t, const ProposalConfig& cfg, std::size_t n_states,
                                  std::size_t n_inner, RandomStream& rng) {
  RunningMoments err;
  const auto w = t.cov.weights();
  for (std::size_t k = 0; k < n_states; ++k) {
    const auto x = warm_start(t, rng);
    const auto est = drift_estimate(t, cfg, x, n_inner, rng);
    const auto mu = mu_n(t, x);
    double acc = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double g = est.d[i] - mu[i];
      acc += w[i] * (g * g - est.var_of_mean[i]);
    }
    err.add(acc);
  }
  return err;
}

struct CovEntry {
  std::size_t i = 0, j = 0;  ///< 1-based basis indices
  double value = 0.0;
  double se = 0.0;
  double limit = 0.0;  ///< entry of C_s in the normalized H^s basis
};

/// Entries <phi^_i, D^N(x) phi^_j>_s with phi^_j = j^{-s} phi_j, i.e.
/// i^s j^s Cov(x'_i - x_i, x'_j - x_j) / (2 h dt).
inline std::vector<CovEntry> noise_covariance(const TargetSpec& t, const ProposalConfig& cfg,
                                              const SpectralVector& x, std::size_t n_inner,
                                              RandomStream& rng,
                                              const std::vector<std::pair<std::size_t, std::size_t>>& idx,
                                              bool force_reject = false) {
  for (const auto& [i, j] : idx)
    if (i < 1 || j < 1 || i > t.dim() || j > t.dim()) throw ConfigError("noise_covariance index out of range");
  const double norm = 1.0 / (2.0 * detail::h_dt(cfg));
  std::vector<std::size_t> coords;
  for (const auto& [i, j] : idx) {
    coords.push_back(i - 1);
    coords.push_back(j - 1);
  }
  std::sort(coords.begin(), coords.end());
  coords.erase(std::unique(coords.begin(), coords.end()), coords.end());
  std::vector<RunningMoments> m1(t.dim()), m2(idx.size());
  detail::for_each_antithetic(t, cfg, x, n_inner, rng, force_reject,
                              [&](double ap, const SpectralVector& dp, double am, const SpectralVector& dm) {
                                for (std::size_t c : coords) m1[c].add(0.5 * (ap * dp[c] + am * dm[c]));
                                for (std::size_t k = 0; k < idx.size(); ++k) {
                                  const auto i = idx[k].first - 1, j = idx[k].second - 1;
                                  m2[k].add(0.5 * (ap * dp[i] * dp[j] + am * dm[i] * dm[j]));
                                }
                              });
  const auto w = t.cov.weights();
  const auto l2 = t.cov.lambda_sq();
  std::vector<CovEntry> out;
  for (std::size_t k = 0; k < idx.size(); ++k) {
    const auto i = idx[k].first - 1, j = idx[k].second - 1;
    const double sij = std::sqrt(w[i] * w[j]);
    CovEntry e;
    e.i = i + 1;
    e.j = j + 1;
    e.value = sij * norm * (m2[k].mean() - m1[i].mean() * m1[j].mean());
    e.se = sij * norm * m2[k].stderr_mean();
    e.limit = i == j ? l2[i] * w[i] : 0.0;
    out.push_back(e);
  }
  return out;
}

/// Average of noise_covariance over stationary states.
inline std::vector<CovEntry> mean_noise_covariance(
    const TargetSpec& t, const ProposalConfig& cfg, std::size_t n_states, std::size_t n_inner,
    RandomStream& rng, const std::vector<std::pair<std::size_t, std::size_t>>& idx) {
  std::vector<RunningMoments> v(idx.size());
  std::vector<CovEntry> out;
  for (std::size_t s = 0; s < n_states; ++s) {
    const auto e = noise_covariance(t, cfg, warm_start(t, rng), n_inner, rng, idx);
    if (out.empty()) out = e;
    for (std::size_t k = 0; k < e.size(); ++k) v[k].add(e[k].value);
  }
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k].value = v[k].mean();
    out[k].se = v[k].stderr_mean();
  }
  return out;
}

// ---------------------------------------------------------------------------
// Invariance principle

struct IncrementCheck {
  std::size_t coord = 0;  ///< 1-based
  double ks_p = 1.0;      ///< block increments vs their fitted normal
  double lag1 = 0.0;
  double mean = 0.0;
  double mean_se = 0.0;
  /// Sample variance over (block dt) lambda_j^2 j^{2s}.
  double variance_ratio = 0.0;
  std::size_t n_blocks = 0;
};

/// Accumulates W^N increments sqrt(dt) sum Gamma^k over blocks of `block`
/// steps, Gamma^k = (2 h dt)^{-1/2}(x^{k+1} - x^k - h dt mu(x^k)), in the
/// normalized H^s basis.
inline std::vector<IncrementCheck> invariance_principle_probe(const TargetSpec& t, const ProposalConfig& cfg,
                                                              std::size_t n_steps, std::size_t block,
                                                              RandomStream& rng, std::size_t n_coords = 3) {
  if (block < 1 || n_steps < 10 * block) throw ConfigError("invariance probe needs n_steps >= 10 blocks");
  n_coords = std::min(n_coords, t.dim());
  const double hdt = detail::h_dt(cfg);
  const double dt = cfg.time_step();
  const double g = std::sqrt(dt) / std::sqrt(2.0 * hdt);
  const auto w = t.cov.weights();
  const auto l2 = t.cov.lambda_sq();

  MetropolisKernel k(t, cfg);
  k.reset(ChainState::at(t, warm_start(t, rng)));
  std::vector<std::vector<double>> inc(n_coords);
  std::vector<double> acc(n_coords, 0.0), prev(n_coords);
  const std::size_t n_blocks = n_steps / block;
  for (std::size_t b = 0; b < n_blocks; ++b) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t s = 0; s < block; ++s) {
      const auto& x = k.state().position;
      for (std::size_t c = 0; c < n_coords; ++c)
        prev[c] = x[c] + hdt * -(x[c] + l2[c] * psi_coord_grad(t, c, x[c]));
      k.step(rng);
      const auto& y = k.state().position;
      for (std::size_t c = 0; c < n_coords; ++c) acc[c] += g * std::sqrt(w[c]) * (y[c] - prev[c]);
    }
    for (std::size_t c = 0; c < n_coords; ++c) inc[c].push_back(acc[c]);
  }
  std::vector<IncrementCheck> out;
  for (std::size_t c = 0; c < n_coords; ++c) {
    IncrementCheck r;
    r.coord = c + 1;
    RunningMoments m;
    for (double v : inc[c]) m.add(v);
    r.mean = m.mean();
    r.mean_se = m.stderr_mean();
    r.lag1 = lag1_autocorrelation(inc[c]);
    r.variance_ratio = m.variance() / (static_cast<double>(block) * dt * l2[c] * w[c]);
    r.ks_p = ks_test_normal(inc[c], m.mean(), m.variance()).p_value;
    r.n_blocks = n_blocks;
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Proximal versus gradient proposals

struct GapRow {
  double delta = 0.0;
  RunningMoments gap;  ///< ||y_variant - y_MALA||_s with shared innovations
};

struct GapResult {
  LinearFit fit;
  std::vector<GapRow> rows;
};

/// Regresses log E||y_variant - y_MALA||_s on log delta. The same stationary
/// states and innovations are reused at every delta.
inline GapResult proposal_gap_regression(const TargetSpec& t, Variant variant,
                                         const std::vector<double>& deltas, std::size_t n_samples,
                                         std::uint64_t seed) {
  if (deltas.size() < 2) throw ConfigError("gap regression needs at least two deltas");
  RandomStream rng(derive_seed(seed, 0, 0, "gap"));
  std::vector<SpectralVector> xs, xis;
  for (std::size_t s = 0; s < n_samples; ++s) {
    xs.push_back(warm_start(t, rng));
    SpectralVector xi(t.dim());
    rng.fill_normal(xi.span());
    xis.push_back(std::move(xi));
  }
  GapResult res;
  std::vector<double> ld, lg;
  for (double d : deltas) {
    ProposalConfig base;
    base.dim = t.dim();
    base = base.with_delta(d);
    ProposalConfig pv = base;
    pv.variant = variant;
    pv.validate(t);
    GapRow row;
    row.delta = d;
    SpectralVector diff(t.dim());
    for (std::size_t s = 0; s < n_samples; ++s) {
      const auto a = propose_with(t, pv, xs[s], xis[s]);
      const auto b = propose_with(t, base, xs[s], xis[s]);
      for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a[i] - b[i];
      row.gap.add(s_norm(diff, t.cov));
    }
    ld.push_back(std::log(d));
    lg.push_back(std::log(row.gap.mean()));
    res.rows.push_back(row);
  }
  res.fit = ols(ld, lg);
  return res;
}

/// Mean over stationary x of | ||y||_C^2 - ||y_MALA||_C^2 | with shared
/// innovations, where y is the proposal of cfg.variant.
inline RunningMoments a_n_probe(const TargetSpec& t, const ProposalConfig& cfg, std::size_t n_samples,
                                RandomStream& rng) {
  ProposalConfig mala = cfg;
  mala.variant = Variant::MALA;
  RunningMoments m;
  SpectralVector xi(t.dim());
  for (std::size_t s = 0; s < n_samples; ++s) {
    const auto x = warm_start(t, rng);
    rng.fill_normal(xi.span());
    m.add(std::abs(c_norm_sq(propose_with(t, cfg, x, xi), t.cov) -
                   c_norm_sq(propose_with(t, mala, x, xi), t.cov)));
  }
  return m;
}

}  // namespace proxmala
