#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "proxmala/errors.hpp"
#include "proxmala/random.hpp"
#include "proxmala/samplers.hpp"
#include "proxmala/spectral.hpp"
#include "proxmala/stats.hpp"
#include "proxmala/targets.hpp"

namespace proxmala {

/// Discretized path of dz = -h (z + C grad Psi(z)) dt + sqrt(2h) C^{1/2} dW.
struct SdePath {
  /// Recorded times, starting at 0 with spacing record_stride * dt.
  std::vector<double> times;
  std::vector<SpectralVector> states;
  double h_ell = 0.0;
  double dt = 0.0;
  std::size_t n_steps = 0;
  /// Per-coordinate moments over every step z_1..z_n, recorded or not.
  std::vector<RunningMoments> moments;
};

/// Largest per-coordinate linear rate 1 + lambda_j^2 max(j^{2s}, sup psi_j'').
inline double sde_stiffness(const TargetSpec& t) {
  const auto l2 = t.cov.lambda_sq();
  const auto w = t.cov.weights();
  double m = 0.0;
  for (std::size_t i = 0; i < t.dim(); ++i) {
    double c = w[i];
    if (t.kind == PsiKind::LogCosh && i < t.weights.size()) c = std::max(c, t.weights[i]);
    m = std::max(m, 1.0 + l2[i] * c);
  }
  return m;
}

/// Explicit Euler-Maruyama:
///   z_{k+1} = z_k + h mu(z_k) dt + sqrt(2 h dt) C^{1/2} xi_k.
/// Keeps z_0 and every record_stride-th state.
inline SdePath integrate(const TargetSpec& t, double h_ell, const SpectralVector& z0, double dt,
                         std::size_t n_steps, RandomStream& rng, std::size_t record_stride = 1) {
  require_dim(t.dim(), z0.size());
  if (!(h_ell >= 0.0) || !std::isfinite(h_ell)) throw ConfigError("h_ell must be finite and >= 0");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ConfigError("dt must be positive");
  if (record_stride < 1) throw ConfigError("record_stride must be >= 1");
  const double guard = dt * h_ell * sde_stiffness(t);
  if (!(guard < 0.5))
    throw ConfigError("Euler-Maruyama stability guard violated: dt*h*max rate = " +
                      std::to_string(guard) + " (must be < 0.5)");

  const std::size_t n = t.dim();
  const auto l = t.cov.lambdas();
  const auto l2 = t.cov.lambda_sq();
  const double hdt = h_ell * dt;
  const double sv = std::sqrt(2.0 * hdt);

  SdePath p;
  p.h_ell = h_ell;
  p.dt = dt;
  p.n_steps = n_steps;
  p.moments.resize(n);
  p.times.reserve(n_steps / record_stride + 1);
  p.states.reserve(n_steps / record_stride + 1);
  p.times.push_back(0.0);
  p.states.push_back(z0);

  SpectralVector z = z0, xi(n);
  for (std::size_t k = 1; k <= n_steps; ++k) {
    rng.fill_normal(xi.span());
    for (std::size_t i = 0; i < n; ++i) {
      const double mu = -(z[i] + l2[i] * psi_coord_grad(t, i, z[i]));
      z[i] += hdt * mu + sv * l[i] * xi[i];
      p.moments[i].add(z[i]);
    }
    if (k % record_stride == 0) {
      p.times.push_back(static_cast<double>(k) * dt);
      p.states.push_back(z);
    }
  }
  return p;
}

struct MarginalRow {
  std::size_t coord = 0;  ///< 1-based
  double chain_mean = 0.0, chain_var = 0.0;
  double sde_mean = 0.0, sde_var = 0.0;
  /// (chain_var - sde_var) / sde_var.
  double rel_var_gap = 0.0;
  /// Exact stationary variance when the target has a conjugate sampler.
  std::optional<double> exact_var;
};

/// Per-coordinate stationary moments of a chain against an SDE path.
inline std::vector<MarginalRow> marginal_compare(const ChainSummary& chain, const SdePath& path,
                                                 const std::vector<std::size_t>& coords,
                                                 const TargetSpec* target = nullptr) {
  std::vector<MarginalRow> out;
  for (std::size_t c : coords) {
    if (c < 1 || c > chain.coord_moments.size() || c > path.moments.size())
      throw ConfigError("marginal_compare: coordinate " + std::to_string(c) +
                        " is not tracked by both the chain and the path");
    const auto& a = chain.coord_moments[c - 1];
    const auto& b = path.moments[c - 1];
    MarginalRow r;
    r.coord = c;
    r.chain_mean = a.mean();
    r.chain_var = a.variance();
    r.sde_mean = b.mean();
    r.sde_var = b.variance();
    r.rel_var_gap = (r.chain_var - r.sde_var) / r.sde_var;
    if (target && has_exact_sampler(*target)) {
      const double sd = exact_sd(*target, c - 1);
      r.exact_var = sd * sd;
    }
    out.push_back(r);
  }
  return out;
}

}  // namespace proxmala
