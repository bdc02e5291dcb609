#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "proxmala/errors.hpp"
#include "proxmala/prox.hpp"
#include "proxmala/random.hpp"
#include "proxmala/spectral.hpp"
#include "proxmala/stats.hpp"
#include "proxmala/targets.hpp"

namespace proxmala {

enum class Variant { RWM, MALA, ProxCanonical, ProxDirect, ProxPereyra };

inline std::string_view to_string(Variant v) {
  switch (v) {
    case Variant::RWM: return "rwm";
    case Variant::MALA: return "mala";
    case Variant::ProxCanonical: return "prox-canonical";
    case Variant::ProxDirect: return "prox-direct";
    case Variant::ProxPereyra: return "prox-pereyra";
  }
  return "?";
}

inline std::optional<Variant> parse_variant(std::string_view s) {
  for (Variant v : {Variant::RWM, Variant::MALA, Variant::ProxCanonical,
                    Variant::ProxDirect, Variant::ProxPereyra})
    if (s == to_string(v)) return v;
  return std::nullopt;
}

inline bool uses_prox(Variant v) noexcept {
  return v == Variant::ProxCanonical || v == Variant::ProxDirect || v == Variant::ProxPereyra;
}

/// Proposal family and its scaling. The step is delta = ell N^{-gamma}.
///
/// Product targets are expressed through the target's covariance
/// (CovarianceSpec::identity), not through a flag here.
struct ProposalConfig {
  Variant variant = Variant::MALA;
  double ell = 1.0;
  double gamma = 1.0 / 3.0;
  std::size_t dim = 0;
  /// Experimental: prox parameter other than delta.
  std::optional<double> lambda_override;
  /// Keep the Gaussian normalizer in log proposal densities.
  bool normalized_density = false;
  ProxOptions prox;

  double delta() const { return ell * std::pow(static_cast<double>(dim), -gamma); }
  double time_step() const { return std::pow(static_cast<double>(dim), -gamma); }
  double lambda() const { return lambda_override.value_or(delta()); }
  /// Variance factor of the innovation: delta for RWM, 2 delta otherwise.
  double innovation_variance() const {
    return variant == Variant::RWM ? delta() : 2.0 * delta();
  }

  /// Same config with ell chosen so that delta() equals `d`.
  ProposalConfig with_delta(double d) const {
    ProposalConfig c = *this;
    c.ell = d / time_step();
    return c;
  }

  void validate(const TargetSpec& t) const {
    if (dim != t.dim())
      throw ConfigError("proposal dimension " + std::to_string(dim) +
                        " does not match target dimension " + std::to_string(t.dim()));
    if (!(ell > 0.0) || !std::isfinite(ell))
      throw ConfigError("ell must be positive (got " + std::to_string(ell) + ")");
    if (!std::isfinite(gamma)) throw ConfigError("gamma must be finite");
    const double d = delta();
    if (!(d > 0.0) || !std::isfinite(d)) throw ConfigError("step delta must be positive");
    if (lambda_override && !(*lambda_override > 0.0))
      throw ConfigError("lambda override must be positive");
    if (uses_prox(variant)) {
      const double m6 = curvature_bound(t);
      if (m6 > 0.0 && !(lambda() < 1.0 / (2.0 * m6)))
        throw ConfigError("prox variants need delta < 1/(2 M6) = " +
                          std::to_string(1.0 / (2.0 * m6)) + " (got " +
                          std::to_string(lambda()) + ")");
    }
    if (variant == Variant::ProxPereyra && !t.cov.is_product())
      throw ConfigError("prox-pereyra is defined for product targets (identity covariance) only");
  }
};

namespace detail {

/// m(x) for the configured variant. `scratch` holds the prox point.
inline void proposal_mean_into(const TargetSpec& t, const ProposalConfig& cfg,
                               std::span<const double> x, std::span<double> out,
                               std::span<double> scratch) {
  const std::size_t n = x.size();
  const double d = cfg.delta();
  const auto l2 = t.cov.lambda_sq();
  switch (cfg.variant) {
    case Variant::RWM:
      std::copy(x.begin(), x.end(), out.begin());
      return;
    case Variant::MALA:
      for (std::size_t i = 0; i < n; ++i)
        out[i] = x[i] - d * (x[i] + l2[i] * psi_coord_grad(t, i, x[i]));
      return;
    case Variant::ProxCanonical: {
      ProxSolver(t, cfg.lambda(), false, cfg.prox).solve(x, scratch, false);
      for (std::size_t i = 0; i < n; ++i)
        out[i] = x[i] - d * (x[i] + l2[i] * psi_coord_grad(t, i, x[i])) +
                 d * l2[i] * (scratch[i] - x[i]);
      return;
    }
    case Variant::ProxDirect: {
      ProxSolver(t, cfg.lambda(), false, cfg.prox).solve(x, scratch, false);
      for (std::size_t i = 0; i < n; ++i)
        out[i] = (1.0 - d - l2[i]) * x[i] + l2[i] * scratch[i];
      return;
    }
    case Variant::ProxPereyra:
      ProxSolver(t, cfg.lambda(), true, cfg.prox).solve(x, out, false);
      return;
  }
}

/// -||to - mean||_C^2 / (2 var), plus the normalizer when requested.
inline double log_kernel(const TargetSpec& t, const ProposalConfig& cfg,
                         std::span<const double> mean, std::span<const double> to) {
  const auto il2 = t.cov.inv_lambda_sq();
  const double var = cfg.innovation_variance();
  double acc = 0.0;
  for (std::size_t i = 0; i < to.size(); ++i) {
    const double r = to[i] - mean[i];
    acc += r * r * il2[i];
  }
  double out = -acc / (2.0 * var);
  if (cfg.normalized_density) {
    double logdet = 0.0;
    for (double v : t.cov.lambda_sq()) logdet += std::log(v);
    out -= 0.5 * (static_cast<double>(to.size()) * std::log(2.0 * std::numbers::pi * var) + logdet);
  }
  return out;
}

}  // namespace detail

/// Deterministic part m(x) of the proposal.
inline SpectralVector proposal_mean(const TargetSpec& t, const ProposalConfig& cfg,
                                    const SpectralVector& x) {
  require_dim(t.dim(), x.size());
  SpectralVector m(x.size()), scratch(x.size());
  detail::proposal_mean_into(t, cfg, x.span(), m.span(), scratch.span());
  return m;
}

/// y = m(x) + sqrt(var) C^{1/2} xi for a given standard-normal xi.
inline SpectralVector propose_with(const TargetSpec& t, const ProposalConfig& cfg,
                                   const SpectralVector& x, const SpectralVector& xi) {
  require_dim(x.size(), xi.size());
  SpectralVector y = proposal_mean(t, cfg, x);
  const double sv = std::sqrt(cfg.innovation_variance());
  const auto l = t.cov.lambdas();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] += sv * l[i] * xi[i];
  return y;
}

inline SpectralVector propose(const TargetSpec& t, const ProposalConfig& cfg,
                              const SpectralVector& x, RandomStream& rng) {
  SpectralVector xi(x.size());
  rng.fill_normal(xi.span());
  return propose_with(t, cfg, x, xi);
}

/// log T(from, to), unnormalized unless cfg.normalized_density.
inline double log_proposal_density(const TargetSpec& t, const ProposalConfig& cfg,
                                   const SpectralVector& from, const SpectralVector& to) {
  require_dim(t.dim(), from.size());
  require_dim(t.dim(), to.size());
  const auto m = proposal_mean(t, cfg, from);
  return detail::log_kernel(t, cfg, m.span(), to.span());
}

/// Q(x, y) = log pi(y) - log pi(x) + log T(y, x) - log T(x, y).
inline double log_accept_ratio(const TargetSpec& t, const ProposalConfig& cfg,
                               const SpectralVector& x, const SpectralVector& y) {
  return log_target(t, y) - log_target(t, x) + log_proposal_density(t, cfg, y, x) -
         log_proposal_density(t, cfg, x, y);
}

struct ChainState {
  SpectralVector position;
  double log_target_cache = 0.0;
  std::size_t step_index = 0;
  std::size_t accept_count = 0;

  static ChainState at(const TargetSpec& t, SpectralVector x) {
    ChainState s;
    s.log_target_cache = log_target(t, x);
    s.position = std::move(x);
    return s;
  }
};

/// One Metropolis-Hastings transition. The vectors are owned buffers reused
/// across steps by MetropolisKernel.
struct StepRecord {
  std::size_t step = 0;
  SpectralVector from;
  SpectralVector innovation;
  SpectralVector proposal;
  double q = 0.0;
  double accept_prob = 0.0;
  bool accepted = false;
  /// ||y - x||_s for the proposal y.
  double jump_norm_s = 0.0;
};

/// Stateful MH driver with cached proposal means. One kernel per chain.
class MetropolisKernel {
 public:
  MetropolisKernel(TargetSpec t, ProposalConfig cfg) : t_(std::move(t)), cfg_(std::move(cfg)) {
    cfg_.validate(t_);
    const std::size_t n = t_.dim();
    mean_x_ = SpectralVector(n);
    mean_y_ = SpectralVector(n);
    scratch_ = SpectralVector(n);
    rec_.from = SpectralVector(n);
    rec_.innovation = SpectralVector(n);
    rec_.proposal = SpectralVector(n);
  }

  const TargetSpec& target() const noexcept { return t_; }
  const ProposalConfig& config() const noexcept { return cfg_; }

  /// When set, every proposal is rejected (degenerate control runs).
  void set_force_reject(bool v) noexcept { force_reject_ = v; }

  /// Adopts `s` as the current state and refreshes the cached mean.
  void reset(ChainState s) {
    require_dim(t_.dim(), s.position.size());
    state_ = std::move(s);
    refresh();
  }

  const ChainState& state() const noexcept { return state_; }
  ChainState& mutable_state() noexcept { return state_; }

  /// Recomputes cached quantities after external edits of the state.
  void refresh() {
    state_.log_target_cache = log_target(t_, state_.position);
    detail::proposal_mean_into(t_, cfg_, state_.position.span(), mean_x_.span(), scratch_.span());
  }

  /// Proposes with the given innovation and computes Q without moving.
  const StepRecord& evaluate(std::span<const double> xi) {
    const std::size_t n = t_.dim();
    const auto l = t_.cov.lambdas();
    const double sv = std::sqrt(cfg_.innovation_variance());
    std::copy(state_.position.begin(), state_.position.end(), rec_.from.begin());
    if (xi.data() != rec_.innovation.data())
      std::copy(xi.begin(), xi.end(), rec_.innovation.begin());
    for (std::size_t i = 0; i < n; ++i) rec_.proposal[i] = mean_x_[i] + sv * l[i] * xi[i];

    detail::proposal_mean_into(t_, cfg_, rec_.proposal.span(), mean_y_.span(), scratch_.span());
    log_pi_y_ = log_target(t_, rec_.proposal);
    const double fwd = detail::log_kernel(t_, cfg_, mean_x_.span(), rec_.proposal.span());
    const double bwd = detail::log_kernel(t_, cfg_, mean_y_.span(), state_.position.span());
    rec_.q = log_pi_y_ - state_.log_target_cache + bwd - fwd;
    rec_.accept_prob = rec_.q >= 0.0 ? 1.0 : std::exp(rec_.q);

    const auto w = t_.cov.weights();
    double j2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = rec_.proposal[i] - state_.position[i];
      j2 += w[i] * d * d;
    }
    rec_.jump_norm_s = std::sqrt(j2);
    rec_.accepted = false;
    rec_.step = state_.step_index;
    return rec_;
  }

  /// Full step: fresh innovation, proposal, accept with one uniform.
  const StepRecord& step(RandomStream& rng) {
    rng.fill_normal(rec_.innovation.span());
    evaluate(rec_.innovation.span());
    const double u = rng.uniform();
    decide(u);
    return rec_;
  }

  /// Accepts the evaluated proposal iff u < 1 ^ e^Q.
  void decide(double u) {
    rec_.accepted = !force_reject_ && u < rec_.accept_prob;
    if (rec_.accepted) {
      std::swap(state_.position, rec_.proposal);
      std::swap(mean_x_, mean_y_);
      state_.log_target_cache = log_pi_y_;
      ++state_.accept_count;
      // Keep rec_.proposal meaningful for callers.
      std::copy(state_.position.begin(), state_.position.end(), rec_.proposal.begin());
    }
    ++state_.step_index;
  }

  const SpectralVector& current_mean() const noexcept { return mean_x_; }

 private:
  TargetSpec t_;
  ProposalConfig cfg_;
  ChainState state_;
  SpectralVector mean_x_, mean_y_, scratch_;
  StepRecord rec_;
  double log_pi_y_ = 0.0;
  bool force_reject_ = false;
};

/// Single MH step on a value state.
inline std::pair<ChainState, StepRecord> mh_step(const TargetSpec& t, const ProposalConfig& cfg,
                                                 const ChainState& state, RandomStream& rng) {
  MetropolisKernel k(t, cfg);
  ChainState s = state;
  s.log_target_cache = log_target(t, s.position);
  k.reset(std::move(s));
  StepRecord rec = k.step(rng);
  return {k.state(), std::move(rec)};
}

inline constexpr std::size_t kTrackedCoords = 8;

struct ChainSummary {
  std::size_t n_steps = 0;
  std::size_t accept_count = 0;
  double acceptance_rate = 0.0;
  /// Mean of 1 ^ e^Q over steps (lower-variance acceptance estimate).
  double mean_accept_prob = 0.0;
  /// Mean realized ||x_{k+1} - x_k||_s^2.
  double mean_sq_jump = 0.0;
  /// Mean ||y_k - x_k||_s^2 over proposals.
  double mean_sq_proposal_jump = 0.0;
  std::vector<RunningMoments> coord_moments;
  ChainState final_state;
};

/// Recorder that keeps nothing.
struct NullRecorder {
  void operator()(const StepRecord&, const ChainState&) const noexcept {}
};

/// One retained row of the records file.
struct RecordRow {
  std::size_t step = 0;
  double q = 0.0;
  bool accepted = false;
  double jump_norm_s = 0.0;
  std::array<double, kTrackedCoords> coords{};
  std::size_t n_coords = 0;
};

/// Keeps every stride-th step; default stride ceil(n_steps / 1e5).
class SubsamplingRecorder {
 public:
  explicit SubsamplingRecorder(std::size_t n_steps, std::size_t max_rows = 100000)
      : stride_(std::max<std::size_t>(1, (n_steps + max_rows - 1) / max_rows)) {
    rows_.reserve(std::min(n_steps, max_rows) + 1);
  }

  void operator()(const StepRecord& r, const ChainState& s) {
    if (r.step % stride_ != 0) return;
    RecordRow row;
    row.step = r.step;
    row.q = r.q;
    row.accepted = r.accepted;
    row.jump_norm_s = r.jump_norm_s;
    row.n_coords = std::min(kTrackedCoords, s.position.size());
    for (std::size_t i = 0; i < row.n_coords; ++i) row.coords[i] = s.position[i];
    rows_.push_back(row);
  }

  std::size_t stride() const noexcept { return stride_; }
  const std::vector<RecordRow>& rows() const noexcept { return rows_; }

 private:
  std::size_t stride_;
  std::vector<RecordRow> rows_;
};

/// Runs n_steps MH transitions from `init`, streaming each record.
template <class Recorder = NullRecorder>
ChainSummary run_chain(const TargetSpec& t, const ProposalConfig& cfg, std::size_t n_steps,
                       const SpectralVector& init, RandomStream& rng, Recorder&& recorder = {}) {
  if (n_steps < 1) throw ConfigError("n_steps must be >= 1");
  MetropolisKernel k(t, cfg);
  k.reset(ChainState::at(t, init));
  const std::size_t tracked = std::min(kTrackedCoords, t.dim());

  ChainSummary out;
  out.coord_moments.resize(tracked);
  double sum_p = 0.0, sum_j = 0.0, sum_pj = 0.0;
  for (std::size_t n = 0; n < n_steps; ++n) {
    const StepRecord& r = k.step(rng);
    sum_p += r.accept_prob;
    const double j2 = r.jump_norm_s * r.jump_norm_s;
    sum_pj += j2;
    if (r.accepted) sum_j += j2;
    const auto& x = k.state().position;
    for (std::size_t i = 0; i < tracked; ++i) out.coord_moments[i].add(x[i]);
    recorder(r, k.state());
  }
  const double dn = static_cast<double>(n_steps);
  out.n_steps = n_steps;
  out.accept_count = k.state().accept_count;
  out.acceptance_rate = static_cast<double>(out.accept_count) / dn;
  out.mean_accept_prob = sum_p / dn;
  out.mean_sq_jump = sum_j / dn;
  out.mean_sq_proposal_jump = sum_pj / dn;
  out.final_state = k.state();
  return out;
}

/// A start in (approximate) stationarity: exact for conjugate targets,
/// otherwise the end of a MALA run (ell = 1, gamma = 1/3) from a reference draw.
inline SpectralVector warm_start(const TargetSpec& t, RandomStream& rng,
                                 std::size_t burn_in = 100000) {
  if (has_exact_sampler(t)) return exact_sample(t, rng);
  if (burn_in < 10000) throw ConfigError("warm_start burn_in must be >= 1e4");
  ProposalConfig cfg;
  cfg.variant = Variant::MALA;
  cfg.dim = t.dim();
  auto init = sample_reference(t.cov, rng);
  return run_chain(t, cfg, burn_in, init, rng).final_state.position;
}

}  // namespace proxmala
