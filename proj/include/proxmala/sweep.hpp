#pragma once

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "proxmala/diagnostics.hpp"
#include "proxmala/errors.hpp"
#include "proxmala/random.hpp"
#include "proxmala/samplers.hpp"
#include "proxmala/spectral.hpp"
#include "proxmala/stats.hpp"
#include "proxmala/targets.hpp"

namespace proxmala {

/// Recipe for a target at any truncation level N.
struct TargetDescriptor {
  PsiKind kind = PsiKind::Zero;
  /// Identity covariance (product target) instead of lambda_j = j^{-kappa}.
  bool product = false;
  double kappa = 1.0;
  double s = 0.0;
  std::vector<double> weights;

  CovarianceSpec covariance(std::size_t n) const {
    return product ? CovarianceSpec::identity(n) : CovarianceSpec::spectral(kappa, s, n);
  }

  TargetSpec make(std::size_t n) const {
    auto c = covariance(n);
    switch (kind) {
      case PsiKind::Zero: return TargetSpec::zero(std::move(c));
      case PsiKind::QuadraticSobolev: return TargetSpec::quadratic(std::move(c));
      case PsiKind::LogCosh: return TargetSpec::log_cosh(std::move(c), weights);
    }
    throw ConfigError("unknown target kind");
  }
};

struct SweepPlan {
  TargetDescriptor target;
  std::vector<Variant> variants;
  std::vector<std::size_t> n_grid;
  std::vector<double> ell_grid;
  std::vector<double> gammas;
  std::size_t steps = 100000;
  std::size_t replicates = 1;
  std::uint64_t master_seed = 0;
  /// Warm-start length for targets without an exact sampler.
  std::size_t burn_in = 100000;
  /// When set to N0, a cell with exponent gamma uses ell N0^{gamma - 1/3}, so
  /// every gamma shares the gamma = 1/3 step size at N = N0.
  std::optional<std::size_t> ell_anchor_dim;
  /// Stride between steps entering E|i^N| and E|e^N|.
  std::size_t diag_stride = 10;

  std::size_t cell_count() const noexcept {
    return variants.size() * n_grid.size() * gammas.size() * ell_grid.size();
  }

  void validate() const {
    if (variants.empty()) throw ConfigError("sweep: variants must be nonempty");
    if (n_grid.empty()) throw ConfigError("sweep: n_grid must be nonempty");
    if (ell_grid.empty()) throw ConfigError("sweep: ell_grid must be nonempty");
    if (gammas.empty()) throw ConfigError("sweep: gamma grid must be nonempty");
    if (replicates < 1) throw ConfigError("sweep: replicates must be >= 1");
    if (steps < 1) throw ConfigError("sweep: steps must be >= 1");
    if (diag_stride < 1) throw ConfigError("sweep: diag_stride must be >= 1");
    if (ell_anchor_dim && *ell_anchor_dim < 1) throw ConfigError("sweep: ell_anchor_dim must be >= 1");
    for (std::size_t n : n_grid)
      if (n < 1) throw ConfigError("sweep: every N must be positive");
    for (double l : ell_grid)
      if (!(l > 0.0) || !std::isfinite(l)) throw ConfigError("sweep: every ell must be positive");
    for (double g : gammas)
      if (!std::isfinite(g)) throw ConfigError("sweep: every gamma must be finite");
    // Catches invalid kappa, s, weights and variant/target pairs up front.
    for (Variant v : variants)
      for (double g : gammas)
        for (std::size_t n : n_grid) {
          const auto t = target.make(n);
          for (double l : ell_grid) cell_config(v, n, g, l).validate(t);
        }
  }

  double effective_ell(double ell, double gamma) const {
    if (!ell_anchor_dim) return ell;
    return ell * std::pow(static_cast<double>(*ell_anchor_dim), gamma - 1.0 / 3.0);
  }

  ProposalConfig cell_config(Variant v, std::size_t n, double gamma, double ell) const {
    ProposalConfig c;
    c.variant = v;
    c.dim = n;
    c.gamma = gamma;
    c.ell = effective_ell(ell, gamma);
    return c;
  }
};

/// Cell coordinates; cell index = ((v * |N| + n) * |gamma| + g) * |ell| + l.
struct CellKey {
  std::size_t variant = 0, n = 0, gamma = 0, ell = 0;
};

inline CellKey cell_key(const SweepPlan& p, std::size_t index) {
  CellKey k;
  k.ell = index % p.ell_grid.size();
  index /= p.ell_grid.size();
  k.gamma = index % p.gammas.size();
  index /= p.gammas.size();
  k.n = index % p.n_grid.size();
  k.variant = index / p.n_grid.size();
  return k;
}

enum class RowStatus { Complete, Incomplete, Failed };

inline std::string_view to_string(RowStatus s) {
  switch (s) {
    case RowStatus::Complete: return "complete";
    case RowStatus::Incomplete: return "incomplete";
    case RowStatus::Failed: return "error";
  }
  return "?";
}

struct SweepRow {
  std::size_t cell = 0;
  std::size_t replicate = 0;
  Variant variant = Variant::MALA;
  std::size_t n = 0;
  double ell = 0.0;      ///< grid value
  double ell_eff = 0.0;  ///< after the optional anchor
  double gamma = 0.0;
  double delta = 0.0;
  double acceptance = std::numeric_limits<double>::quiet_NaN();
  double acceptance_se = std::numeric_limits<double>::quiet_NaN();
  double mean_accept_prob = std::numeric_limits<double>::quiet_NaN();
  double mean_sq_jump = std::numeric_limits<double>::quiet_NaN();
  /// NaN unless gamma = 1/3 and the variant is Langevin-type.
  double mean_abs_i = std::numeric_limits<double>::quiet_NaN();
  double mean_abs_e = std::numeric_limits<double>::quiet_NaN();
  double runtime_s = 0.0;
  std::uint64_t seed = 0;
  RowStatus status = RowStatus::Incomplete;
  std::string error;
};

struct SweepResult {
  SweepPlan plan;
  /// Ordered by (cell, replicate) regardless of execution order.
  std::vector<SweepRow> rows;

  bool complete() const {
    return std::all_of(rows.begin(), rows.end(),
                       [](const SweepRow& r) { return r.status == RowStatus::Complete; });
  }
};

struct SweepOptions {
  std::size_t jobs = 1;
  /// Stop scheduling new work after this many rows (simulated interruption).
  std::optional<std::size_t> stop_after;
  /// Polled before each row; returning true stops scheduling.
  std::function<bool()> should_stop;
  /// Called once per finished row, serialized.
  std::function<void(const SweepRow&)> on_row;
  /// Overrides the order in which rows are executed (row ids = cell * R + rep).
  std::vector<std::size_t> schedule;
};

/// Runs one (cell, replicate) row. Never throws; failures land in the row.
inline SweepRow run_sweep_row(const SweepPlan& p, std::size_t cell, std::size_t rep) {
  const auto key = cell_key(p, cell);
  SweepRow row;
  row.cell = cell;
  row.replicate = rep;
  row.variant = p.variants[key.variant];
  row.n = p.n_grid[key.n];
  row.gamma = p.gammas[key.gamma];
  row.ell = p.ell_grid[key.ell];
  row.seed = derive_seed(p.master_seed, cell, rep, "chain");
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const auto t = p.target.make(row.n);
    const auto cfg = p.cell_config(row.variant, row.n, row.gamma, row.ell);
    cfg.validate(t);
    row.ell_eff = cfg.ell;
    row.delta = cfg.delta();
    RandomStream rng(row.seed);
    const auto x0 = warm_start(t, rng, p.burn_in);

    const bool decompose = row.variant != Variant::RWM && std::abs(row.gamma - 1.0 / 3.0) <= 1e-12;
    std::vector<double> ind;
    ind.reserve(p.steps);
    RunningMoments ai, ae;
    const auto s = run_chain(t, cfg, p.steps, x0, rng, [&](const StepRecord& r, const ChainState&) {
      ind.push_back(r.accepted ? 1.0 : 0.0);
      if (decompose && r.step % p.diag_stride == 0) {
        const double z = z_term(t, cfg, r.from.span(), r.innovation.span());
        const double i = i_term(t, cfg, r.from.span(), r.innovation.span());
        ai.add(std::abs(i));
        ae.add(std::abs(r.q - z - i));
      }
    });
    row.acceptance = s.acceptance_rate;
    row.acceptance_se = batch_means_se(ind);
    row.mean_accept_prob = s.mean_accept_prob;
    row.mean_sq_jump = s.mean_sq_jump;
    if (decompose) {
      row.mean_abs_i = ai.mean();
      row.mean_abs_e = ae.mean();
    }
    row.status = RowStatus::Complete;
  } catch (const std::exception& e) {
    row.status = RowStatus::Failed;
    row.error = e.what();
  }
  row.runtime_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return row;
}

/// Executes all (cell, replicate) rows on `opt.jobs` threads. Row values
/// depend only on the plan and the row identity.
inline SweepResult run_sweep(const SweepPlan& plan, const SweepOptions& opt = {}) {
  plan.validate();
  const std::size_t reps = plan.replicates;
  const std::size_t total = plan.cell_count() * reps;

  SweepResult res;
  res.plan = plan;
  res.rows.resize(total);
  for (std::size_t id = 0; id < total; ++id) {
    auto& r = res.rows[id];
    r.cell = id / reps;
    r.replicate = id % reps;
    const auto key = cell_key(plan, r.cell);
    r.variant = plan.variants[key.variant];
    r.n = plan.n_grid[key.n];
    r.gamma = plan.gammas[key.gamma];
    r.ell = plan.ell_grid[key.ell];
    r.ell_eff = plan.effective_ell(r.ell, r.gamma);
    r.seed = derive_seed(plan.master_seed, r.cell, r.replicate, "chain");
  }

  std::vector<std::size_t> order = opt.schedule;
  if (order.empty()) {
    order.resize(total);
    for (std::size_t k = 0; k < total; ++k) order[k] = k;
  } else {
    auto sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t k = 0; k < sorted.size(); ++k)
      if (sorted[k] != k || sorted.size() != total)
        throw ConfigError("sweep schedule must be a permutation of the row ids");
  }
  const std::size_t limit = std::min(total, opt.stop_after.value_or(total));

  std::atomic<std::size_t> next{0};
  std::mutex mu;
  auto worker = [&] {
    for (;;) {
      const std::size_t k = next.fetch_add(1);
      if (k >= limit) return;
      if (opt.should_stop && opt.should_stop()) return;
      const std::size_t id = order[k];
      SweepRow row = run_sweep_row(plan, id / reps, id % reps);
      std::lock_guard lock(mu);
      res.rows[id] = std::move(row);
      if (opt.on_row) opt.on_row(res.rows[id]);
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(opt.jobs, limit));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  return res;
}

namespace detail {

/// Mean of replicate acceptances for completed rows matching `pred`, keyed by
/// a value extracted from each row.
template <class Key, class Pred, class KeyFn>
std::map<Key, RunningMoments> acceptance_by(const SweepResult& r, Pred pred, KeyFn key) {
  std::map<Key, RunningMoments> out;
  for (const auto& row : r.rows)
    if (row.status == RowStatus::Complete && pred(row)) out[key(row)].add(row.acceptance);
  return out;
}

}  // namespace detail

struct GammaSlope {
  double gamma = 0.0;
  /// d acceptance / d log N for the first ell of the grid.
  LinearFit fit;
};

/// Slope of acceptance against log N for every gamma in the sweep.
inline std::vector<GammaSlope> gamma_slopes(const SweepResult& r, Variant v) {
  if (r.plan.gammas.size() < 2 || r.plan.n_grid.size() < 2)
    throw ConfigError("gamma fit needs at least two gammas and two values of N");
  const double ell0 = r.plan.ell_grid.front();
  std::vector<GammaSlope> out;
  for (double g : r.plan.gammas) {
    const auto by_n = detail::acceptance_by<std::size_t>(
        r, [&](const SweepRow& row) { return row.variant == v && row.gamma == g && row.ell == ell0; },
        [](const SweepRow& row) { return row.n; });
    if (by_n.size() < 2)
      throw Error("gamma fit: fewer than two completed N values at gamma = " + std::to_string(g));
    std::vector<double> ln, a;
    for (const auto& [n, m] : by_n) {
      ln.push_back(std::log(static_cast<double>(n)));
      a.push_back(m.mean());
    }
    out.push_back({g, ols(ln, a)});
  }
  return out;
}

/// The gamma whose acceptance is most stable in N.
inline double fit_gamma_star(const SweepResult& r, Variant v) {
  const auto s = gamma_slopes(r, v);
  const auto best = std::min_element(s.begin(), s.end(), [](const GammaSlope& a, const GammaSlope& b) {
    return std::abs(a.fit.slope) < std::abs(b.fit.slope);
  });
  return best->gamma;
}

/// Maximizer of ell * acceptance at gamma = 1/3 (or the nearest gamma) and the
/// largest N, averaged over replicates.
inline OptimumEstimate optimal_acceptance_estimate(const SweepResult& r, Variant v) {
  const auto& gs = r.plan.gammas;
  const double g = *std::min_element(gs.begin(), gs.end(), [](double a, double b) {
    return std::abs(a - 1.0 / 3.0) < std::abs(b - 1.0 / 3.0);
  });
  const std::size_t n = *std::max_element(r.plan.n_grid.begin(), r.plan.n_grid.end());
  const auto by_ell = detail::acceptance_by<double>(
      r, [&](const SweepRow& row) { return row.variant == v && row.gamma == g && row.n == n; },
      [](const SweepRow& row) { return row.ell; });
  if (by_ell.size() < 3) throw ConfigError("optimal acceptance needs at least three completed ell values");
  std::vector<double> ells, alphas;
  for (const auto& [l, m] : by_ell) {
    ells.push_back(l);
    alphas.push_back(m.mean());
  }
  const auto o = estimate_optimum(ells, alphas);
  if (o.on_boundary)
    throw Error("optimal acceptance: the maximum of ell * acceptance is on the grid boundary (ell = " +
                std::to_string(ells[o.grid_argmax]) + "); widen ell_grid");
  return o;
}

inline std::pair<double, double> optimal_acceptance(const SweepResult& r, Variant v) {
  const auto o = optimal_acceptance_estimate(r, v);
  return {o.ell_star, o.alpha_star};
}

}  // namespace proxmala
