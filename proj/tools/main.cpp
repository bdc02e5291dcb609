// proxmala: run chains, sweeps and diagnostics from a config file.
//
//   proxmala chain    --config run.ini [--out DIR] [--seed N]
//   proxmala sweep    --config sweep.ini [--out DIR] [--seed N] [--jobs K]
//   proxmala diagnose --config diag.ini [--out DIR] [--seed N]
//
// Exit codes: 0 success, 1 configuration error, 2 runtime error.
// PROXMALA_OUTPUT_ROOT, when set, prefixes relative output directories.

#include <atomic>
#include <chrono>
#include <csignal>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "proxmala/diagnostics.hpp"
#include "proxmala/io/config.hpp"
#include "proxmala/io/output.hpp"
#include "proxmala/prox.hpp"
#include "proxmala/samplers.hpp"
#include "proxmala/sde.hpp"
#include "proxmala/sweep.hpp"

namespace fs = std::filesystem;
using namespace proxmala;
using io::KeyValue;

namespace {

volatile std::sig_atomic_t g_interrupted = 0;

void on_signal(int) { g_interrupted = 1; }

/// Short number form for use inside report keys.
std::string key_real(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%g", v);
  return buf;
}

struct CommonArgs {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::size_t jobs = 1;
  std::optional<std::size_t> stop_after;
};

struct Context {
  io::RunConfig cfg;
  fs::path out;
};

Context prepare(const CommonArgs& a) {
  Context c;
  c.cfg = io::load_config(a.config);
  if (a.seed) c.cfg.run.seed = *a.seed;
  fs::path out = a.out.empty() ? fs::path(c.cfg.run.output) : fs::path(a.out);
  if (out.is_relative())
    if (const char* root = std::getenv("PROXMALA_OUTPUT_ROOT"); root && *root) out = fs::path(root) / out;
  c.out = out;
  return c;
}

io::Manifest base_manifest(const Context& c, const std::string& command) {
  io::Manifest m;
  m.command = command;
  m.config_hash = io::content_hash(c.cfg.source);
  m.master_seed = c.cfg.run.seed;
  return m;
}

void write_hashed(const fs::path& dir, const std::string& name, const std::string& content, io::Manifest& m) {
  io::write_file(dir / name, content);
  m.files.emplace_back(name, io::content_hash(content));
}

// ---------------------------------------------------------------------------

int cmd_chain(const CommonArgs& a) {
  auto c = prepare(a);
  c.cfg.validate();
  const auto t = c.cfg.target.make();
  const auto pc = c.cfg.proposal();
  fs::create_directories(c.out);

  const auto t0 = std::chrono::steady_clock::now();
  const std::uint64_t seed = derive_seed(c.cfg.run.seed, 0, 0, "chain");
  RandomStream rng(seed);
  const auto x0 = warm_start(t, rng, c.cfg.run.burn_in);
  SubsamplingRecorder rec(c.cfg.run.steps, c.cfg.run.max_rows);
  const auto s = run_chain(t, pc, c.cfg.run.steps, x0, rng, rec);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto m = base_manifest(c, "chain");
  const std::size_t tracked = std::min(kTrackedCoords, t.dim());
  write_hashed(c.out, "records.csv", io::records_csv(rec.rows(), tracked), m);

  KeyValue kv;
  kv.add("variant", to_string(pc.variant))
      .add("target", to_string(t.kind))
      .add("N", t.dim())
      .add("ell", pc.ell)
      .add("gamma", pc.gamma)
      .add("delta", pc.delta())
      .add("steps", s.n_steps)
      .add("burn_in", has_exact_sampler(t) ? std::size_t{0} : c.cfg.run.burn_in)
      .add("stream_seed", seed)
      .add("record_stride", rec.stride())
      .add("accept_count", s.accept_count)
      .add("acceptance_rate", s.acceptance_rate)
      .add("mean_accept_prob", s.mean_accept_prob)
      .add("mean_sq_jump", s.mean_sq_jump)
      .add("mean_sq_proposal_jump", s.mean_sq_proposal_jump);
  for (std::size_t i = 0; i < tracked; ++i) {
    kv.add("coord" + std::to_string(i + 1) + "_mean", s.coord_moments[i].mean());
    kv.add("coord" + std::to_string(i + 1) + "_var", s.coord_moments[i].variance());
  }
  write_hashed(c.out, "summary.txt", kv.str(), m);
  io::write_file(c.out / "timings.txt", KeyValue().add("runtime_s", secs).str());
  m.volatile_files.push_back("timings.txt");
  m.write(c.out);
  std::cout << "acceptance_rate = " << io::format_real(s.acceptance_rate) << "\n";
  return 0;
}

// ---------------------------------------------------------------------------

int cmd_sweep(const CommonArgs& a) {
  auto c = prepare(a);
  const auto plan = c.cfg.sweep_plan();
  plan.validate();
  fs::create_directories(c.out / "cells");

  const std::size_t total = plan.cell_count() * plan.replicates;
  auto row_key = [](std::size_t cell, std::size_t rep) {
    return "row." + std::to_string(cell) + "." + std::to_string(rep);
  };
  auto row_file = [](std::size_t cell, std::size_t rep) {
    return "cells/cell_" + std::to_string(cell) + "_rep_" + std::to_string(rep) + ".txt";
  };

  // Written first so an interrupted run is flagged even if the process dies.
  auto pending = base_manifest(c, "sweep");
  pending.status = "incomplete";
  for (std::size_t id = 0; id < total; ++id)
    pending.entries.emplace_back(row_key(id / plan.replicates, id % plan.replicates), "incomplete");
  pending.write(c.out);

  SweepOptions opt;
  opt.jobs = std::max<std::size_t>(1, a.jobs);
  opt.stop_after = a.stop_after;
  opt.should_stop = [] { return g_interrupted != 0; };
  opt.on_row = [&](const SweepRow& r) {
    io::write_file(c.out / row_file(r.cell, r.replicate), io::sweep_row_kv(r).str());
  };
  const auto res = run_sweep(plan, opt);

  auto m = base_manifest(c, "sweep");
  m.status = res.complete() ? "complete" : "incomplete";
  write_hashed(c.out, "sweep.csv", io::sweep_csv(res), m);

  KeyValue kv;
  kv.add("rows", res.rows.size());
  std::size_t failed = 0, incomplete = 0;
  for (const auto& r : res.rows) {
    failed += r.status == RowStatus::Failed;
    incomplete += r.status == RowStatus::Incomplete;
  }
  kv.add("rows_failed", failed).add("rows_incomplete", incomplete);
  for (Variant v : plan.variants) {
    const std::string p = std::string(to_string(v)) + ".";
    if (plan.gammas.size() >= 2 && plan.n_grid.size() >= 2) {
      try {
        kv.add(p + "gamma_star", fit_gamma_star(res, v));
        for (const auto& gs : gamma_slopes(res, v))
          kv.add(p + "slope_at_gamma_" + key_real(gs.gamma), gs.fit.slope);
      } catch (const std::exception& e) {
        kv.add(p + "gamma_star", std::string("unavailable: ") + e.what());
      }
    }
    if (plan.ell_grid.size() >= 3) {
      try {
        const auto o = optimal_acceptance_estimate(res, v);
        kv.add(p + "ell_star", o.ell_star).add(p + "alpha_star", o.alpha_star);
      } catch (const std::exception& e) {
        kv.add(p + "alpha_star", std::string("unavailable: ") + e.what());
      }
    }
  }
  write_hashed(c.out, "summary.txt", kv.str(), m);

  io::write_file(c.out / "timings.csv", io::sweep_timings_csv(res));
  m.volatile_files.push_back("timings.csv");
  for (const auto& r : res.rows) {
    m.entries.emplace_back(row_key(r.cell, r.replicate), std::string(to_string(r.status)));
    if (r.status != RowStatus::Incomplete) m.hash_file(c.out, row_file(r.cell, r.replicate));
  }
  m.write(c.out);

  if (incomplete > 0) {
    std::cerr << "proxmala: sweep stopped with " << incomplete << " of " << total << " rows incomplete\n";
    return 2;
  }
  if (failed > 0) {
    for (const auto& r : res.rows)
      if (r.status == RowStatus::Failed)
        std::cerr << "proxmala: row " << r.cell << "." << r.replicate << ": " << r.error << "\n";
    return 2;
  }
  return 0;
}

// ---------------------------------------------------------------------------

/// Stationary draws: exact when possible, else a thinned MALA chain.
class StationaryDraws {
 public:
  StationaryDraws(const TargetSpec& t, RandomStream& rng, std::size_t burn_in, std::size_t thin = 20)
      : t_(t), rng_(rng), thin_(thin) {
    if (!has_exact_sampler(t)) {
      ProposalConfig cfg;
      cfg.dim = t.dim();
      kernel_.emplace(t, cfg);
      kernel_->reset(ChainState::at(t, warm_start(t, rng, burn_in)));
    }
  }

  SpectralVector next() {
    if (!kernel_) return exact_sample(t_, rng_);
    for (std::size_t k = 0; k < thin_; ++k) kernel_->step(rng_);
    return kernel_->state().position;
  }

 private:
  const TargetSpec& t_;
  RandomStream& rng_;
  std::size_t thin_;
  std::optional<MetropolisKernel> kernel_;
};

KeyValue diag_qn_moments(const io::RunConfig& cfg, RandomStream& rng) {
  const auto t = cfg.target.make();
  const auto pc = cfg.proposal();
  StationaryDraws draws(t, rng, cfg.run.burn_in);
  RunningMoments q, z, ai, ae;
  std::vector<double> qs;
  for (std::size_t s = 0; s < cfg.diagnose.samples; ++s) {
    const auto d = qn_sample(t, pc, draws.next(), rng, 1).front();
    q.add(d.q);
    z.add(d.z);
    ai.add(std::abs(d.i));
    ae.add(std::abs(d.e));
    qs.push_back(d.q);
  }
  const double l3 = pc.ell * pc.ell * pc.ell;
  KeyValue kv;
  kv.add("samples", cfg.diagnose.samples)
      .add("q_mean", q.mean())
      .add("q_mean_se", q.stderr_mean())
      .add("q_var", q.variance())
      .add("q_var_se", q.stderr_variance())
      .add("q_ks_p_fitted_normal", qs.size() > 1 ? ks_test_normal(qs, q.mean(), q.variance()).p_value : 1.0)
      .add("z_mean", z.mean())
      .add("z_var", z.variance())
      .add("mean_abs_i", ai.mean())
      .add("mean_abs_e", ae.mean())
      .add("limit_mean", -l3 / 4.0)
      .add("limit_var", l3 / 2.0)
      .add("limit_acceptance", limit_acceptance(pc.ell));
  return kv;
}

KeyValue diag_error_rates(const io::RunConfig& cfg) {
  const auto grid = cfg.diagnose.n_grid.empty() ? std::vector<std::size_t>{64, 256, 1024, 4096} : cfg.diagnose.n_grid;
  const auto desc = cfg.target.desc;
  const auto res = error_rate_regression([&](std::size_t n) { return desc.make(n); }, cfg.proposal(), grid,
                                         cfg.diagnose.samples, derive_seed(cfg.run.seed, 0, 0, "error-rates"));
  KeyValue kv;
  const double z = 1.959963984540054;
  kv.add("slope_i", res.fit_i.slope)
      .add("slope_i_se", res.fit_i.slope_se)
      .add("slope_i_ci95_low", res.fit_i.slope - z * res.fit_i.slope_se)
      .add("slope_i_ci95_high", res.fit_i.slope + z * res.fit_i.slope_se)
      .add("slope_e", res.fit_e.slope)
      .add("slope_e_se", res.fit_e.slope_se)
      .add("slope_e_ci95_low", res.fit_e.slope - z * res.fit_e.slope_se)
      .add("slope_e_ci95_high", res.fit_e.slope + z * res.fit_e.slope_se)
      .add("expected_slope_i", -1.0 / 6.0)
      .add("expected_slope_e", -1.0 / 3.0);
  for (const auto& r : res.rows) {
    const std::string p = "N" + std::to_string(r.n) + ".";
    kv.add(p + "mean_abs_i", r.abs_i.mean()).add(p + "mean_abs_e", r.abs_e.mean());
  }
  return kv;
}

KeyValue diag_drift(const io::RunConfig& cfg, RandomStream& rng) {
  const auto grid = cfg.diagnose.n_grid.empty() ? std::vector<std::size_t>{cfg.target.dim} : cfg.diagnose.n_grid;
  KeyValue kv;
  for (std::size_t n : grid) {
    const auto t = cfg.target.desc.make(n);
    auto pc = cfg.proposal();
    pc.dim = n;
    pc.validate(t);
    const auto e = drift_error(t, pc, cfg.diagnose.n_states, cfg.diagnose.n_inner, rng);
    const std::string p = "N" + std::to_string(n) + ".";
    kv.add(p + "drift_error_mean", e.mean()).add(p + "drift_error_se", e.stderr_mean());
  }
  return kv;
}

KeyValue diag_noise_cov(const io::RunConfig& cfg, RandomStream& rng) {
  const auto t = cfg.target.make();
  std::vector<std::pair<std::size_t, std::size_t>> idx{{1, 1}};
  if (t.dim() >= 2) idx.insert(idx.end(), {{1, 2}, {2, 2}});
  const auto e = mean_noise_covariance(t, cfg.proposal(), cfg.diagnose.n_states, cfg.diagnose.n_inner, rng, idx);
  KeyValue kv;
  for (const auto& x : e) {
    const std::string p = "D_" + std::to_string(x.i) + "_" + std::to_string(x.j) + ".";
    kv.add(p + "value", x.value).add(p + "se", x.se).add(p + "limit", x.limit);
  }
  return kv;
}

KeyValue diag_sde_compare(const io::RunConfig& cfg, RandomStream& rng) {
  const auto t = cfg.target.make();
  const auto pc = cfg.proposal();
  const auto s = run_chain(t, pc, cfg.run.steps, warm_start(t, rng, cfg.run.burn_in), rng);
  const std::size_t sd = std::min(cfg.diagnose.sde_dim, cfg.target.dim);
  const auto ts = cfg.target.desc.make(sd);
  const double h = cfg.diagnose.h.value_or(limit_speed(pc.ell));
  const auto z0 = has_exact_sampler(ts) ? exact_sample(ts, rng) : sample_reference(ts.cov, rng);
  const auto path = integrate(ts, h, z0, cfg.diagnose.dt, cfg.diagnose.sde_steps, rng, cfg.diagnose.sde_stride);
  std::vector<std::size_t> coords;
  for (std::size_t k = 1; k <= std::min(kTrackedCoords, sd); ++k) coords.push_back(k);
  KeyValue kv;
  kv.add("h_ell", h).add("dt", cfg.diagnose.dt).add("sde_steps", cfg.diagnose.sde_steps).add("chain_steps", cfg.run.steps);
  for (const auto& r : marginal_compare(s, path, coords, &t)) {
    const std::string p = "coord" + std::to_string(r.coord) + ".";
    kv.add(p + "chain_mean", r.chain_mean)
        .add(p + "chain_var", r.chain_var)
        .add(p + "sde_mean", r.sde_mean)
        .add(p + "sde_var", r.sde_var)
        .add(p + "rel_var_gap", r.rel_var_gap);
    if (r.exact_var) kv.add(p + "exact_var", *r.exact_var);
  }
  return kv;
}

KeyValue diag_prox_check(const io::RunConfig& cfg, RandomStream& rng) {
  const auto t = cfg.target.make();
  const auto lambdas = cfg.diagnose.lambdas.empty() ? std::vector<double>{cfg.proposal().lambda()} : cfg.diagnose.lambdas;
  ProxOptions opt;
  opt.method = ProxMethod::Newton;
  KeyValue kv;
  kv.add("points", cfg.diagnose.samples).add("point_scale", 3.0).add("method", "newton");
  for (double lam : lambdas) {
    double max_res = 0.0, max_cf = 0.0;
    int max_it = 0;
    for (std::size_t k = 0; k < cfg.diagnose.samples; ++k) {
      auto x = sample_reference(t.cov, rng);
      for (double& v : x) v *= 3.0;
      const auto sol = prox(t, x, lam, opt);
      max_res = std::max(max_res, sol.residual);
      max_it = std::max(max_it, sol.iterations);
      if (t.kind == PsiKind::QuadraticSobolev)
        for (std::size_t i = 0; i < x.size(); ++i) max_cf = std::max(max_cf, std::abs(sol.point[i] - x[i] / (1.0 + lam)));
    }
    const std::string p = "lambda_" + key_real(lam) + ".";
    kv.add(p + "max_residual", max_res).add(p + "max_iterations", max_it);
    if (t.kind == PsiKind::QuadraticSobolev) kv.add(p + "max_closed_form_error", max_cf);
  }
  return kv;
}

int cmd_diagnose(const CommonArgs& a) {
  auto c = prepare(a);
  if (!c.cfg.diagnose.present) throw ConfigError("diagnose needs a [diagnose] section with a name");
  c.cfg.validate();
  fs::create_directories(c.out);
  const auto& name = c.cfg.diagnose.name;
  RandomStream rng(derive_seed(c.cfg.run.seed, 0, 0, name));

  const auto t0 = std::chrono::steady_clock::now();
  KeyValue kv;
  kv.add("diagnostic", name)
      .add("target", to_string(c.cfg.target.desc.kind))
      .add("N", c.cfg.target.dim)
      .add("variant", to_string(c.cfg.sampler.variant))
      .add("ell", c.cfg.sampler.ell)
      .add("gamma", c.cfg.sampler.gamma);
  KeyValue body;
  if (name == "qn-moments") body = diag_qn_moments(c.cfg, rng);
  else if (name == "error-rates") body = diag_error_rates(c.cfg);
  else if (name == "drift") body = diag_drift(c.cfg, rng);
  else if (name == "noise-cov") body = diag_noise_cov(c.cfg, rng);
  else if (name == "sde-compare") body = diag_sde_compare(c.cfg, rng);
  else if (name == "prox-check") body = diag_prox_check(c.cfg, rng);
  for (const auto& [k, v] : body.items()) kv.add(k, v);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  auto m = base_manifest(c, "diagnose");
  write_hashed(c.out, "report.txt", kv.str(), m);
  io::write_file(c.out / "timings.txt", KeyValue().add("runtime_s", secs).str());
  m.volatile_files.push_back("timings.txt");
  m.write(c.out);
  std::cout << kv.str();
  return 0;
}

void add_common(CLI::App* sub, CommonArgs& a, bool sweep) {
  sub->add_option("--config", a.config, "Run configuration file")->required()->check(CLI::ExistingFile);
  sub->add_option("--out", a.out, "Output directory (overrides run.output)");
  sub->add_option("--seed", a.seed, "Master seed (overrides run.seed)");
  sub->add_option("--jobs", a.jobs, "Worker threads for sweeps")->check(CLI::PositiveNumber);
  if (sweep) sub->add_option("--stop-after", a.stop_after, "Stop after this many rows")->group("");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MALA and proximal MALA scaling experiments"};
  app.require_subcommand(1);
  CommonArgs args;
  auto* chain = app.add_subcommand("chain", "Run one chain");
  auto* sweep = app.add_subcommand("sweep", "Run a (variant, N, gamma, ell) grid");
  auto* diag = app.add_subcommand("diagnose", "Run a named diagnostic");
  add_common(chain, args, false);
  add_common(sweep, args, true);
  add_common(diag, args, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  try {
    if (chain->parsed()) return cmd_chain(args);
    if (sweep->parsed()) return cmd_sweep(args);
    return cmd_diagnose(args);
  } catch (const ConfigError& e) {
    std::cerr << "proxmala: configuration error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "proxmala: error: " << e.what() << "\n";
    return 2;
  }
}
