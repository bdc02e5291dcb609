#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "proxmala/sweep.hpp"

using namespace proxmala;

namespace {

SweepPlan small_plan() {
  SweepPlan p;
  p.target.kind = PsiKind::QuadraticSobolev;
  p.target.kappa = 1.0;
  p.variants = {Variant::MALA, Variant::ProxCanonical};
  p.n_grid = {16, 64};
  p.ell_grid = {0.8, 1.2};
  p.gammas = {1.0 / 3.0};
  p.steps = 2000;
  p.replicates = 2;
  p.master_seed = 42;
  return p;
}

bool same_values(const SweepRow& a, const SweepRow& b) {
  return a.cell == b.cell && a.replicate == b.replicate && a.variant == b.variant && a.n == b.n &&
         a.ell == b.ell && a.gamma == b.gamma && a.delta == b.delta && a.acceptance == b.acceptance &&
         a.acceptance_se == b.acceptance_se && a.mean_sq_jump == b.mean_sq_jump &&
         a.mean_abs_i == b.mean_abs_i && a.mean_abs_e == b.mean_abs_e && a.seed == b.seed &&
         a.status == b.status;
}

}  // namespace

TEST(Sweep, SingleCellIsOneChain) {
  SweepPlan p;
  p.variants = {Variant::MALA};
  p.n_grid = {32};
  p.ell_grid = {1.2};
  p.gammas = {1.0 / 3.0};
  p.steps = 3000;
  p.master_seed = 9;
  const auto r = run_sweep(p);
  ASSERT_EQ(r.rows.size(), 1u);
  ASSERT_EQ(r.rows[0].status, RowStatus::Complete) << r.rows[0].error;

  const auto t = TargetSpec::zero(CovarianceSpec::spectral(1.0, 0.0, 32));
  ProposalConfig cfg;
  cfg.dim = 32;
  cfg.ell = 1.2;
  RandomStream rng(derive_seed(9, 0, 0, "chain"));
  const auto x0 = warm_start(t, rng);
  const auto s = run_chain(t, cfg, 3000, x0, rng);
  EXPECT_EQ(r.rows[0].acceptance, s.acceptance_rate);
  EXPECT_EQ(r.rows[0].mean_sq_jump, s.mean_sq_jump);
  EXPECT_EQ(r.rows[0].seed, derive_seed(9, 0, 0, "chain"));
  EXPECT_TRUE(std::isfinite(r.rows[0].mean_abs_i));
  EXPECT_TRUE(std::isfinite(r.rows[0].mean_abs_e));
}

TEST(Sweep, RowsDependOnIdentityNotSchedule) {
  const auto p = small_plan();
  const auto a = run_sweep(p);
  SweepOptions opt;
  opt.schedule.resize(p.cell_count() * p.replicates);
  for (std::size_t k = 0; k < opt.schedule.size(); ++k) opt.schedule[k] = k;
  std::mt19937 g(3);
  std::shuffle(opt.schedule.begin(), opt.schedule.end(), g);
  opt.jobs = 3;
  const auto b = run_sweep(p, opt);
  ASSERT_EQ(a.rows.size(), b.rows.size());
  for (std::size_t k = 0; k < a.rows.size(); ++k) EXPECT_TRUE(same_values(a.rows[k], b.rows[k])) << k;
  EXPECT_TRUE(a.complete());
  for (const auto& r : a.rows) {
    EXPECT_GE(r.acceptance, 0.0);
    EXPECT_LE(r.acceptance, 1.0);
  }
}

TEST(Sweep, CellIndexLayout) {
  const auto p = small_plan();
  const auto r = run_sweep(p);
  for (const auto& row : r.rows) {
    const auto k = cell_key(p, row.cell);
    EXPECT_EQ(row.variant, p.variants[k.variant]);
    EXPECT_EQ(row.n, p.n_grid[k.n]);
    EXPECT_EQ(row.ell, p.ell_grid[k.ell]);
  }
  EXPECT_EQ(r.rows.size(), 16u);
  EXPECT_NE(r.rows[0].seed, r.rows[1].seed);
}

TEST(Sweep, ReplicateSpreadMatchesStandardError) {
  SweepPlan p;
  p.variants = {Variant::MALA};
  p.n_grid = {64};
  p.ell_grid = {1.5};
  p.gammas = {1.0 / 3.0};
  p.steps = 20000;
  p.replicates = 12;
  p.master_seed = 5;
  const auto r = run_sweep(p);
  RunningMoments acc, se2;
  for (const auto& row : r.rows) {
    acc.add(row.acceptance);
    se2.add(row.acceptance_se * row.acceptance_se);
  }
  const double a = acc.mean();
  const double binom = a * (1 - a) / static_cast<double>(p.steps);
  // Indicator autocorrelation inflates the spread a little above binomial.
  EXPECT_GT(acc.variance() / binom, 0.3);
  EXPECT_LT(acc.variance() / binom, 4.0);
  EXPECT_GT(acc.variance() / se2.mean(), 0.3);
  EXPECT_LT(acc.variance() / se2.mean(), 3.0);
}

TEST(Sweep, DecompositionOnlyAtOneThird) {
  auto p = small_plan();
  p.variants = {Variant::MALA, Variant::RWM};
  p.n_grid = {16};
  p.ell_grid = {1.0};
  p.gammas = {1.0 / 3.0, 0.5};
  p.replicates = 1;
  const auto r = run_sweep(p);
  for (const auto& row : r.rows) {
    const bool expect = row.variant == Variant::MALA && row.gamma < 0.4;
    EXPECT_EQ(std::isfinite(row.mean_abs_e), expect);
  }
}

TEST(Sweep, RowErrorsDoNotAbort) {
  SweepPlan p;
  p.target.kind = PsiKind::LogCosh;
  p.target.kappa = 1.0;
  p.target.weights = {0.5};
  p.variants = {Variant::MALA};
  p.n_grid = {8, 16};
  p.ell_grid = {1.0};
  p.gammas = {1.0 / 3.0};
  p.steps = 100;
  p.burn_in = 10;  // rejected by warm_start inside each row
  const auto r = run_sweep(p);
  ASSERT_EQ(r.rows.size(), 2u);
  for (const auto& row : r.rows) {
    EXPECT_EQ(row.status, RowStatus::Failed);
    EXPECT_NE(row.error.find("burn_in"), std::string::npos);
  }
  EXPECT_FALSE(r.complete());
}

TEST(Sweep, StopAfterLeavesIncompleteRows) {
  const auto p = small_plan();
  SweepOptions opt;
  opt.stop_after = 5;
  std::size_t seen = 0;
  opt.on_row = [&](const SweepRow&) { ++seen; };
  const auto r = run_sweep(p, opt);
  EXPECT_EQ(seen, 5u);
  EXPECT_EQ(std::count_if(r.rows.begin(), r.rows.end(),
                          [](const SweepRow& x) { return x.status == RowStatus::Incomplete; }),
            11);
  EXPECT_FALSE(r.complete());
}

TEST(Sweep, PlanValidation) {
  auto p = small_plan();
  p.ell_grid.clear();
  EXPECT_THROW(run_sweep(p), ConfigError);
  p = small_plan();
  p.replicates = 0;
  EXPECT_THROW(run_sweep(p), ConfigError);
  p = small_plan();
  p.variants = {Variant::ProxPereyra};
  EXPECT_THROW(run_sweep(p), ConfigError);
  p = small_plan();
  p.target.kappa = 0.4;
  EXPECT_THROW(run_sweep(p), ConfigError);
}

TEST(Sweep, AnchorSharesStepAtAnchorDimension) {
  auto p = small_plan();
  p.ell_anchor_dim = 64;
  p.gammas = {1.0 / 6.0, 1.0 / 3.0, 0.5};
  const auto a = p.cell_config(Variant::MALA, 64, 1.0 / 6.0, 1.0).delta();
  const auto b = p.cell_config(Variant::MALA, 64, 1.0 / 3.0, 1.0).delta();
  const auto c = p.cell_config(Variant::MALA, 64, 0.5, 1.0).delta();
  EXPECT_NEAR(a, b, 1e-15);
  EXPECT_NEAR(c, b, 1e-15);
}

TEST(GammaStar, OneThirdIsTheStableExponent) {
  SweepPlan p;
  p.target.product = true;
  p.variants = {Variant::MALA};
  p.n_grid = {64, 1024};
  p.ell_grid = {1.0};
  p.gammas = {1.0 / 6.0, 1.0 / 3.0, 0.5};
  p.ell_anchor_dim = 256;
  p.steps = 6000;
  p.master_seed = 77;
  const auto r = run_sweep(p);
  EXPECT_NEAR(fit_gamma_star(r, Variant::MALA), 1.0 / 3.0, 1e-12);
  const auto s = gamma_slopes(r, Variant::MALA);
  EXPECT_LT(s[0].fit.slope, 0.0);
  EXPECT_GT(s[2].fit.slope, 0.0);

  auto q = p;
  q.gammas = {1.0 / 3.0};
  EXPECT_THROW(fit_gamma_star(run_sweep(q), Variant::MALA), ConfigError);
}

TEST(OptimalAcceptance, BoundaryMaximumIsAnError) {
  SweepPlan p;
  p.target.product = true;
  p.variants = {Variant::MALA};
  p.n_grid = {64};
  p.ell_grid = {0.1, 0.2, 0.3};
  p.gammas = {1.0 / 3.0};
  p.steps = 2000;
  const auto r = run_sweep(p);
  EXPECT_THROW(optimal_acceptance(r, Variant::MALA), Error);
}

TEST(OptimalAcceptance, InteriorMaximum) {
  SweepPlan p;
  p.target.product = true;
  p.variants = {Variant::MALA};
  p.n_grid = {256};
  p.ell_grid = {0.5, 1.0, 1.5, 2.0, 2.5, 3.0};
  p.gammas = {1.0 / 3.0};
  p.steps = 10000;
  p.master_seed = 3;
  const auto r = run_sweep(p);
  const auto [ell, alpha] = optimal_acceptance(r, Variant::MALA);
  EXPECT_GT(ell, 1.0);
  EXPECT_LT(ell, 2.5);
  EXPECT_GT(alpha, 0.45);
  EXPECT_LT(alpha, 0.7);
}
