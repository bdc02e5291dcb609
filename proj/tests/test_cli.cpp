#include <gtest/gtest.h>

#include <sys/wait.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <string>

#include "proxmala/io/output.hpp"

namespace fs = std::filesystem;
using namespace proxmala::io;

namespace {

struct CliResult {
  int code = -1;
  std::string err;
};

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / ("proxmala_cli_" + std::string(info->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  fs::path write_config(const std::string& name, const std::string& text) {
    const auto p = dir_ / name;
    write_file(p, text);
    return p;
  }

  CliResult run(const std::string& args) {
    const auto err = dir_ / "stderr.txt";
    const std::string cmd = std::string(PROXMALA_CLI_PATH) + " " + args + " > " + (dir_ / "stdout.txt").string() +
                            " 2> " + err.string();
    const int status = std::system(cmd.c_str());
    CliResult r;
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.err = fs::exists(err) ? read_file(err) : "";
    return r;
  }

  std::string value(const fs::path& file, const std::string& key) {
    for (const auto& [k, v] : parse_key_values(read_file(file)))
      if (k == key) return v;
    return "<missing>";
  }

  fs::path dir_;
};

const std::string kConfigDir = PROXMALA_CONFIG_DIR;

const char* kMinimal = R"([target]
kind = zero
N = 64
[sampler]
variant = mala
ell = 1
[run]
steps = 1000
seed = 5
)";

const char* kSmallSweep = R"([target]
kind = quadratic
N = 32
[run]
steps = 500
seed = 8
[sweep]
variants = mala, prox-canonical
n_grid = 16, 32
ell_grid = 0.8, 1.0, 1.2
gamma = 1/3
)";

}  // namespace

TEST_F(Cli, MinimalChainSucceeds) {
  const auto cfg = write_config("c.ini", kMinimal);
  const auto r = run("chain --config " + cfg.string() + " --out " + (dir_ / "a").string());
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"records.csv", "summary.txt", "manifest.txt", "timings.txt"})
    EXPECT_TRUE(fs::exists(dir_ / "a" / f)) << f;
  EXPECT_EQ(value(dir_ / "a" / "summary.txt", "steps"), "1000");
  const auto csv = read_file(dir_ / "a" / "records.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "step,q,accepted,jump_norm_s,coord1,coord2,coord3,coord4,coord5,coord6,coord7,coord8");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1001);
}

TEST_F(Cli, SameSeedSameHashes) {
  const auto cfg = write_config("c.ini", kMinimal);
  ASSERT_EQ(run("chain --config " + cfg.string() + " --out " + (dir_ / "a").string()).code, 0);
  ASSERT_EQ(run("chain --config " + cfg.string() + " --out " + (dir_ / "b").string()).code, 0);
  ASSERT_EQ(run("chain --config " + cfg.string() + " --out " + (dir_ / "c").string() + " --seed 6").code, 0);
  const auto ma = read_file(dir_ / "a" / "manifest.txt");
  EXPECT_EQ(ma, read_file(dir_ / "b" / "manifest.txt"));
  EXPECT_EQ(read_file(dir_ / "a" / "records.csv"), read_file(dir_ / "b" / "records.csv"));
  EXPECT_NE(value(dir_ / "a" / "manifest.txt", "file.records.csv"),
            value(dir_ / "c" / "manifest.txt", "file.records.csv"));
  EXPECT_EQ(value(dir_ / "c" / "manifest.txt", "master_seed"), "6");
  EXPECT_EQ(value(dir_ / "a" / "manifest.txt", "file.summary.txt"),
            content_hash(read_file(dir_ / "a" / "summary.txt")));
}

TEST_F(Cli, KappaBelowHalfIsConfigError) {
  const auto cfg = write_config("c.ini", "[target]\nkappa = 0.4\n[run]\nsteps = 10\n");
  const auto r = run("chain --config " + cfg.string() + " --out " + (dir_ / "a").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("kappa > 1/2"), std::string::npos) << r.err;
}

TEST_F(Cli, ParseErrorsAreConfigErrors) {
  EXPECT_EQ(run("chain").code, 1);
  EXPECT_EQ(run("bogus").code, 1);
  EXPECT_EQ(run("chain --config " + (dir_ / "missing.ini").string()).code, 1);
  const auto cfg = write_config("c.ini", "[run]\nstepz = 10\n");
  const auto r = run("chain --config " + cfg.string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("stepz"), std::string::npos) << r.err;
}

TEST_F(Cli, OutputRootOverride) {
  const auto cfg = write_config("c.ini", std::string(kMinimal) + "output = rel/out\n");
  const std::string env = "PROXMALA_OUTPUT_ROOT=" + (dir_ / "root").string() + " ";
  const auto err = dir_ / "e.txt";
  const int st = std::system((env + PROXMALA_CLI_PATH + " chain --config " + cfg.string() + " > /dev/null 2> " +
                              err.string())
                                 .c_str());
  ASSERT_EQ(WEXITSTATUS(st), 0) << read_file(err);
  EXPECT_TRUE(fs::exists(dir_ / "root" / "rel" / "out" / "manifest.txt"));
}

TEST_F(Cli, SweepWritesCsvSummaryAndRows) {
  const auto cfg = write_config("s.ini", kSmallSweep);
  const auto out = dir_ / "s";
  const auto r = run("sweep --config " + cfg.string() + " --out " + out.string() + " --jobs 2");
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = read_file(out / "sweep.csv");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 13);
  EXPECT_EQ(value(out / "manifest.txt", "status"), "complete");
  EXPECT_EQ(value(out / "manifest.txt", "row.11.0"), "complete");
  EXPECT_TRUE(fs::exists(out / "cells" / "cell_11_rep_0.txt"));
  EXPECT_NE(value(out / "summary.txt", "mala.alpha_star"), "<missing>");

  // Worker count does not change any hashed output.
  ASSERT_EQ(run("sweep --config " + cfg.string() + " --out " + (dir_ / "t").string() + " --jobs 1").code, 0);
  EXPECT_EQ(read_file(out / "manifest.txt"), read_file(dir_ / "t" / "manifest.txt"));
}

TEST_F(Cli, EmptyEllGridIsConfigError) {
  const auto cfg = write_config("s.ini", "[sweep]\nvariants = mala\nell_grid =\n");
  const auto r = run("sweep --config " + cfg.string() + " --out " + (dir_ / "s").string());
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("ell_grid"), std::string::npos) << r.err;
}

TEST_F(Cli, InterruptedSweepFlagsIncompleteRows) {
  const auto cfg = write_config("s.ini", kSmallSweep);
  const auto out = dir_ / "s";
  const auto r = run("sweep --config " + cfg.string() + " --out " + out.string() + " --stop-after 4");
  EXPECT_EQ(r.code, 2);
  EXPECT_EQ(value(out / "manifest.txt", "status"), "incomplete");
  std::size_t done = 0, pending = 0;
  for (const auto& [k, v] : parse_key_values(read_file(out / "manifest.txt"))) {
    if (k.rfind("row.", 0) != 0) continue;
    done += v == "complete";
    pending += v == "incomplete";
  }
  EXPECT_EQ(done, 4u);
  EXPECT_EQ(pending, 8u);
  const auto csv = read_file(out / "sweep.csv");
  EXPECT_NE(csv.find(",incomplete"), std::string::npos);
}

TEST_F(Cli, UnknownDiagnosticIsConfigError) {
  const auto cfg = write_config("d.ini", "[diagnose]\nname = spectral-gap\n");
  EXPECT_EQ(run("diagnose --config " + cfg.string() + " --out " + (dir_ / "d").string()).code, 1);
  const auto none = write_config("e.ini", "[run]\nsteps = 10\n");
  EXPECT_EQ(run("diagnose --config " + none.string() + " --out " + (dir_ / "e").string()).code, 1);
}

TEST_F(Cli, ProxCheckMatchesClosedForm) {
  const auto out = dir_ / "p";
  const auto r = run("diagnose --config " + kConfigDir + "/diagnose_prox_quadratic.ini --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::size_t checked = 0;
  for (const auto& [k, v] : parse_key_values(read_file(out / "report.txt"))) {
    if (k.find("max_closed_form_error") == std::string::npos) continue;
    ++checked;
    EXPECT_LE(std::stod(v), 1e-12) << k;
  }
  EXPECT_EQ(checked, 3u);
  EXPECT_EQ(value(out / "manifest.txt", "file.report.txt"), content_hash(read_file(out / "report.txt")));
}

TEST_F(Cli, QnMomentsOnProductGaussian) {
  const auto cfg = write_config("q.ini", R"([target]
kind = zero
covariance = identity
N = 1024
[sampler]
variant = mala
ell = 1
[run]
seed = 21
[diagnose]
name = qn-moments
samples = 4000
)");
  const auto out = dir_ / "q";
  const auto r = run("diagnose --config " + cfg.string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto rep = out / "report.txt";
  const double m = std::stod(value(rep, "q_mean")), mse = std::stod(value(rep, "q_mean_se"));
  const double v = std::stod(value(rep, "q_var")), vse = std::stod(value(rep, "q_var_se"));
  // Finite-N moments sit within a few hundredths of the limit at N = 1024.
  EXPECT_NEAR(m, -0.25, 4 * mse + 0.02);
  EXPECT_NEAR(v, 0.5, 4 * vse + 0.02);
}

TEST_F(Cli, ErrorRatesReportsIntervals) {
  const auto cfg = write_config("e.ini", R"([target]
kind = quadratic
N = 64
[run]
seed = 3
[diagnose]
name = error-rates
n_grid = 32, 64, 128, 256
samples = 300
)");
  const auto out = dir_ / "e";
  ASSERT_EQ(run("diagnose --config " + cfg.string() + " --out " + out.string()).code, 0);
  const auto rep = out / "report.txt";
  for (const char* pre : {"slope_i", "slope_e"}) {
    const double s = std::stod(value(rep, pre));
    const double lo = std::stod(value(rep, std::string(pre) + "_ci95_low"));
    const double hi = std::stod(value(rep, std::string(pre) + "_ci95_high"));
    EXPECT_LT(lo, s);
    EXPECT_GT(hi, s);
  }
}
