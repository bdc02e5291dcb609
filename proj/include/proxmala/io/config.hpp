#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "proxmala/errors.hpp"
#include "proxmala/samplers.hpp"
#include "proxmala/sweep.hpp"
#include "proxmala/targets.hpp"

namespace proxmala::io {

// Run configuration: an INI-style file with sections [target], [sampler],
// [run], [sweep] and [diagnose]. Comments are whole lines starting with ';'
// or '#'. Lists are comma separated; reals also accept p/q fractions.

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline double parse_plain_real(const std::string& s, const std::string& what) {
  double v = 0.0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (s.empty() || ec != std::errc() || p != end)
    throw ConfigError(what + ": expected a real number, got '" + s + "'");
  return v;
}

}  // namespace detail

/// "0.25", "1e-3" or "1/3".
inline double parse_real(std::string_view text, const std::string& what) {
  const std::string s = detail::trim(text);
  const auto slash = s.find('/');
  if (slash == std::string::npos) return detail::parse_plain_real(s, what);
  const double num = detail::parse_plain_real(detail::trim(s.substr(0, slash)), what);
  const double den = detail::parse_plain_real(detail::trim(s.substr(slash + 1)), what);
  if (den == 0.0) throw ConfigError(what + ": zero denominator in '" + s + "'");
  return num / den;
}

/// Nonnegative integer; "100000" or an exactly integral "1e5".
inline std::uint64_t parse_count(std::string_view text, const std::string& what) {
  const std::string s = detail::trim(text);
  std::uint64_t v = 0;
  const auto* end = s.data() + s.size();
  const auto [p, ec] = std::from_chars(s.data(), end, v);
  if (!s.empty() && ec == std::errc() && p == end) return v;
  double d = 0.0;
  try {
    d = detail::parse_plain_real(s, what);
  } catch (const ConfigError&) {
    throw ConfigError(what + ": expected a nonnegative integer, got '" + s + "'");
  }
  if (!(d >= 0.0) || d != std::floor(d) || d > 9.0e15)
    throw ConfigError(what + ": expected a nonnegative integer, got '" + s + "'");
  return static_cast<std::uint64_t>(d);
}

inline std::vector<std::string> split_list(std::string_view text) {
  std::vector<std::string> out;
  const std::string s = detail::trim(text);
  if (s.empty()) return out;
  std::size_t start = 0;
  for (;;) {
    const auto comma = s.find(',', start);
    out.push_back(detail::trim(std::string_view(s).substr(start, comma - start)));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::vector<double> parse_real_list(std::string_view text, const std::string& what) {
  std::vector<double> out;
  for (const auto& item : split_list(text)) out.push_back(parse_real(item, what));
  return out;
}

inline std::vector<std::size_t> parse_count_list(std::string_view text, const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& item : split_list(text)) out.push_back(parse_count(item, what));
  return out;
}

inline Variant parse_variant_or_throw(std::string_view s) {
  const auto v = parse_variant(detail::trim(s));
  if (!v)
    throw ConfigError("unknown variant '" + std::string(s) +
                      "' (expected rwm, mala, prox-canonical, prox-direct or prox-pereyra)");
  return *v;
}

inline PsiKind parse_psi_kind(std::string_view s) {
  for (PsiKind k : {PsiKind::Zero, PsiKind::QuadraticSobolev, PsiKind::LogCosh})
    if (detail::trim(s) == to_string(k)) return k;
  throw ConfigError("unknown target kind '" + std::string(s) + "' (expected zero, quadratic or logcosh)");
}

inline const std::vector<std::string>& diagnostic_names() {
  static const std::vector<std::string> names{"qn-moments", "error-rates", "drift",
                                              "noise-cov",  "sde-compare", "prox-check"};
  return names;
}

struct TargetBlock {
  TargetDescriptor desc;
  std::size_t dim = 64;
  TargetSpec make() const { return desc.make(dim); }
};

struct SamplerBlock {
  Variant variant = Variant::MALA;
  double ell = 1.0;
  double gamma = 1.0 / 3.0;
  std::optional<double> lambda;
};

struct RunBlock {
  std::size_t steps = 1000;
  std::size_t burn_in = 100000;
  std::uint64_t seed = 0;
  std::size_t replicates = 1;
  std::string output = "out";
  /// Cap on rows in the records file; longer chains are subsampled.
  std::size_t max_rows = 100000;
};

struct SweepBlock {
  bool present = false;
  std::vector<Variant> variants;
  std::vector<std::size_t> n_grid{64, 256, 1024, 4096};
  std::vector<double> ell_grid{0.5, 0.75, 1.0, 1.25, 1.5, 1.75, 2.0, 2.25, 2.5, 2.75, 3.0};
  std::vector<double> gammas{1.0 / 3.0};
  std::optional<std::size_t> ell_anchor_dim;
  std::size_t diag_stride = 10;
};

struct DiagnoseBlock {
  bool present = false;
  std::string name;
  std::size_t samples = 10000;
  std::size_t n_inner = 2000;
  std::size_t n_states = 20;
  std::vector<std::size_t> n_grid;
  std::vector<double> lambdas;
  double dt = 1e-3;
  std::size_t sde_steps = 1000000;
  std::size_t sde_dim = 8;
  std::size_t sde_stride = 1000;
  /// Speed for the SDE; defaults to the closed-form h(ell).
  std::optional<double> h;
};

struct RunConfig {
  TargetBlock target;
  SamplerBlock sampler;
  RunBlock run;
  SweepBlock sweep;
  DiagnoseBlock diagnose;
  /// Raw file content, hashed into the manifest.
  std::string source;

  ProposalConfig proposal() const {
    ProposalConfig c;
    c.variant = sampler.variant;
    c.ell = sampler.ell;
    c.gamma = sampler.gamma;
    c.dim = target.dim;
    c.lambda_override = sampler.lambda;
    return c;
  }

  SweepPlan sweep_plan() const {
    SweepPlan p;
    p.target = target.desc;
    p.variants = sweep.variants.empty() ? std::vector<Variant>{sampler.variant} : sweep.variants;
    p.n_grid = sweep.n_grid;
    p.ell_grid = sweep.ell_grid;
    p.gammas = sweep.gammas;
    p.steps = run.steps;
    p.replicates = run.replicates;
    p.master_seed = run.seed;
    p.burn_in = run.burn_in;
    p.ell_anchor_dim = sweep.ell_anchor_dim;
    p.diag_stride = sweep.diag_stride;
    return p;
  }

  /// Checks everything the chain and diagnose commands need.
  void validate() const {
    const auto t = target.make();
    proposal().validate(t);
    if (run.steps < 1) throw ConfigError("run.steps must be >= 1");
    if (run.replicates < 1) throw ConfigError("run.replicates must be >= 1");
    if (run.max_rows < 1) throw ConfigError("run.max_rows must be >= 1");
    if (!has_exact_sampler(t) && run.burn_in < 10000)
      throw ConfigError("run.burn_in must be >= 1e4 for targets without an exact sampler");
    if (run.output.empty()) throw ConfigError("run.output must be nonempty");
    if (diagnose.present) {
      const auto& names = diagnostic_names();
      if (std::find(names.begin(), names.end(), diagnose.name) == names.end())
        throw ConfigError("unknown diagnostic '" + diagnose.name + "'");
      if (!(diagnose.dt > 0.0)) throw ConfigError("diagnose.dt must be positive");
      if (diagnose.sde_dim < 1) throw ConfigError("diagnose.sde_dim must be >= 1");
      if (diagnose.sde_stride < 1) throw ConfigError("diagnose.sde_stride must be >= 1");
      for (double l : diagnose.lambdas)
        if (!(l > 0.0)) throw ConfigError("diagnose.lambdas must be positive");
    }
  }
};

namespace detail {

using Section = boost::property_tree::ptree;

/// Applies `fn(key, value)` to every entry, rejecting keys outside `allowed`.
template <class Fn>
void each_key(const Section& sec, const std::string& name, const std::set<std::string>& allowed, Fn&& fn) {
  for (const auto& [key, node] : sec) {
    if (!node.empty()) throw ConfigError("[" + name + "] " + key + ": nested keys are not supported");
    if (!allowed.count(key)) throw ConfigError("unknown key '" + key + "' in [" + name + "]");
    fn(key, node.data());
  }
}

inline void parse_target(const Section& sec, TargetBlock& b) {
  std::optional<std::string> cov;
  each_key(sec, "target", {"kind", "covariance", "kappa", "s", "N", "weights"},
           [&](const std::string& k, const std::string& v) {
             if (k == "kind") b.desc.kind = parse_psi_kind(v);
             else if (k == "covariance") cov = trim(v);
             else if (k == "kappa") b.desc.kappa = parse_real(v, "target.kappa");
             else if (k == "s") b.desc.s = parse_real(v, "target.s");
             else if (k == "N") b.dim = parse_count(v, "target.N");
             else if (k == "weights") b.desc.weights = parse_real_list(v, "target.weights");
           });
  if (cov) {
    if (*cov == "identity") b.desc.product = true;
    else if (*cov == "spectral") b.desc.product = false;
    else throw ConfigError("target.covariance must be 'spectral' or 'identity' (got '" + *cov + "')");
  }
}

inline void parse_sampler(const Section& sec, SamplerBlock& b) {
  each_key(sec, "sampler", {"variant", "ell", "gamma", "lambda"}, [&](const std::string& k, const std::string& v) {
    if (k == "variant") b.variant = parse_variant_or_throw(v);
    else if (k == "ell") b.ell = parse_real(v, "sampler.ell");
    else if (k == "gamma") b.gamma = parse_real(v, "sampler.gamma");
    else if (k == "lambda") b.lambda = parse_real(v, "sampler.lambda");
  });
}

inline void parse_run(const Section& sec, RunBlock& b) {
  each_key(sec, "run", {"steps", "burn_in", "seed", "replicates", "output", "max_rows"},
           [&](const std::string& k, const std::string& v) {
             if (k == "steps") b.steps = parse_count(v, "run.steps");
             else if (k == "burn_in") b.burn_in = parse_count(v, "run.burn_in");
             else if (k == "seed") b.seed = parse_count(v, "run.seed");
             else if (k == "replicates") b.replicates = parse_count(v, "run.replicates");
             else if (k == "output") b.output = trim(v);
             else if (k == "max_rows") b.max_rows = parse_count(v, "run.max_rows");
           });
}

inline void parse_sweep(const Section& sec, SweepBlock& b) {
  b.present = true;
  each_key(sec, "sweep", {"variants", "n_grid", "ell_grid", "gamma", "ell_anchor_dim", "diag_stride"},
           [&](const std::string& k, const std::string& v) {
             if (k == "variants") {
               b.variants.clear();
               for (const auto& item : split_list(v)) b.variants.push_back(parse_variant_or_throw(item));
             } else if (k == "n_grid") b.n_grid = parse_count_list(v, "sweep.n_grid");
             else if (k == "ell_grid") b.ell_grid = parse_real_list(v, "sweep.ell_grid");
             else if (k == "gamma") b.gammas = parse_real_list(v, "sweep.gamma");
             else if (k == "ell_anchor_dim") b.ell_anchor_dim = parse_count(v, "sweep.ell_anchor_dim");
             else if (k == "diag_stride") b.diag_stride = parse_count(v, "sweep.diag_stride");
           });
}

inline void parse_diagnose(const Section& sec, DiagnoseBlock& b) {
  b.present = true;
  each_key(sec, "diagnose",
           {"name", "samples", "n_inner", "n_states", "n_grid", "lambdas", "dt", "sde_steps", "sde_dim",
            "sde_stride", "h"},
           [&](const std::string& k, const std::string& v) {
             if (k == "name") b.name = trim(v);
             else if (k == "samples") b.samples = parse_count(v, "diagnose.samples");
             else if (k == "n_inner") b.n_inner = parse_count(v, "diagnose.n_inner");
             else if (k == "n_states") b.n_states = parse_count(v, "diagnose.n_states");
             else if (k == "n_grid") b.n_grid = parse_count_list(v, "diagnose.n_grid");
             else if (k == "lambdas") b.lambdas = parse_real_list(v, "diagnose.lambdas");
             else if (k == "dt") b.dt = parse_real(v, "diagnose.dt");
             else if (k == "sde_steps") b.sde_steps = parse_count(v, "diagnose.sde_steps");
             else if (k == "sde_dim") b.sde_dim = parse_count(v, "diagnose.sde_dim");
             else if (k == "sde_stride") b.sde_stride = parse_count(v, "diagnose.sde_stride");
             else if (k == "h") b.h = parse_real(v, "diagnose.h");
           });
}

}  // namespace detail

/// Parses configuration text. Structural errors and unknown keys throw
/// ConfigError; semantic checks live in RunConfig::validate.
inline RunConfig parse_config(const std::string& text) {
  boost::property_tree::ptree pt;
  std::istringstream in(text);
  try {
    boost::property_tree::read_ini(in, pt);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config line " + std::to_string(e.line()) + ": " + e.message());
  }
  RunConfig c;
  c.source = text;
  for (const auto& [name, sec] : pt) {
    if (sec.empty() && !sec.data().empty())
      throw ConfigError("key '" + name + "' appears outside any section");
    if (name == "target") detail::parse_target(sec, c.target);
    else if (name == "sampler") detail::parse_sampler(sec, c.sampler);
    else if (name == "run") detail::parse_run(sec, c.run);
    else if (name == "sweep") detail::parse_sweep(sec, c.sweep);
    else if (name == "diagnose") detail::parse_diagnose(sec, c.diagnose);
    else throw ConfigError("unknown section [" + name + "]");
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_config(ss.str());
}

}  // namespace proxmala::io
