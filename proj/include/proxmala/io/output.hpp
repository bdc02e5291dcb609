#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include "proxmala/errors.hpp"
#include "proxmala/random.hpp"
#include "proxmala/samplers.hpp"
#include "proxmala/sweep.hpp"

namespace proxmala::io {

inline constexpr std::string_view kCodeVersion = "proxmala 0.1.0";
inline constexpr std::string_view kSeedingRule =
    "stream seed = derive_seed(master, cell, replicate, tag): splitmix64 chain over "
    "master, cell, replicate * 0x632be59bd9b4e019 and FNV-1a(tag); engine mt19937_64";

/// 17 significant digits, so values round-trip exactly.
inline std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string hash_hex(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string content_hash(std::string_view bytes) { return hash_hex(proxmala::detail::fnv1a64(bytes)); }

/// Writes via a temporary file and rename, so readers never see partial content.
inline void write_file(const std::filesystem::path& path, const std::string& content) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write '" + tmp + "'");
    f << content;
    if (!f) throw Error("write failed for '" + tmp + "'");
  }
  std::filesystem::rename(tmp, path);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

/// Ordered "key = value" lines.
class KeyValue {
 public:
  KeyValue& add(std::string key, std::string value) {
    items_.emplace_back(std::move(key), std::move(value));
    return *this;
  }
  KeyValue& add(std::string key, double v) { return add(std::move(key), format_real(v)); }
  template <class T>
    requires(std::is_integral_v<T> && !std::is_same_v<T, bool>)
  KeyValue& add(std::string key, T v) {
    return add(std::move(key), std::to_string(v));
  }
  KeyValue& add(std::string key, const char* v) { return add(std::move(key), std::string(v)); }
  KeyValue& add(std::string key, std::string_view v) { return add(std::move(key), std::string(v)); }

  const std::vector<std::pair<std::string, std::string>>& items() const noexcept { return items_; }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : items_) out += k + " = " + v + "\n";
    return out;
  }

 private:
  std::vector<std::pair<std::string, std::string>> items_;
};

/// Parses "key = value" lines back into pairs.
inline std::vector<std::pair<std::string, std::string>> parse_key_values(std::string_view text) {
  std::vector<std::pair<std::string, std::string>> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find(" = ");
    if (eq == std::string::npos) continue;
    out.emplace_back(line.substr(0, eq), line.substr(eq + 3));
  }
  return out;
}

/// step,q,accepted,jump_norm_s,coord1..coordK with K = min(8, N).
inline std::string records_csv(const std::vector<RecordRow>& rows, std::size_t n_coords) {
  std::string out = "step,q,accepted,jump_norm_s";
  for (std::size_t c = 1; c <= n_coords; ++c) out += ",coord" + std::to_string(c);
  out += "\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + "," + format_real(r.q) + "," + (r.accepted ? "1" : "0") + "," +
           format_real(r.jump_norm_s);
    for (std::size_t c = 0; c < n_coords; ++c) out += "," + format_real(r.coords[c]);
    out += "\n";
  }
  return out;
}

/// Sweep rows without the runtime column, which lives in a separate file.
inline std::string sweep_csv(const SweepResult& r) {
  std::string out =
      "cell,replicate,variant,N,ell,ell_eff,gamma,delta,acceptance,acceptance_se,mean_accept_prob,"
      "mean_sq_jump,mean_abs_i,mean_abs_e,seed,status\n";
  for (const auto& row : r.rows) {
    out += std::to_string(row.cell) + "," + std::to_string(row.replicate) + "," +
           std::string(to_string(row.variant)) + "," + std::to_string(row.n) + "," + format_real(row.ell) + "," +
           format_real(row.ell_eff) + "," + format_real(row.gamma) + "," + format_real(row.delta) + "," +
           format_real(row.acceptance) + "," + format_real(row.acceptance_se) + "," +
           format_real(row.mean_accept_prob) + "," + format_real(row.mean_sq_jump) + "," +
           format_real(row.mean_abs_i) + "," + format_real(row.mean_abs_e) + "," + std::to_string(row.seed) +
           "," + std::string(to_string(row.status)) + "\n";
  }
  return out;
}

inline std::string sweep_timings_csv(const SweepResult& r) {
  std::string out = "cell,replicate,runtime_s\n";
  for (const auto& row : r.rows)
    out += std::to_string(row.cell) + "," + std::to_string(row.replicate) + "," + format_real(row.runtime_s) + "\n";
  return out;
}

inline KeyValue sweep_row_kv(const SweepRow& row) {
  KeyValue kv;
  kv.add("cell", row.cell)
      .add("replicate", row.replicate)
      .add("variant", to_string(row.variant))
      .add("N", row.n)
      .add("ell", row.ell)
      .add("ell_eff", row.ell_eff)
      .add("gamma", row.gamma)
      .add("delta", row.delta)
      .add("acceptance", row.acceptance)
      .add("acceptance_se", row.acceptance_se)
      .add("mean_accept_prob", row.mean_accept_prob)
      .add("mean_sq_jump", row.mean_sq_jump)
      .add("mean_abs_i", row.mean_abs_i)
      .add("mean_abs_e", row.mean_abs_e)
      .add("seed", row.seed)
      .add("status", to_string(row.status));
  if (!row.error.empty()) kv.add("error", row.error);
  return kv;
}

/// Output-directory manifest. Hashed files must be reproducible bit for bit;
/// volatile files (run times) are listed without a hash.
struct Manifest {
  std::string command;
  std::string config_hash;
  std::uint64_t master_seed = 0;
  std::string status = "complete";
  std::vector<std::pair<std::string, std::string>> files;  ///< name, hash
  std::vector<std::string> volatile_files;
  std::vector<std::pair<std::string, std::string>> entries;  ///< extra lines

  void hash_file(const std::filesystem::path& dir, const std::string& name) {
    files.emplace_back(name, content_hash(read_file(dir / name)));
  }

  std::string str() const {
    KeyValue kv;
    kv.add("command", command)
        .add("code_version", kCodeVersion)
        .add("config_hash", config_hash)
        .add("master_seed", master_seed)
        .add("seeding_rule", kSeedingRule)
        .add("status", status);
    for (const auto& [n, h] : files) kv.add("file." + n, h);
    for (const auto& n : volatile_files) kv.add("volatile." + n, "unhashed");
    for (const auto& [k, v] : entries) kv.add(k, v);
    return kv.str();
  }

  void write(const std::filesystem::path& dir) const { write_file(dir / "manifest.txt", str()); }
};

}  // namespace proxmala::io
