#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>

#include <boost/random/normal_distribution.hpp>

namespace proxmala {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a64(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace detail

/// Stable seed for an independent stream identified by (master, cell,
/// replicate, tag). Depends only on the identity, never on scheduling.
constexpr std::uint64_t derive_seed(std::uint64_t master, std::uint64_t cell,
                                    std::uint64_t replicate,
                                    std::string_view tag) noexcept {
  std::uint64_t h = detail::splitmix64(master);
  h = detail::splitmix64(h ^ cell);
  h = detail::splitmix64(h ^ (replicate * 0x632be59bd9b4e019ULL));
  h = detail::splitmix64(h ^ detail::fnv1a64(tag));
  return h;
}

/// One owned random stream. Never share an instance between chains.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed) : engine_(seed), seed_(seed) {}

  double normal() { return normal_(engine_); }
  /// Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  double chi_squared(double dof) {
    return std::chi_squared_distribution<double>(dof)(engine_);
  }

  void fill_normal(std::span<double> out) {
    for (double& v : out) v = normal_(engine_);
  }

  /// Child stream for a sub-task; deterministic given this stream's state.
  RandomStream split() { return RandomStream(detail::splitmix64(engine_())); }

  std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::mt19937_64 engine_;
  // Ziggurat; roughly 2.5x faster than the std polar method.
  boost::random::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
  std::uint64_t seed_;
};

}  // namespace proxmala
