#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace proxmala {

/// Base of every exception thrown by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A value violates a documented precondition (bad κ, negative step, ...).
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Two operands live in truncations of different dimension.
class DimensionError : public Error {
 public:
  DimensionError(std::size_t expected, std::size_t actual)
      : Error("dimension mismatch: expected " + std::to_string(expected) +
              ", got " + std::to_string(actual)),
        expected_(expected),
        actual_(actual) {}

  std::size_t expected() const noexcept { return expected_; }
  std::size_t actual() const noexcept { return actual_; }

 private:
  std::size_t expected_;
  std::size_t actual_;
};

/// The requested operation has no implementation for this target.
class UnsupportedError : public Error {
 public:
  using Error::Error;
};

/// An iterative solver hit its iteration cap. Carries the best iterate.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> best,
                   double residual)
      : Error(what), best_(std::move(best)), residual_(residual) {}

  const std::vector<double>& best_iterate() const noexcept { return best_; }
  double residual() const noexcept { return residual_; }

 private:
  std::vector<double> best_;
  double residual_;
};

inline void require_dim(std::size_t expected, std::size_t actual) {
  if (expected != actual) throw DimensionError(expected, actual);
}

}  // namespace proxmala
