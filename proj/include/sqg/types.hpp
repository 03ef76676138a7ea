#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace sqg {

using Vector = std::vector<double>;
using ConstSpan = std::span<const double>;
using MutSpan = std::span<double>;

/// Thrown for malformed arguments (dimension mismatch, nonpositive step, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a configuration is internally inconsistent or describes an empty set.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A Langevin chain left the finite region. Carries the chain and step where it happened.
class SamplerDivergence : public std::runtime_error {
 public:
  SamplerDivergence(std::size_t chain, std::size_t step, const std::string& what)
      : std::runtime_error(what), chain_(chain), step_(step) {}

  std::size_t chain() const noexcept { return chain_; }
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t chain_;
  std::size_t step_;
};

double dot(ConstSpan a, ConstSpan b);
double norm(ConstSpan a);
double distance(ConstSpan a, ConstSpan b);
bool all_finite(ConstSpan a);

}  // namespace sqg
