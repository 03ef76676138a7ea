#pragma once

#include <iosfwd>
#include <optional>

#include "sqg/problem.hpp"
#include "sqg/types.hpp"

namespace sqg {

struct LangevinInit {
  enum class Kind { Zero, GaussianScale, Explicit };
  Kind kind = Kind::GaussianScale;
  double sigma = 1.0;
  /// Explicit: one starting point per chain (or a single point shared by all chains).
  std::vector<Vector> points;

  static LangevinInit zero() { return {Kind::Zero, 0.0, {}}; }
  static LangevinInit gaussian(double sigma) { return {Kind::GaussianScale, sigma, {}}; }
  static LangevinInit explicit_points(std::vector<Vector> pts) {
    return {Kind::Explicit, 0.0, std::move(pts)};
  }
};

/// Unadjusted Langevin chain settings. With `strict` set, every retained
/// sample comes from its own chain (n_chains is then the sample count and
/// samples_per_chain is 1), which gives i.i.d. draws.
struct LangevinConfig {
  double lambda = 0.01;
  double step_size = 0.01;
  std::size_t burn_in = 1000;
  std::size_t steps_per_sample = 10;
  std::size_t n_chains = 1;
  std::size_t samples_per_chain = 1;
  bool strict = false;
  LangevinInit init = LangevinInit::gaussian(1.0);
  /// Optional smoothness estimate of g in x; enables the step-size check h < 2 lambda / L.
  std::optional<double> smoothness;

  std::size_t total_samples() const { return n_chains * samples_per_chain; }
  /// Throws ConfigError on invalid settings; returns a warning message (possibly empty).
  std::string validate() const;
  /// Copy of this config sized to produce exactly `count` samples.
  LangevinConfig with_sample_count(std::size_t count) const;
};

/// Row-major M x d matrix of samples drawn near the Gibbs measure at `theta`.
struct GibbsSampleBatch {
  Vector samples;
  std::size_t rows = 0;
  std::size_t cols = 0;
  Vector theta;
  LangevinConfig config;
  std::uint64_t master_seed = 0;
  std::size_t chain_begin = 0;
  std::size_t chain_end = 0;

  ConstSpan row(std::size_t i) const { return ConstSpan(samples).subspan(i * cols, cols); }
  std::size_t size() const { return rows; }
};

/// One Euler-Maruyama step: x - h * grad + sqrt(2 lambda h) * noise.
Vector lmc_step(ConstSpan x, ConstSpan grad, double h, double lambda, ConstSpan noise,
                std::size_t step_index = 0);

/// Runs config.n_chains independent chains, each with an RNG stream derived
/// from (seed, chain index). Output does not depend on chain scheduling.
GibbsSampleBatch sample_gibbs(const BilevelProblem& problem, ConstSpan theta,
                              const LangevinConfig& config, std::uint64_t seed);

/// Same as sample_gibbs but with an explicit lower-level gradient, for targets
/// that are not attached to a BilevelProblem.
GibbsSampleBatch sample_gibbs(const GradFn& grad_x_g, std::size_t lower_dim, ConstSpan theta,
                              const LangevinConfig& config, std::uint64_t seed);

/// Debug dump: "chain,step,x_1,...,x_d". `step` is the chain step at which the row was recorded.
void write_samples_csv(std::ostream& os, const GibbsSampleBatch& batch);

}  // namespace sqg
