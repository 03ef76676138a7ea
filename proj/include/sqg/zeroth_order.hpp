#pragma once

#include <iosfwd>

#include "sqg/langevin.hpp"
#include "sqg/random.hpp"
#include "sqg/superquantile.hpp"

namespace sqg {

/// How one surrogate value psi~(theta) is computed: a Langevin batch of L
/// samples drives PSGD for the threshold, then an independent batch of M
/// samples evaluates phi at that threshold.
struct SurrogateConfig {
  SqConfig sq;
  LangevinConfig langevin;
  std::size_t fresh_samples = 64;
  bool calibrate_bound = true;
  double bound_safety = 2.0;
  double bound_floor = 1.0;

  void validate() const;
};

/// Settings used by the experiments: one sample per chain, step 0.02, 150
/// burn-in steps, chains started at N(0, I/d).
SurrogateConfig experiment_surrogate(std::size_t lower_dim);

/// psi~(theta). `tail` follows the problem sense. `budget` scales both the
/// PSGD and the fresh sample counts. With `fresh_override` the evaluation batch
/// is taken from there instead of being drawn at theta.
SqEstimate query_surrogate(const BilevelProblem& problem, ConstSpan theta,
                           const SurrogateConfig& config, double beta0, std::uint64_t seed,
                           double budget = 1.0, const GibbsSampleBatch* fresh_override = nullptr);

enum class BoundaryMode { Interiorize, ClampEvaluate };

struct OuterConfig {
  std::size_t n_outer = 500;
  std::size_t batch_directions = 8;
  double rho = 0.1;
  double eta = 0.05;
  SurrogateConfig surrogate;
  BoundaryMode boundary_mode = BoundaryMode::Interiorize;
  /// Evaluate every perturbed query on one batch drawn at the (interiorized) center.
  bool reuse_center_batch = false;
  /// Start PSGD from the previous iteration's threshold for the same perturbation sign.
  bool warm_start = true;
  /// Sample-budget multiplier for the post-hoc re-evaluation used in best-so-far selection.
  double reeval_factor = 4.0;
  Vector theta0{1.0};
  std::uint64_t seed = 0;

  void validate(const BilevelProblem& problem) const;
};

struct IterationRecord {
  std::size_t iter = 0;
  Vector theta;
  /// Two-point gradient estimate at this iterate; empty for the terminal record.
  Vector estimator;
  double gmap_norm = 0.0;
  /// Mean of the 2*b_u perturbed surrogate values (NaN when none were taken).
  double psi_tilde = 0.0;
  /// Selection objective after the loop (re-evaluated surrogate or method-specific value).
  double objective = 0.0;
  double beta_hat = 0.0;
  double wall_ms = 0.0;
};

struct BestIterate {
  std::size_t index = 0;
  Vector theta;
  double value = 0.0;
  std::optional<double> error;
};

struct OuterTrajectory {
  std::string method = "pszo-minsel";
  std::vector<IterationRecord> records;
  BestIterate best;
};

/// Raised when a run stops early; carries what was recorded so far.
class RunAborted : public std::runtime_error {
 public:
  RunAborted(const std::string& what, OuterTrajectory partial)
      : std::runtime_error(what), partial_(std::move(partial)) {}
  const OuterTrajectory& partial() const noexcept { return partial_; }

 private:
  OuterTrajectory partial_;
};

/// Uniform direction on S^{m-1}: a normalized standard-normal draw.
Vector sample_unit_sphere(std::size_t m, Rng& rng);

/// (m / (2 rho b_u)) sum_t (plus_t - minus_t) u_t
Vector two_point_estimator(ConstSpan values_plus, ConstSpan values_minus,
                           const std::vector<Vector>& directions, double rho, std::size_t m);

/// Projected stochastic zeroth-order descent on the superquantile-Gibbs
/// surrogate with post-hoc best-so-far selection.
OuterTrajectory pszo_minsel(const BilevelProblem& problem, const OuterConfig& config);

/// Gradient-mapping norms of every non-terminal record.
Vector stationarity_report(const OuterTrajectory& trajectory);

/// Picks the record with the smallest `objective` and fills best (and the error
/// against theta_star when known).
void select_best(OuterTrajectory& trajectory, const BilevelProblem& problem);

struct CsvOptions {
  /// Write wall_ms as 0 so that exports are byte-reproducible.
  bool zero_wall_time = false;
};

/// "iter,theta_1..theta_m,gmap_norm,psi_tilde,wall_ms,method"
void write_trajectory_csv(std::ostream& os, const OuterTrajectory& trajectory,
                          const CsvOptions& options = {});
/// "best_iter,best_theta_1..,best_value,error_vs_theta_star"
void write_best_csv(std::ostream& os, const OuterTrajectory& trajectory);

}  // namespace sqg
