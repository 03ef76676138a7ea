#pragma once

#include "sqg/problem.hpp"
#include "sqg/zeroth_order.hpp"

namespace sqg {

/// ValuePenalty:    Phi = f + gamma (g - g*(theta))
/// GradNormPenalty: Phi = f + gamma/2 |grad_x g|^2
enum class PenaltyVariant { ValuePenalty, GradNormPenalty };

std::string to_string(PenaltyVariant v);

struct LowerValueOracle {
  enum class Kind { ClosedForm, InnerDescent };
  Kind kind = Kind::ClosedForm;
  std::size_t steps = 200;
  double step_size = 0.01;
};

struct PenaltyConfig {
  double gamma = 10.0;
  double joint_step = 0.01;
  std::size_t n_iters = 500;
  PenaltyVariant variant = PenaltyVariant::ValuePenalty;
  LowerValueOracle lower_value_oracle;
  /// Update theta first and recompute the x-gradient at the new theta.
  bool alternating = false;
  /// Halve the step (up to 30 times) while an update would increase Phi;
  /// keep the current state if none of them decreases it.
  bool backtrack = true;

  void validate(const BilevelProblem& problem) const;
};

double penalty_objective(const BilevelProblem& problem, ConstSpan theta, ConstSpan x,
                         const PenaltyConfig& config);

struct PenaltyGradient {
  Vector theta;
  Vector x;
};

PenaltyGradient penalty_gradient(const BilevelProblem& problem, ConstSpan theta, ConstSpan x,
                                 const PenaltyConfig& config);

/// Joint gradient descent on Phi with theta projected onto the domain. When
/// `x0` is empty it is drawn from N(0, I/d) using `seed`. Records use the same
/// schema as pszo_minsel; psi_tilde holds Phi, and best-so-far selection uses
/// the closed-form hyper-objective when the problem has one (Phi otherwise).
OuterTrajectory pbgd_run(const BilevelProblem& problem, const PenaltyConfig& config, ConstSpan theta0,
                         ConstSpan x0, std::uint64_t seed);

}  // namespace sqg
