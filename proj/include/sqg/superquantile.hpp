#pragma once

#include <functional>

#include "sqg/langevin.hpp"
#include "sqg/problem.hpp"

namespace sqg {

/// Upper: superquantile of the upper tail (pessimistic). Lower: the
/// lower-tail variant max_beta { beta - E[(beta - Z)_+] / delta } (optimistic).
enum class Tail { Upper, Lower };

enum class StepRule { ConstantAveraged, InverseSqrt };

inline Tail tail_for(Sense s) { return s == Sense::Pessimistic ? Tail::Upper : Tail::Lower; }

struct SqConfig {
  double delta = 0.1;
  std::size_t inner_iters = 64;
  double beta_bound = 10.0;
  double beta_init = 0.0;
  StepRule step_rule = StepRule::ConstantAveraged;
  Tail tail = Tail::Upper;

  void validate() const;
  /// 1 + 1/delta, the bound on every stochastic subgradient.
  double sigma() const { return 1.0 + 1.0 / delta; }
};

struct SqEstimate {
  double value = 0.0;
  double beta_hat = 0.0;
  std::size_t tail_hits = 0;
  std::size_t m_used = 0;
  /// Empty unless something deserves attention (empty tail, delta*M < 1).
  std::string diagnostics;
};

/// beta + (delta M)^{-1} sum (f_i - beta)_+ (Upper), or
/// beta - (delta M)^{-1} sum (beta - f_i)_+ (Lower).
double phi_value(double beta, ConstSpan fvals, double delta, Tail tail);

/// Stochastic subgradient of phi in beta for one sample, oriented so that
/// subtracting it is a descent step for Upper and an ascent step for Lower.
/// Ties (f == beta) take the zero-indicator branch.
double phi_subgradient(double beta, double f_sample, double delta, Tail tail);

/// Exact optimum of phi over beta for an empirical distribution (sort based).
/// Used as an oracle and by high-budget diagnostics.
double exact_empirical_superquantile(ConstSpan fvals, double delta, Tail tail);

/// Yields f(theta, X) for a fresh lower-level sample X on each call.
using ValueOracle = std::function<double()>;

/// Projected stochastic subgradient iterations on [-B, B]; returns the
/// uniform average of the iterates beta^1..beta^L.
double psgd_beta(const ValueOracle& sampler, const SqConfig& config);

/// Convenience overload that consumes precomputed values in order.
double psgd_beta(ConstSpan fvals, const SqConfig& config);

/// safety * max_i |f(theta, X_i)|, floored at `floor`: an observable stand-in
/// for the a-priori bound on the optimal threshold.
double calibrate_beta_bound(ConstSpan theta, const GibbsSampleBatch& calib_samples,
                            const BilevelProblem& problem, double safety = 2.0, double floor = 1.0);

/// Evaluates phi at beta_hat on a fresh batch drawn at theta.
SqEstimate sq_estimate(ConstSpan theta, double beta_hat, const GibbsSampleBatch& fresh,
                       double delta, Tail tail, const BilevelProblem& problem);

/// f(theta, X_i) for every row of the batch.
Vector evaluate_upper(const BilevelProblem& problem, ConstSpan theta, const GibbsSampleBatch& batch);

}  // namespace sqg
