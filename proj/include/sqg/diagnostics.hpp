#pragma once

#include <functional>
#include <iosfwd>

#include "sqg/langevin.hpp"
#include "sqg/problem.hpp"

namespace sqg {

/// Q_{1-delta}(Z) = inf{ t : P[Z > t] <= delta } on the empirical measure,
/// without interpolation.
double empirical_quantile(ConstSpan values, double delta);

/// W1 between two equal-size empirical measures on the line.
double wasserstein1_1d(ConstSpan a, ConstSpan b);

struct SweepRow {
  double delta = 0.0;
  double lambda = 0.0;
  double err_mean = 0.0;
  double err_std = 0.0;
  std::size_t n_seeds = 0;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  /// Least-squares slope of log(err_mean) against log(delta).
  double loglog_slope = 0.0;
};

struct SweepOptions {
  /// Base sampler settings; lambda is overwritten per row and the sample
  /// count is set to `samples`.
  LangevinConfig langevin;
  std::size_t samples = 100000;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
};

/// lambda as a function of delta, e.g. c * delta^(2(k+1)/k).
using LambdaRule = std::function<double(double delta)>;

LambdaRule power_lambda_rule(double c, std::size_t k);

/// For each delta, estimates the superquantile-Gibbs value at theta from a
/// large Langevin batch (exact empirical optimum over beta) and tabulates its
/// distance to the closed-form hyper-objective.
SweepResult approximation_sweep(const BilevelProblem& problem, ConstSpan theta, ConstSpan deltas,
                                const LambdaRule& lambda_rule, const SweepOptions& options);

/// "delta,lambda,err_mean,err_std,n_seeds"
void write_sweep_csv(std::ostream& os, const SweepResult& result);

/// Ordinary least-squares slope of y on x.
double ols_slope(ConstSpan x, ConstSpan y);

double mean(ConstSpan v);
/// Sample standard deviation (n-1 denominator); 0 for fewer than two values.
double stddev(ConstSpan v);

}  // namespace sqg
