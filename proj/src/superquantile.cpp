#include "sqg/superquantile.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace sqg {

void SqConfig::validate() const {
  if (!(delta > 0.0 && delta <= 0.5)) {
    throw ConfigError("superquantile: delta must lie in (0, 1/2], got " + std::to_string(delta));
  }
  if (inner_iters == 0) throw InvalidArgument("superquantile: inner_iters must be positive");
  if (!(beta_bound > 0.0)) throw ConfigError("superquantile: beta_bound must be positive");
  if (std::abs(beta_init) > beta_bound) {
    throw ConfigError("superquantile: |beta_init| must not exceed beta_bound");
  }
}

double phi_value(double beta, ConstSpan fvals, double delta, Tail tail) {
  if (fvals.empty()) throw InvalidArgument("phi_value: empty sample");
  if (!(delta > 0.0 && delta <= 0.5)) throw InvalidArgument("phi_value: delta must lie in (0, 1/2]");
  double excess = 0.0;
  if (tail == Tail::Upper) {
    for (double f : fvals) excess += std::max(f - beta, 0.0);
    return beta + excess / (delta * static_cast<double>(fvals.size()));
  }
  for (double f : fvals) excess += std::max(beta - f, 0.0);
  return beta - excess / (delta * static_cast<double>(fvals.size()));
}

double phi_subgradient(double beta, double f_sample, double delta, Tail tail) {
  if (tail == Tail::Upper) return 1.0 - (f_sample > beta ? 1.0 / delta : 0.0);
  return -(1.0 - (f_sample < beta ? 1.0 / delta : 0.0));
}

double exact_empirical_superquantile(ConstSpan fvals, double delta, Tail tail) {
  if (fvals.empty()) throw InvalidArgument("exact_empirical_superquantile: empty sample");
  // phi is piecewise linear in beta with kinks at the sample values, so the
  // optimum is attained at one of them.
  Vector sorted(fvals.begin(), fvals.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  const double mass = delta * n;
  if (tail == Tail::Upper) {
    // Optimal beta is the (1-delta) quantile; value = beta + mean excess / delta.
    const auto k = static_cast<std::size_t>(std::ceil(mass - 1e-12));
    const double beta = sorted[sorted.size() - std::min(k, sorted.size())];
    return phi_value(beta, sorted, delta, Tail::Upper);
  }
  const auto k = static_cast<std::size_t>(std::ceil(mass - 1e-12));
  const double beta = sorted[std::min(k, sorted.size()) - 1];
  return phi_value(beta, sorted, delta, Tail::Lower);
}

double psgd_beta(const ValueOracle& sampler, const SqConfig& config) {
  config.validate();
  const double B = config.beta_bound;
  const double L = static_cast<double>(config.inner_iters);
  const double sigma = config.sigma();
  double beta = config.beta_init;
  double sum = 0.0;
  for (std::size_t l = 0; l < config.inner_iters; ++l) {
    const double eta = config.step_rule == StepRule::ConstantAveraged
                           ? B / (sigma * std::sqrt(L))
                           : B / (sigma * std::sqrt(static_cast<double>(l) + 1.0));
    const double f = sampler();
    // 0 lies in the per-sample subdifferential at a tie since delta <= 1/2
    const double g = f == beta ? 0.0 : phi_subgradient(beta, f, config.delta, config.tail);
    beta = std::clamp(beta - eta * g, -B, B);
    sum += beta;
  }
  return sum / L;
}

double psgd_beta(ConstSpan fvals, const SqConfig& config) {
  if (fvals.size() < config.inner_iters) {
    throw InvalidArgument("psgd_beta: fewer values than inner iterations");
  }
  std::size_t next = 0;
  return psgd_beta([&] { return fvals[next++]; }, config);
}

Vector evaluate_upper(const BilevelProblem& problem, ConstSpan theta, const GibbsSampleBatch& batch) {
  Vector out(batch.rows);
  for (std::size_t i = 0; i < batch.rows; ++i) out[i] = problem.f(theta, batch.row(i));
  return out;
}

double calibrate_beta_bound(ConstSpan theta, const GibbsSampleBatch& calib_samples,
                            const BilevelProblem& problem, double safety, double floor) {
  if (calib_samples.rows == 0) throw InvalidArgument("calibrate_beta_bound: empty batch");
  if (!(safety >= 1.0)) throw InvalidArgument("calibrate_beta_bound: safety must be >= 1");
  double worst = 0.0;
  for (std::size_t i = 0; i < calib_samples.rows; ++i) {
    worst = std::max(worst, std::abs(problem.f(theta, calib_samples.row(i))));
  }
  return std::max(safety * worst, floor);
}

SqEstimate sq_estimate(ConstSpan theta, double beta_hat, const GibbsSampleBatch& fresh, double delta,
                       Tail tail, const BilevelProblem& problem) {
  const Vector fvals = evaluate_upper(problem, theta, fresh);
  SqEstimate est;
  est.beta_hat = beta_hat;
  est.value = phi_value(beta_hat, fvals, delta, tail);
  est.m_used = fvals.size();
  for (double f : fvals) {
    if (tail == Tail::Upper ? f > beta_hat : f < beta_hat) ++est.tail_hits;
  }
  std::ostringstream diag;
  if (est.tail_hits == 0) diag << "empty tail at beta_hat=" << beta_hat << "; ";
  if (delta * static_cast<double>(fvals.size()) < 1.0) {
    diag << "delta*M=" << delta * static_cast<double>(fvals.size())
         << " < 1: tail governed by a single order statistic";
  }
  est.diagnostics = diag.str();
  return est;
}

}  // namespace sqg
