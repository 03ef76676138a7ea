#include "sqg/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>

#include "sqg/superquantile.hpp"

namespace sqg {

double empirical_quantile(ConstSpan values, double delta) {
  if (values.empty()) throw InvalidArgument("empirical_quantile: empty input");
  if (!(delta > 0.0 && delta < 1.0)) throw InvalidArgument("empirical_quantile: delta must lie in (0, 1)");
  Vector sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double n = static_cast<double>(sorted.size());
  for (std::size_t i = 0; i < sorted.size(); ++i) {
    // number of values strictly above sorted[i]
    const auto above = static_cast<double>(sorted.end() - std::upper_bound(sorted.begin(), sorted.end(), sorted[i]));
    if (above / n <= delta) return sorted[i];
  }
  return sorted.back();
}

double wasserstein1_1d(ConstSpan a, ConstSpan b) {
  if (a.size() != b.size()) throw InvalidArgument("wasserstein1_1d: inputs must have equal length");
  if (a.empty()) return 0.0;
  Vector sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  double acc = 0.0;
  for (std::size_t i = 0; i < sa.size(); ++i) acc += std::abs(sa[i] - sb[i]);
  return acc / static_cast<double>(sa.size());
}

double mean(ConstSpan v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double stddev(ConstSpan v) {
  if (v.size() < 2) return 0.0;
  const double mu = mean(v);
  double acc = 0.0;
  for (double x : v) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(v.size() - 1));
}

double ols_slope(ConstSpan x, ConstSpan y) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("ols_slope: need two or more paired values");
  const double mx = mean(x), my = mean(y);
  double sxy = 0.0, sxx = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
  }
  return sxy / sxx;
}

LambdaRule power_lambda_rule(double c, std::size_t k) {
  const double exponent = 2.0 * static_cast<double>(k + 1) / static_cast<double>(k);
  return [c, exponent](double delta) { return c * std::pow(delta, exponent); };
}

SweepResult approximation_sweep(const BilevelProblem& problem, ConstSpan theta, ConstSpan deltas,
                                const LambdaRule& lambda_rule, const SweepOptions& options) {
  if (!problem.closed_form_hyper) {
    throw ConfigError("approximation_sweep: problem '" + problem.name + "' has no closed-form hyper-objective");
  }
  if (deltas.empty() || options.seeds.empty()) throw ConfigError("approximation_sweep: empty delta or seed list");
  const double target = problem.closed_form_hyper(theta);
  const Tail tail = tail_for(problem.sense);

  SweepResult result;
  for (double delta : deltas) {
    LangevinConfig cfg = options.langevin.with_sample_count(options.samples);
    cfg.lambda = lambda_rule(delta);
    Vector errs;
    for (std::uint64_t seed : options.seeds) {
      const GibbsSampleBatch batch = sample_gibbs(problem, theta, cfg, seed);
      const Vector fvals = evaluate_upper(problem, theta, batch);
      errs.push_back(std::abs(exact_empirical_superquantile(fvals, delta, tail) - target));
    }
    result.rows.push_back({delta, cfg.lambda, mean(errs), stddev(errs), errs.size()});
  }
  if (result.rows.size() >= 2) {
    Vector lx, ly;
    for (const auto& r : result.rows) {
      lx.push_back(std::log(r.delta));
      ly.push_back(std::log(std::max(r.err_mean, 1e-300)));
    }
    result.loglog_slope = ols_slope(lx, ly);
  }
  return result;
}

void write_sweep_csv(std::ostream& os, const SweepResult& result) {
  os << "delta,lambda,err_mean,err_std,n_seeds\n";
  os.precision(17);
  for (const auto& r : result.rows) {
    os << r.delta << "," << r.lambda << "," << r.err_mean << "," << r.err_std << "," << r.n_seeds << "\n";
  }
}

}  // namespace sqg
