#include "sqg/zeroth_order.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <ostream>
#include <sstream>

namespace sqg {

namespace {

// stream tags
constexpr std::uint64_t kDirections = 1;
constexpr std::uint64_t kQuery = 2;
constexpr std::uint64_t kCenter = 3;
constexpr std::uint64_t kReeval = 4;

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t scaled(std::size_t n, double factor) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(static_cast<double>(n) * factor)));
}

}  // namespace

void SurrogateConfig::validate() const {
  sq.validate();
  langevin.validate();
  if (fresh_samples == 0) throw ConfigError("surrogate: fresh_samples must be positive");
  if (!(bound_safety >= 1.0)) throw ConfigError("surrogate: bound_safety must be >= 1");
  if (!(bound_floor > 0.0)) throw ConfigError("surrogate: bound_floor must be positive");
}

SurrogateConfig experiment_surrogate(std::size_t lower_dim) {
  SurrogateConfig c;
  c.langevin.strict = true;
  c.langevin.step_size = 0.02;
  c.langevin.burn_in = 150;
  c.langevin.steps_per_sample = 1;
  c.langevin.init = LangevinInit::gaussian(1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(lower_dim, 1))));
  c.sq.inner_iters = 64;
  c.fresh_samples = 64;
  return c;
}

SqEstimate query_surrogate(const BilevelProblem& problem, ConstSpan theta,
                           const SurrogateConfig& config, double beta0, std::uint64_t seed,
                           double budget, const GibbsSampleBatch* fresh_override) {
  SqConfig sq = config.sq;
  sq.tail = tail_for(problem.sense);
  sq.inner_iters = scaled(sq.inner_iters, budget);

  const GibbsSampleBatch psgd_batch = sample_gibbs(
      problem, theta, config.langevin.with_sample_count(sq.inner_iters), derive_seed(seed, {1}));
  const Vector fvals = evaluate_upper(problem, theta, psgd_batch);
  if (config.calibrate_bound) {
    sq.beta_bound = calibrate_beta_bound(theta, psgd_batch, problem, config.bound_safety,
                                         config.bound_floor);
  }
  sq.beta_init = std::clamp(beta0, -sq.beta_bound, sq.beta_bound);
  const double beta_hat = psgd_beta(fvals, sq);

  if (fresh_override) return sq_estimate(theta, beta_hat, *fresh_override, sq.delta, sq.tail, problem);
  const GibbsSampleBatch fresh =
      sample_gibbs(problem, theta, config.langevin.with_sample_count(scaled(config.fresh_samples, budget)),
                   derive_seed(seed, {2}));
  return sq_estimate(theta, beta_hat, fresh, sq.delta, sq.tail, problem);
}

void OuterConfig::validate(const BilevelProblem& problem) const {
  surrogate.validate();
  if (batch_directions == 0) throw ConfigError("outer: batch_directions must be positive");
  if (!(rho > 0.0)) throw ConfigError("outer: rho must be positive");
  if (!(eta > 0.0)) throw ConfigError("outer: eta must be positive");
  if (!(reeval_factor > 0.0)) throw ConfigError("outer: reeval_factor must be positive");
  if (theta0.size() != problem.upper_dim) {
    throw ConfigError("outer: theta0 has dimension " + std::to_string(theta0.size()) +
                      " but the problem expects " + std::to_string(problem.upper_dim));
  }
  if (boundary_mode == BoundaryMode::Interiorize) interiorize(problem.domain, rho);
}

Vector sample_unit_sphere(std::size_t m, Rng& rng) {
  if (m == 0) throw InvalidArgument("sample_unit_sphere: dimension must be positive");
  Vector u(m);
  double r = 0.0;
  do {
    for (auto& v : u) v = rng.normal();
    r = norm(u);
  } while (r == 0.0);
  for (auto& v : u) v /= r;
  return u;
}

Vector two_point_estimator(ConstSpan values_plus, ConstSpan values_minus,
                           const std::vector<Vector>& directions, double rho, std::size_t m) {
  if (values_plus.size() != values_minus.size() || values_plus.size() != directions.size()) {
    throw InvalidArgument("two_point_estimator: values and directions must have equal length");
  }
  if (directions.empty()) throw InvalidArgument("two_point_estimator: no directions");
  if (!(rho > 0.0)) throw InvalidArgument("two_point_estimator: rho must be positive");
  const double scale = static_cast<double>(m) / (2.0 * rho * static_cast<double>(directions.size()));
  Vector g(m, 0.0);
  for (std::size_t t = 0; t < directions.size(); ++t) {
    if (directions[t].size() != m) throw InvalidArgument("two_point_estimator: direction has wrong dimension");
    const double diff = values_plus[t] - values_minus[t];
    for (std::size_t i = 0; i < m; ++i) g[i] += scale * diff * directions[t][i];
  }
  return g;
}

void select_best(OuterTrajectory& traj, const BilevelProblem& problem) {
  if (traj.records.empty()) return;
  std::size_t best = 0;
  for (std::size_t i = 1; i < traj.records.size(); ++i) {
    if (traj.records[i].objective < traj.records[best].objective) best = i;
  }
  traj.best.index = best;
  traj.best.theta = traj.records[best].theta;
  traj.best.value = traj.records[best].objective;
  traj.best.error.reset();
  if (problem.theta_star) traj.best.error = distance(traj.best.theta, *problem.theta_star);
}

OuterTrajectory pszo_minsel(const BilevelProblem& problem, const OuterConfig& config) {
  config.validate(problem);
  using Clock = std::chrono::steady_clock;
  const std::size_t m = problem.upper_dim;
  const UpperDomain& domain = problem.domain;
  const std::optional<InteriorizedDomain> inner =
      config.boundary_mode == BoundaryMode::Interiorize
          ? std::optional<InteriorizedDomain>(interiorize(domain, config.rho))
          : std::nullopt;

  OuterTrajectory traj;
  Vector theta = domain.project(config.theta0);
  double beta_plus = config.surrogate.sq.beta_init;
  double beta_minus = config.surrogate.sq.beta_init;
  const std::size_t b = config.batch_directions;

  for (std::size_t n = 0; n < config.n_outer; ++n) {
    const auto start = Clock::now();
    const Vector center = inner ? inner->shrunk.project(theta) : theta;

    Rng dir_rng(derive_seed(config.seed, {kDirections, n}));
    std::vector<Vector> dirs;
    dirs.reserve(b);
    for (std::size_t t = 0; t < b; ++t) dirs.push_back(sample_unit_sphere(m, dir_rng));

    std::optional<GibbsSampleBatch> center_batch;
    try {
      if (config.reuse_center_batch) {
        center_batch = sample_gibbs(
            problem, center, config.surrogate.langevin.with_sample_count(config.surrogate.fresh_samples),
            derive_seed(config.seed, {kCenter, n}));
      }
      Vector plus(b), minus(b);
      double beta_sum_plus = 0.0, beta_sum_minus = 0.0;
      for (std::size_t t = 0; t < b; ++t) {
        for (int sign : {+1, -1}) {
          Vector point(m);
          for (std::size_t i = 0; i < m; ++i) point[i] = center[i] + sign * config.rho * dirs[t][i];
          if (!inner) domain.project_inplace(point);
          const double beta0 = sign > 0 ? beta_plus : beta_minus;
          const SqEstimate est = query_surrogate(
              problem, point, config.surrogate, beta0,
              derive_seed(config.seed, {kQuery, n, t, sign > 0 ? 0u : 1u}), 1.0,
              center_batch ? &*center_batch : nullptr);
          (sign > 0 ? plus : minus)[t] = est.value;
          (sign > 0 ? beta_sum_plus : beta_sum_minus) += est.beta_hat;
        }
      }
      if (config.warm_start) {
        beta_plus = beta_sum_plus / static_cast<double>(b);
        beta_minus = beta_sum_minus / static_cast<double>(b);
      }

      IterationRecord rec;
      rec.iter = n;
      rec.theta = theta;
      rec.estimator = two_point_estimator(plus, minus, dirs, config.rho, m);
      if (!all_finite(rec.estimator)) {
        std::ostringstream os;
        os << "nonfinite gradient estimate at outer iteration " << n;
        throw RunAborted(os.str(), traj);
      }
      rec.gmap_norm = norm(gradient_mapping(domain, center, rec.estimator, config.eta));
      double psi = 0.0;
      for (std::size_t t = 0; t < b; ++t) psi += plus[t] + minus[t];
      rec.psi_tilde = psi / static_cast<double>(2 * b);
      rec.beta_hat = 0.5 * (beta_sum_plus + beta_sum_minus) / static_cast<double>(b);

      Vector next(m);
      for (std::size_t i = 0; i < m; ++i) next[i] = center[i] - config.eta * rec.estimator[i];
      domain.project_inplace(next);
      rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      traj.records.push_back(std::move(rec));
      theta = std::move(next);
    } catch (const SamplerDivergence& e) {
      std::ostringstream os;
      os << "outer iteration " << n << ": " << e.what();
      throw RunAborted(os.str(), traj);
    }
  }

  IterationRecord last;
  last.iter = config.n_outer;
  last.theta = theta;
  last.gmap_norm = kNaN;
  last.psi_tilde = kNaN;
  last.beta_hat = traj.records.empty() ? config.surrogate.sq.beta_init : traj.records.back().beta_hat;
  traj.records.push_back(std::move(last));

  // Post-hoc re-evaluation: in-loop values are too noisy to select on.
  for (auto& rec : traj.records) {
    try {
      rec.objective = query_surrogate(problem, rec.theta, config.surrogate, rec.beta_hat,
                                      derive_seed(config.seed, {kReeval, rec.iter}),
                                      config.reeval_factor)
                          .value;
    } catch (const SamplerDivergence& e) {
      throw RunAborted(std::string("re-evaluation: ") + e.what(), traj);
    }
  }
  select_best(traj, problem);
  return traj;
}

Vector stationarity_report(const OuterTrajectory& trajectory) {
  if (trajectory.records.empty()) throw InvalidArgument("stationarity_report: empty trajectory");
  Vector out;
  for (const auto& r : trajectory.records) {
    if (!r.estimator.empty()) out.push_back(r.gmap_norm);
  }
  return out;
}

void write_trajectory_csv(std::ostream& os, const OuterTrajectory& traj, const CsvOptions& options) {
  const std::size_t m = traj.records.empty() ? 0 : traj.records.front().theta.size();
  os << "iter";
  for (std::size_t i = 0; i < m; ++i) os << ",theta_" << (i + 1);
  os << ",gmap_norm,psi_tilde,wall_ms,method\n";
  os.precision(17);
  for (const auto& r : traj.records) {
    os << r.iter;
    for (double v : r.theta) os << "," << v;
    os << "," << r.gmap_norm << "," << r.psi_tilde << "," << (options.zero_wall_time ? 0.0 : r.wall_ms)
       << "," << traj.method << "\n";
  }
}

void write_best_csv(std::ostream& os, const OuterTrajectory& traj) {
  const std::size_t m = traj.best.theta.size();
  os << "best_iter";
  for (std::size_t i = 0; i < m; ++i) os << ",best_theta_" << (i + 1);
  os << ",best_value,error_vs_theta_star\n";
  os.precision(17);
  os << traj.best.index;
  for (double v : traj.best.theta) os << "," << v;
  os << "," << traj.best.value << ",";
  if (traj.best.error) os << *traj.best.error;
  os << "\n";
}

}  // namespace sqg
