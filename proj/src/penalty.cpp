#include "sqg/penalty.hpp"

#include <chrono>
#include <cmath>
#include <sstream>

namespace sqg {

std::string to_string(PenaltyVariant v) {
  return v == PenaltyVariant::ValuePenalty ? "v-pbgd" : "g-pbgd";
}

void PenaltyConfig::validate(const BilevelProblem& p) const {
  if (!(gamma >= 0.0)) throw ConfigError("penalty: gamma must be nonnegative");
  if (!(joint_step > 0.0)) throw ConfigError("penalty: joint_step must be positive");
  if (!p.grad_theta_f || !p.grad_x_f || !p.grad_theta_g || !p.grad_x_g) {
    throw ConfigError("penalty: problem '" + p.name + "' lacks the gradients the baselines need");
  }
  if (variant == PenaltyVariant::ValuePenalty &&
      lower_value_oracle.kind == LowerValueOracle::Kind::ClosedForm &&
      (!p.lower_value || !p.grad_lower_value)) {
    throw ConfigError("penalty: value penalty with a closed-form oracle needs g*(theta) on '" + p.name + "'");
  }
  if (lower_value_oracle.kind == LowerValueOracle::Kind::InnerDescent &&
      !(lower_value_oracle.step_size > 0.0)) {
    throw ConfigError("penalty: inner-descent step size must be positive");
  }
}

namespace {

// Approximate minimizer of g(theta, .) by gradient descent from x.
Vector inner_descent(const BilevelProblem& p, ConstSpan theta, ConstSpan x, const LowerValueOracle& o) {
  Vector z(x.begin(), x.end()), grad(z.size());
  for (std::size_t s = 0; s < o.steps; ++s) {
    p.grad_x_g(theta, z, grad);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= o.step_size * grad[i];
  }
  return z;
}

void hess_vec(const BilevelProblem& p, ConstSpan theta, ConstSpan x, ConstSpan v, MutSpan out) {
  if (p.hess_xx_g_vec) {
    p.hess_xx_g_vec(theta, x, v, out);
    return;
  }
  const double eps = 1e-5 * (1.0 + norm(x));
  Vector xp(x.begin(), x.end()), xm(x.begin(), x.end()), gp(x.size()), gm(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    xp[i] += eps * v[i];
    xm[i] -= eps * v[i];
  }
  p.grad_x_g(theta, xp, gp);
  p.grad_x_g(theta, xm, gm);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = (gp[i] - gm[i]) / (2.0 * eps);
}

void cross_vec(const BilevelProblem& p, ConstSpan theta, ConstSpan x, ConstSpan v, MutSpan out) {
  if (p.cross_theta_x_g_vec) {
    p.cross_theta_x_g_vec(theta, x, v, out);
    return;
  }
  Vector gx(x.size());
  const Vector fd = numerical_gradient([&](ConstSpan t) {
    p.grad_x_g(t, x, gx);
    return dot(gx, v);
  }, theta, 1e-5);
  std::copy(fd.begin(), fd.end(), out.begin());
}

}  // namespace

double penalty_objective(const BilevelProblem& p, ConstSpan theta, ConstSpan x, const PenaltyConfig& c) {
  const double f = p.f(theta, x);
  if (c.variant == PenaltyVariant::ValuePenalty) {
    double gstar = 0.0;
    if (c.lower_value_oracle.kind == LowerValueOracle::Kind::ClosedForm) {
      if (!p.lower_value) throw ConfigError("penalty: missing closed-form lower value on '" + p.name + "'");
      gstar = p.lower_value(theta);
    } else {
      gstar = p.g(theta, inner_descent(p, theta, x, c.lower_value_oracle));
    }
    return f + c.gamma * (p.g(theta, x) - gstar);
  }
  Vector gx(x.size());
  p.grad_x_g(theta, x, gx);
  return f + 0.5 * c.gamma * dot(gx, gx);
}

PenaltyGradient penalty_gradient(const BilevelProblem& p, ConstSpan theta, ConstSpan x,
                                 const PenaltyConfig& c) {
  const std::size_t m = theta.size(), d = x.size();
  PenaltyGradient out{Vector(m), Vector(d)};
  p.grad_theta_f(theta, x, out.theta);
  p.grad_x_f(theta, x, out.x);
  Vector tmp_m(m), tmp_d(d);
  if (c.variant == PenaltyVariant::ValuePenalty) {
    p.grad_theta_g(theta, x, tmp_m);
    Vector gstar_grad(m);
    if (c.lower_value_oracle.kind == LowerValueOracle::Kind::ClosedForm) {
      p.grad_lower_value(theta, gstar_grad);
    } else {
      // Danskin: grad g*(theta) = d/dtheta g(theta, x*) at the inner minimizer.
      p.grad_theta_g(theta, inner_descent(p, theta, x, c.lower_value_oracle), gstar_grad);
    }
    for (std::size_t i = 0; i < m; ++i) out.theta[i] += c.gamma * (tmp_m[i] - gstar_grad[i]);
    p.grad_x_g(theta, x, tmp_d);
    for (std::size_t i = 0; i < d; ++i) out.x[i] += c.gamma * tmp_d[i];
    return out;
  }
  Vector gx(d);
  p.grad_x_g(theta, x, gx);
  cross_vec(p, theta, x, gx, tmp_m);
  for (std::size_t i = 0; i < m; ++i) out.theta[i] += c.gamma * tmp_m[i];
  hess_vec(p, theta, x, gx, tmp_d);
  for (std::size_t i = 0; i < d; ++i) out.x[i] += c.gamma * tmp_d[i];
  return out;
}

constexpr int kMaxHalvings = 30;

OuterTrajectory pbgd_run(const BilevelProblem& p, const PenaltyConfig& c, ConstSpan theta0, ConstSpan x0,
                         std::uint64_t seed) {
  c.validate(p);
  if (theta0.size() != p.upper_dim) throw ConfigError("pbgd: theta0 has the wrong dimension");
  using Clock = std::chrono::steady_clock;

  Vector theta = p.domain.project(theta0);
  Vector x(p.lower_dim);
  if (x0.empty()) {
    Rng rng(derive_seed(seed, {0x78696e6974ull}));
    const double scale = 1.0 / std::sqrt(static_cast<double>(p.lower_dim));
    for (auto& v : x) v = scale * rng.normal();
  } else {
    if (x0.size() != p.lower_dim) throw ConfigError("pbgd: x0 has the wrong dimension");
    x.assign(x0.begin(), x0.end());
  }

  OuterTrajectory traj;
  traj.method = to_string(c.variant);
  auto objective = [&](ConstSpan th, ConstSpan xx) {
    return p.closed_form_hyper ? p.closed_form_hyper(th) : penalty_objective(p, th, xx, c);
  };

  for (std::size_t n = 0; n <= c.n_iters; ++n) {
    const auto start = Clock::now();
    PenaltyGradient grad = penalty_gradient(p, theta, x, c);
    IterationRecord rec;
    rec.iter = n;
    rec.theta = theta;
    rec.psi_tilde = penalty_objective(p, theta, x, c);
    rec.objective = objective(theta, x);
    rec.estimator = grad.theta;
    rec.gmap_norm = norm(gradient_mapping(p.domain, theta, grad.theta, c.joint_step));
    if (!all_finite(grad.theta) || !all_finite(grad.x) || !std::isfinite(rec.psi_tilde)) {
      std::ostringstream os;
      os << traj.method << ": nonfinite state at iteration " << n;
      throw RunAborted(os.str(), traj);
    }
    if (n == c.n_iters) {
      rec.estimator.clear();
      rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
      traj.records.push_back(std::move(rec));
      break;
    }

    double step = c.joint_step;
    for (int halvings = 0;; ++halvings) {
      Vector th_next = theta, x_next = x;
      for (std::size_t i = 0; i < th_next.size(); ++i) th_next[i] -= step * grad.theta[i];
      p.domain.project_inplace(th_next);
      const Vector gx = c.alternating ? penalty_gradient(p, th_next, x, c).x : grad.x;
      for (std::size_t i = 0; i < x_next.size(); ++i) x_next[i] -= step * gx[i];
      if (!c.backtrack || penalty_objective(p, th_next, x_next, c) <= rec.psi_tilde) {
        theta = std::move(th_next);
        x = std::move(x_next);
        break;
      }
      // No decrease at any tried step: the state is stationary at this resolution.
      if (halvings == kMaxHalvings) break;
      step *= 0.5;
    }

    rec.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - start).count();
    traj.records.push_back(std::move(rec));
  }
  select_best(traj, p);
  return traj;
}

}  // namespace sqg
