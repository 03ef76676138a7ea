#include "sqg/problem.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "sqg/random.hpp"

namespace sqg {

std::string to_string(Sense s) { return s == Sense::Pessimistic ? "pessimistic" : "optimistic"; }

Sense sense_from_string(const std::string& s) {
  if (s == "pessimistic" || s == "Pessimistic") return Sense::Pessimistic;
  if (s == "optimistic" || s == "Optimistic") return Sense::Optimistic;
  throw ConfigError("unknown sense '" + s + "' (expected pessimistic or optimistic)");
}

Vector numerical_gradient(const std::function<double(ConstSpan)>& fn, ConstSpan at,
                          double rel_step) {
  Vector x(at.begin(), at.end());
  Vector grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double h = rel_step * (1.0 + std::abs(x[i]));
    const double x0 = x[i];
    x[i] = x0 + h;
    const double fp = fn(x);
    x[i] = x0 - h;
    const double fm = fn(x);
    x[i] = x0;
    grad[i] = (fp - fm) / (2.0 * h);
  }
  return grad;
}

namespace {

void compare(const std::string& label, const Vector& exact, const Vector& approx, double rel_tol,
             int point) {
  double diff = 0.0, scale = 1.0;
  for (std::size_t i = 0; i < exact.size(); ++i) {
    diff = std::max(diff, std::abs(exact[i] - approx[i]));
    scale = std::max(scale, std::abs(exact[i]));
  }
  if (diff > rel_tol * scale) {
    std::ostringstream os;
    os << "gradient check failed for " << label << " at test point " << point
       << ": max abs deviation " << diff << " exceeds " << rel_tol << " * " << scale;
    throw ConfigError(os.str());
  }
}

}  // namespace

void check_gradients(const BilevelProblem& p, std::uint64_t seed, int n_points, double rel_tol) {
  if (!p.f || !p.g || !p.grad_x_g) throw ConfigError("problem '" + p.name + "' lacks f, g or grad_x_g");
  Rng rng(derive_seed(seed, {0x6772616463686bull}));
  const std::size_t m = p.upper_dim, d = p.lower_dim;
  for (int k = 0; k < n_points; ++k) {
    Vector theta(m), x(d);
    for (auto& t : theta) t = rng.normal();
    p.domain.project_inplace(theta);
    for (auto& v : x) v = 1.5 * rng.normal();

    Vector exact(d);
    p.grad_x_g(theta, x, exact);
    compare(p.name + ": grad_x_g", exact,
            numerical_gradient([&](ConstSpan xx) { return p.g(theta, xx); }, x), rel_tol, k);
    if (p.grad_x_f) {
      p.grad_x_f(theta, x, exact);
      compare(p.name + ": grad_x_f", exact,
              numerical_gradient([&](ConstSpan xx) { return p.f(theta, xx); }, x), rel_tol, k);
    }
    Vector exact_t(m);
    if (p.grad_theta_f) {
      p.grad_theta_f(theta, x, exact_t);
      compare(p.name + ": grad_theta_f", exact_t,
              numerical_gradient([&](ConstSpan tt) { return p.f(tt, x); }, theta), rel_tol, k);
    }
    if (p.grad_theta_g) {
      p.grad_theta_g(theta, x, exact_t);
      compare(p.name + ": grad_theta_g", exact_t,
              numerical_gradient([&](ConstSpan tt) { return p.g(tt, x); }, theta), rel_tol, k);
    }
    if (p.lower_value && p.grad_lower_value) {
      p.grad_lower_value(theta, exact_t);
      compare(p.name + ": grad_lower_value", exact_t, numerical_gradient(p.lower_value, theta),
              rel_tol, k);
    }
    Vector v(d);
    for (auto& e : v) e = rng.normal();
    if (p.hess_xx_g_vec) {
      p.hess_xx_g_vec(theta, x, v, exact);
      Vector gx(d);
      compare(p.name + ": hess_xx_g_vec", exact, numerical_gradient([&](ConstSpan xx) {
                p.grad_x_g(theta, xx, gx);
                return dot(gx, v);
              }, x), rel_tol, k);
    }
    if (p.cross_theta_x_g_vec) {
      p.cross_theta_x_g_vec(theta, x, v, exact_t);
      Vector gx(d);
      compare(p.name + ": cross_theta_x_g_vec", exact_t, numerical_gradient([&](ConstSpan tt) {
                p.grad_x_g(tt, x, gx);
                return dot(gx, v);
              }, theta), rel_tol, k);
    }
  }
}

}  // namespace sqg
