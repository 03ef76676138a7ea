#pragma once

#include <functional>
#include <optional>
#include <string>

#include "sqg/domain.hpp"
#include "sqg/types.hpp"

namespace sqg {

enum class Sense { Pessimistic, Optimistic };

std::string to_string(Sense s);
Sense sense_from_string(const std::string& s);

using ScalarFn = std::function<double(ConstSpan theta, ConstSpan x)>;
/// Writes a gradient into `out` (sized to the differentiated variable).
using GradFn = std::function<void(ConstSpan theta, ConstSpan x, MutSpan out)>;
/// Writes (d/dx)^2 g(theta,x) * v into `out` (size d).
using HessVecFn = std::function<void(ConstSpan theta, ConstSpan x, ConstSpan v, MutSpan out)>;
using HyperFn = std::function<double(ConstSpan theta)>;
using HyperGradFn = std::function<void(ConstSpan theta, MutSpan out)>;

/// Bundle of upper objective f(theta, x), lower objective g(theta, x) and the
/// derivatives the solvers need. All callables must be pure and reentrant.
struct BilevelProblem {
  std::string name;
  std::size_t upper_dim = 0;
  std::size_t lower_dim = 0;

  ScalarFn f;
  ScalarFn g;
  GradFn grad_x_g;

  // Only the penalty baselines need these.
  GradFn grad_theta_f;
  GradFn grad_x_f;
  GradFn grad_theta_g;
  HessVecFn hess_xx_g_vec;
  /// Writes (d/dtheta) <grad_x g(theta,x), v> into `out` (size m).
  HessVecFn cross_theta_x_g_vec;
  /// g*(theta) = min_x g(theta, x) and its gradient, when known in closed form.
  HyperFn lower_value;
  HyperGradFn grad_lower_value;

  UpperDomain domain = UpperDomain::cube(1, -1.0, 1.0);
  Sense sense = Sense::Pessimistic;

  /// F_max or F_min (matching `sense`) when analytically known; validation only.
  HyperFn closed_form_hyper;
  std::optional<Vector> theta_star;
};

/// Compares every supplied gradient against central differences at
/// `n_points` random (theta, x). Throws ConfigError naming the first mismatch.
void check_gradients(const BilevelProblem& problem, std::uint64_t seed, int n_points = 8,
                     double rel_tol = 1e-5);

/// Central-difference gradient of a scalar function of one vector argument.
Vector numerical_gradient(const std::function<double(ConstSpan)>& fn, ConstSpan at,
                          double rel_step = 1e-6);

}  // namespace sqg
