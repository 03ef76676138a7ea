#pragma once

#include <filesystem>
#include <memory>

#include "sqg/problem.hpp"

namespace sqg {

/// Toy sphere family: f(theta,x) = 2|x| + <x, u(theta)>, u = (cos, sin, 0, ...),
/// lower-level minimizers on the k-sphere of radius sqrt(1 + theta^2) in the
/// first k+1 coordinates. theta in [-pi, pi].
struct ToySpec {
  std::size_t d = 2;
  std::size_t k = 1;
  Sense sense = Sense::Optimistic;
};

BilevelProblem make_toy(const ToySpec& spec);

/// g(theta,x) = (|x|^2 - theta)^2 / 4 - |x|^2 / 2 on theta in [0, 1];
/// minimizers on |x|^2 = theta + 1. Upper level is the toy f with u = e_1.
BilevelProblem make_example26(std::size_t d = 2, Sense sense = Sense::Pessimistic);

/// Strongly convex sanity instance: g = |x - theta 1|^2 / 2, f = |x|^2,
/// theta in [-2, 2]. Solution theta* = 0.
BilevelProblem make_quadratic_sanity(std::size_t d = 2);

/// Points on the toy minimizer sphere for validating closed forms.
std::vector<Vector> toy_manifold_points(const ToySpec& spec, double theta, std::size_t count,
                                        std::uint64_t seed);

struct HypercleanSpec {
  std::size_t n_train = 500;
  std::size_t n_val = 50;
  std::size_t n_test = 1000;
  double pollute_rate = 0.4;
  std::size_t feature_dim = 10;
  double ridge = 0.01;
  double weight_bound = 10.0;
  double class_separation = 1.5;
  std::uint64_t data_seed = 0;

  void validate() const;
};

struct LabeledSet {
  std::vector<Vector> features;
  std::vector<int> labels;
};

struct HypercleanData {
  HypercleanSpec spec;
  LabeledSet train, val, test;
  /// true where the training label was flipped
  std::vector<bool> corrupted;
};

struct HypercleanInstance {
  BilevelProblem problem;
  std::shared_ptr<const HypercleanData> data;
};

HypercleanData generate_hyperclean_data(const HypercleanSpec& spec);
HypercleanInstance make_hyperclean(const HypercleanSpec& spec);

/// Writes dataset.csv ("split,label,feat_1..feat_q") and manifest.json.
void write_hyperclean_files(const HypercleanData& data, const std::filesystem::path& dir);

/// Minimizes the weighted ridge-logistic lower objective for fixed theta.
Vector fit_weighted_logistic(const HypercleanData& data, ConstSpan theta, int newton_iters = 50);
/// Plain ridge-logistic fit with unit weights on the (noisy) training set.
Vector fit_plain_logistic(const HypercleanData& data, int newton_iters = 50);
double accuracy(const LabeledSet& set, ConstSpan model);

}  // namespace sqg
