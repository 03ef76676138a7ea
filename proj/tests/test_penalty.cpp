#include <cmath>

#include "doctest.h"
#include "sqg/penalty.hpp"
#include "sqg/problems.hpp"
#include "sqg/random.hpp"

using namespace sqg;

namespace {

PenaltyConfig config_for(PenaltyVariant v, double gamma = 10.0) {
  PenaltyConfig c;
  c.variant = v;
  c.gamma = gamma;
  return c;
}

Vector joint(ConstSpan theta, ConstSpan x) {
  Vector z(theta.begin(), theta.end());
  z.insert(z.end(), x.begin(), x.end());
  return z;
}

}  // namespace

TEST_CASE("penalty objective examples") {
  const auto toy = make_toy({2, 1, Sense::Optimistic});
  const auto pts = toy_manifold_points({2, 1, Sense::Optimistic}, 0.0, 20, 3);
  for (const auto& x : pts) {
    const double f = toy.f(Vector{0.0}, x);
    CHECK(penalty_objective(toy, Vector{0.0}, x, config_for(PenaltyVariant::ValuePenalty)) ==
          doctest::Approx(f).epsilon(1e-12));
    CHECK(penalty_objective(toy, Vector{0.0}, x, config_for(PenaltyVariant::GradNormPenalty)) ==
          doctest::Approx(f).epsilon(1e-12));
  }
  // the origin is stationary for g
  const Vector origin{0.0, 0.0};
  CHECK(penalty_objective(toy, Vector{0.7}, origin, config_for(PenaltyVariant::GradNormPenalty)) ==
        doctest::Approx(toy.f(Vector{0.7}, origin)));

  Rng rng(4);
  for (int i = 0; i < 20; ++i) {
    const Vector th{rng.uniform() * 2.0 - 1.0}, x{rng.normal(), rng.normal()};
    for (auto v : {PenaltyVariant::ValuePenalty, PenaltyVariant::GradNormPenalty}) {
      CHECK(penalty_objective(toy, th, x, config_for(v, 0.0)) == toy.f(th, x));
    }
  }
}

TEST_CASE("value-function gap is nonnegative on the toy family") {
  Rng rng(5);
  for (std::size_t d : {2u, 4u}) {
    for (std::size_t k = 1; k < d; ++k) {
      const auto toy = make_toy({d, k, Sense::Optimistic});
      for (int i = 0; i < 2000; ++i) {
        const Vector th{(rng.uniform() * 2.0 - 1.0) * 3.14};
        Vector x(d);
        for (auto& v : x) v = 1.5 * rng.normal();
        CHECK(toy.g(th, x) - toy.lower_value(th) >= -1e-9);
      }
    }
  }
}

TEST_CASE("joint penalty gradient matches central differences") {
  std::vector<BilevelProblem> problems{make_toy({2, 1, Sense::Optimistic}), make_toy({4, 2, Sense::Pessimistic}),
                                       make_example26(), make_quadratic_sanity(3)};
  // drop the analytic second-order products to exercise the difference fallback
  BilevelProblem fallback = make_toy({3, 1, Sense::Optimistic});
  fallback.name = "toy-fd";
  fallback.hess_xx_g_vec = nullptr;
  fallback.cross_theta_x_g_vec = nullptr;
  problems.push_back(fallback);

  Rng rng(6);
  for (const auto& p : problems) {
    for (auto v : {PenaltyVariant::ValuePenalty, PenaltyVariant::GradNormPenalty}) {
      const PenaltyConfig cfg = config_for(v, 3.0);
      for (int i = 0; i < 8; ++i) {
        const auto box = p.domain.as_box();
        Vector th(p.upper_dim), x(p.lower_dim);
        for (std::size_t j = 0; j < th.size(); ++j) th[j] = box.lo[j] + (box.hi[j] - box.lo[j]) * (0.1 + 0.8 * rng.uniform());
        for (auto& e : x) e = rng.normal();
        const auto grad = penalty_gradient(p, th, x, cfg);
        const std::size_t m = p.upper_dim;
        const Vector fd = numerical_gradient(
            [&](ConstSpan z) { return penalty_objective(p, z.first(m), z.subspan(m), cfg); }, joint(th, x));
        const Vector an = joint(grad.theta, grad.x);
        const double tol = p.name == "toy-fd" && v == PenaltyVariant::GradNormPenalty ? 1e-3 : 1e-4;
        INFO(p.name << " " << to_string(v));
        CHECK(distance(an, fd) <= tol * std::max(1.0, norm(fd)));
      }
    }
  }
}

TEST_CASE("inner descent lower value approaches the closed form") {
  const auto toy = make_toy({2, 1, Sense::Optimistic});
  PenaltyConfig cfg = config_for(PenaltyVariant::ValuePenalty);
  cfg.lower_value_oracle.kind = LowerValueOracle::Kind::InnerDescent;
  cfg.lower_value_oracle.steps = 2000;
  cfg.lower_value_oracle.step_size = 0.05;
  const Vector th{0.5}, x{0.3, 0.9};
  const double closed = penalty_objective(toy, th, x, config_for(PenaltyVariant::ValuePenalty));
  CHECK(penalty_objective(toy, th, x, cfg) == doctest::Approx(closed).epsilon(1e-6));
}

TEST_CASE("value penalty solves the strongly convex sanity instance") {
  const auto q = make_quadratic_sanity(2);
  PenaltyConfig cfg = config_for(PenaltyVariant::ValuePenalty, 100.0);
  cfg.joint_step = 0.004;
  cfg.n_iters = 3000;
  const auto traj = pbgd_run(q, cfg, Vector{1.5}, Vector{}, 1);
  CHECK(traj.method == "v-pbgd");
  REQUIRE(traj.best.error);
  CHECK(*traj.best.error <= 0.05);
  CHECK(std::abs(traj.records.back().theta[0]) <= 0.05);
}

TEST_CASE("pbgd bookkeeping") {
  const auto toy = make_toy({2, 1, Sense::Optimistic});
  PenaltyConfig cfg = config_for(PenaltyVariant::GradNormPenalty);
  cfg.n_iters = 0;
  const auto empty = pbgd_run(toy, cfg, Vector{1.0}, Vector{0.5, 0.5}, 0);
  REQUIRE(empty.records.size() == 1);
  CHECK(empty.records[0].theta == Vector{1.0});
  CHECK(empty.best.theta == Vector{1.0});
  CHECK(empty.method == "g-pbgd");

  cfg.n_iters = 50;
  const auto a = pbgd_run(toy, cfg, Vector{1.0}, Vector{}, 7);
  const auto b = pbgd_run(toy, cfg, Vector{1.0}, Vector{}, 7);
  REQUIRE(a.records.size() == 51);
  for (std::size_t i = 0; i < a.records.size(); ++i) {
    CHECK(a.records[i].theta == b.records[i].theta);
    CHECK(toy.domain.contains(a.records[i].theta, 0.0));
  }

  cfg.joint_step = 1e6;
  cfg.backtrack = false;
  CHECK_THROWS_AS(pbgd_run(toy, cfg, Vector{1.0}, Vector{}, 7), RunAborted);
}

TEST_CASE("backtracking keeps the penalty objective nonincreasing") {
  const auto toy = make_toy({2, 1, Sense::Optimistic});
  for (auto variant : {PenaltyVariant::ValuePenalty, PenaltyVariant::GradNormPenalty}) {
    auto cfg = config_for(variant);
    cfg.n_iters = 40;
    cfg.joint_step = 10.0;
    const auto run = pbgd_run(toy, cfg, Vector{1.0}, Vector{}, 3);
    for (std::size_t i = 1; i < run.records.size(); ++i) {
      CHECK(std::isfinite(run.records[i].psi_tilde));
      CHECK(run.records[i].psi_tilde <= run.records[i - 1].psi_tilde + 1e-12);
    }
  }
}

TEST_CASE("missing oracles are configuration errors") {
  auto toy = make_toy({2, 1, Sense::Optimistic});
  toy.lower_value = nullptr;
  CHECK_THROWS_AS(penalty_objective(toy, Vector{0.0}, Vector{1.0, 0.0}, config_for(PenaltyVariant::ValuePenalty)),
                  ConfigError);
  CHECK_THROWS_AS(pbgd_run(toy, config_for(PenaltyVariant::ValuePenalty), Vector{0.0}, Vector{}, 0), ConfigError);
  CHECK_NOTHROW(pbgd_run(toy, config_for(PenaltyVariant::GradNormPenalty), Vector{0.0}, Vector{}, 0));

  auto bare = make_toy({2, 1, Sense::Optimistic});
  bare.grad_theta_f = nullptr;
  CHECK_THROWS_AS(pbgd_run(bare, config_for(PenaltyVariant::GradNormPenalty), Vector{0.0}, Vector{}, 0), ConfigError);
}
