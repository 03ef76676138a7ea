#include <algorithm>
#include <boost/math/distributions/normal.hpp>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "sqg/problems.hpp"
#include "sqg/random.hpp"
#include "sqg/superquantile.hpp"

using namespace sqg;

namespace {

Vector one_to_ten() {
  Vector v(10);
  std::iota(v.begin(), v.end(), 1.0);
  return v;
}

// f(theta, x) = x_1, so a batch with one column carries its own f-values.
BilevelProblem identity_problem() {
  BilevelProblem p;
  p.name = "identity";
  p.upper_dim = 1;
  p.lower_dim = 1;
  p.f = [](ConstSpan, ConstSpan x) { return x[0]; };
  p.domain = UpperDomain::box(Vector{-1.0}, Vector{1.0});
  return p;
}

GibbsSampleBatch batch_of(const Vector& values) {
  GibbsSampleBatch b;
  b.samples = values;
  b.rows = values.size();
  b.cols = 1;
  b.theta = Vector{0.0};
  return b;
}

double grid_min(const Vector& f, double delta, Tail tail, double lo, double hi, double* argmin_lo = nullptr,
                double* argmin_hi = nullptr) {
  const int n = 20001;
  double best = tail == Tail::Upper ? 1e300 : -1e300;
  Vector vals(n);
  for (int i = 0; i < n; ++i) {
    const double b = lo + (hi - lo) * i / (n - 1);
    vals[i] = phi_value(b, f, delta, tail);
    best = tail == Tail::Upper ? std::min(best, vals[i]) : std::max(best, vals[i]);
  }
  if (argmin_lo) {
    double a = 1e300, z = -1e300;
    for (int i = 0; i < n; ++i) {
      if (std::abs(vals[i] - best) < 1e-9) {
        const double b = lo + (hi - lo) * i / (n - 1);
        a = std::min(a, b);
        z = std::max(z, b);
      }
    }
    *argmin_lo = a;
    *argmin_hi = z;
  }
  return best;
}

double top_k_mean(Vector f, std::size_t k) {
  std::sort(f.begin(), f.end(), std::greater<>());
  return std::accumulate(f.begin(), f.begin() + static_cast<long>(k), 0.0) / static_cast<double>(k);
}

}  // namespace

TEST_CASE("phi_value examples") {
  const Vector f = one_to_ten();
  CHECK(phi_value(9.0, f, 0.2, Tail::Upper) == doctest::Approx(9.5).epsilon(1e-14));
  CHECK(phi_value(2.0, f, 0.2, Tail::Lower) == doctest::Approx(1.5).epsilon(1e-14));

  const Vector flat(7, 3.25);
  for (double delta : {0.05, 0.2, 0.5}) {
    CHECK(phi_value(3.25, flat, delta, Tail::Upper) == 3.25);
    CHECK(grid_min(flat, delta, Tail::Upper, 0.0, 6.0) >= 3.25 - 1e-12);
  }

  double lo = 0, hi = 0;
  CHECK(grid_min(f, 0.2, Tail::Upper, 0.0, 12.0, &lo, &hi) == doctest::Approx(9.5).epsilon(1e-12));
  CHECK(lo == doctest::Approx(8.0).epsilon(1e-3));
  CHECK(hi == doctest::Approx(9.0).epsilon(1e-3));
  CHECK(exact_empirical_superquantile(f, 0.2, Tail::Upper) == doctest::Approx(9.5).epsilon(1e-14));
  CHECK(exact_empirical_superquantile(f, 0.2, Tail::Lower) == doctest::Approx(1.5).epsilon(1e-14));

  CHECK_THROWS_AS(phi_value(0.0, Vector{}, 0.1, Tail::Upper), InvalidArgument);
}

TEST_CASE("phi_subgradient examples and bound") {
  CHECK(phi_subgradient(1.0, 2.0, 0.5, Tail::Upper) == -1.0);
  CHECK(phi_subgradient(1.0, 0.0, 0.5, Tail::Upper) == 1.0);
  CHECK(phi_subgradient(1.0, 1.0, 0.5, Tail::Upper) == 1.0);
  CHECK(phi_subgradient(1.0, 1.0, 0.5, Tail::Lower) == -1.0);
  CHECK(phi_subgradient(1.0, 0.0, 0.5, Tail::Lower) == 1.0);

  Rng rng(3);
  for (int i = 0; i < 10000; ++i) {
    const double delta = 0.01 + 0.49 * rng.uniform();
    const double beta = 10.0 * rng.normal(), f = 10.0 * rng.normal();
    for (Tail t : {Tail::Upper, Tail::Lower}) {
      CHECK(std::abs(phi_subgradient(beta, f, delta, t)) <= 1.0 + 1.0 / delta);
    }
  }
}

TEST_CASE("psgd_beta degenerate sampler is a fixed point") {
  SqConfig cfg;
  cfg.beta_bound = 5.0;
  cfg.beta_init = 1.75;
  cfg.inner_iters = 100;
  for (Tail t : {Tail::Upper, Tail::Lower}) {
    cfg.tail = t;
    CHECK(psgd_beta([] { return 1.75; }, cfg) == 1.75);
  }
  cfg.inner_iters = 0;
  CHECK_THROWS_AS(psgd_beta([] { return 0.0; }, cfg), InvalidArgument);
}

TEST_CASE("psgd_beta recovers the Gaussian superquantile") {
  const boost::math::normal_distribution<double> n01;
  const double oracle = boost::math::pdf(n01, boost::math::quantile(n01, 0.9)) / 0.1;
  CHECK(oracle == doctest::Approx(1.75498).epsilon(1e-5));

  SqConfig cfg;
  cfg.delta = 0.1;
  cfg.inner_iters = 100000;
  cfg.beta_bound = 5.0;
  Rng rng(11);
  const double beta = psgd_beta([&] { return rng.normal(); }, cfg);
  CHECK(std::abs(beta) <= cfg.beta_bound);
  // phi at beta_hat under the true N(0,1): beta + E(Z-beta)_+/delta
  const double tail = boost::math::pdf(n01, beta) - beta * (1.0 - boost::math::cdf(n01, beta));
  const double phi = beta + tail / cfg.delta;
  CHECK(std::abs(phi - oracle) <= 0.02);
}

TEST_CASE("psgd_beta on a discrete distribution") {
  const Vector f = one_to_ten();
  SqConfig cfg;
  cfg.delta = 0.2;
  cfg.inner_iters = 100000;
  cfg.beta_bound = 10.0;
  Rng rng(12);
  const double beta = psgd_beta([&] { return f[static_cast<std::size_t>(rng.uniform() * 10.0)]; }, cfg);
  CHECK(phi_value(beta, f, 0.2, Tail::Upper) - 9.5 <= 0.01);

  cfg.tail = Tail::Lower;
  const double low = psgd_beta([&] { return f[static_cast<std::size_t>(rng.uniform() * 10.0)]; }, cfg);
  CHECK(1.5 - phi_value(low, f, 0.2, Tail::Lower) <= 0.01);

  SqConfig inv = cfg;
  inv.tail = Tail::Upper;
  inv.step_rule = StepRule::InverseSqrt;
  const double b2 = psgd_beta([&] { return f[static_cast<std::size_t>(rng.uniform() * 10.0)]; }, inv);
  CHECK(phi_value(b2, f, 0.2, Tail::Upper) - 9.5 <= 0.05);

  CHECK_THROWS_AS(psgd_beta(Vector{1.0, 2.0}, cfg), InvalidArgument);
}

TEST_CASE("psgd iterate stays in the box") {
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    SqConfig cfg;
    cfg.delta = 0.05 + 0.45 * rng.uniform();
    cfg.beta_bound = 0.1 + 2.0 * rng.uniform();
    cfg.inner_iters = 200;
    cfg.tail = trial % 2 ? Tail::Upper : Tail::Lower;
    const double b = psgd_beta([&] { return 100.0 * rng.normal(); }, cfg);
    CHECK(std::abs(b) <= cfg.beta_bound);
  }
}

TEST_CASE("config validation") {
  SqConfig cfg;
  cfg.delta = 0.6;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg.delta = 0.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SqConfig{};
  cfg.beta_init = 11.0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = SqConfig{};
  CHECK_NOTHROW(cfg.validate());
  CHECK(cfg.sigma() == doctest::Approx(11.0));
}

TEST_CASE("calibrate_beta_bound") {
  const auto toy = make_toy({2, 1, Sense::Pessimistic});
  Vector circle;
  for (int i = 0; i < 3600; ++i) {
    const double a = 2.0 * std::numbers::pi * i / 3600;
    circle.push_back(std::cos(a));
    circle.push_back(std::sin(a));
  }
  GibbsSampleBatch b;
  b.samples = circle;
  b.rows = 3600;
  b.cols = 2;
  CHECK(calibrate_beta_bound(Vector{0.0}, b, toy, 2.0) == doctest::Approx(6.0).epsilon(1e-9));

  const auto id = identity_problem();
  CHECK(calibrate_beta_bound(Vector{0.0}, batch_of({0.0}), id, 2.0, 0.5) == 0.5);
  CHECK(calibrate_beta_bound(Vector{0.0}, batch_of({-5.0, 3.0, 4.9}), id, 1.0, 0.0) <= 5.0);
  CHECK_THROWS_AS(calibrate_beta_bound(Vector{0.0}, batch_of({}), id), InvalidArgument);
}

TEST_CASE("sq_estimate examples") {
  const auto id = identity_problem();
  const auto b = batch_of(one_to_ten());
  auto up = sq_estimate(Vector{0.0}, 9.0, b, 0.2, Tail::Upper, id);
  CHECK(up.value == doctest::Approx(9.5));
  CHECK(up.tail_hits == 1);
  CHECK(up.m_used == 10);
  CHECK(up.value >= up.beta_hat);
  CHECK(up.diagnostics.empty());

  auto lo = sq_estimate(Vector{0.0}, 2.0, b, 0.2, Tail::Lower, id);
  CHECK(lo.value == doctest::Approx(1.5));
  CHECK(lo.value <= lo.beta_hat);

  auto empty = sq_estimate(Vector{0.0}, 10.0, b, 0.05, Tail::Upper, id);
  CHECK(empty.tail_hits == 0);
  CHECK(empty.diagnostics.find("empty tail") != std::string::npos);
  CHECK(empty.diagnostics.find("delta*M") != std::string::npos);
}

TEST_CASE("phi properties on random empirical distributions") {
  Rng rng(21);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t m = 5 + static_cast<std::size_t>(rng.uniform() * 60);
    Vector f(m);
    for (auto& v : f) v = 3.0 * rng.normal();

    // convexity on a 101-point grid
    const double delta = 0.05 + 0.45 * rng.uniform();
    Vector grid(101);
    for (int i = 0; i < 101; ++i) grid[i] = phi_value(-12.0 + 24.0 * i / 100, f, delta, Tail::Upper);
    for (int i = 1; i < 100; ++i) CHECK(grid[i] <= 0.5 * (grid[i - 1] + grid[i + 1]) + 1e-12);

    // exact CVaR when delta*M is an integer
    const std::size_t k = 1 + static_cast<std::size_t>(rng.uniform() * static_cast<double>(m / 2));
    const double dk = static_cast<double>(k) / static_cast<double>(m);
    Vector sorted = f;
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    const double kth = sorted[k - 1];
    CHECK(phi_value(kth, f, dk, Tail::Upper) == doctest::Approx(top_k_mean(f, k)).epsilon(1e-12));
    CHECK(exact_empirical_superquantile(f, dk, Tail::Upper) ==
          doctest::Approx(top_k_mean(f, k)).epsilon(1e-12));
    // and no beta does better
    for (double b : sorted) CHECK(phi_value(b, f, dk, Tail::Upper) >= top_k_mean(f, k) - 1e-12);

    // monotone in delta
    double prev = 1e300;
    for (double d : {0.05, 0.1, 0.2, 0.3, 0.4, 0.5}) {
      const double v = exact_empirical_superquantile(f, d, Tail::Upper);
      CHECK(v <= prev + 1e-12);
      prev = v;
    }
  }
}
