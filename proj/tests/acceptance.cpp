#include <boost/math/distributions/normal.hpp>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>
#include <string>

#include "sqg/diagnostics.hpp"
#include "sqg/experiment.hpp"
#include "sqg/random.hpp"

using namespace sqg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

const fs::path kOut = fs::current_path() / "acceptance_results";

std::map<std::string, std::map<std::string, double>> run_and_index(ExperimentConfig c, const std::string& dir,
                                                                   std::vector<RunRow>* runs = nullptr) {
  c.out_dir = kOut / dir;
  const auto rep = run_experiment(c, workers_from_env());
  for (const auto& r : rep.runs) {
    if (r.status != "ok") throw std::runtime_error(r.setting + " " + r.method + " seed " + std::to_string(r.seed) + ": " + r.status);
  }
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& s : rep.summary) out[s.setting][s.method] = s.mean_err;
  if (runs) *runs = rep.runs;
  return out;
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", v);
  return buf;
}

// Shared toy d=2 optimistic runs: pszo-minsel plus both penalty baselines.
std::map<std::string, double>& toy_d2() {
  static std::map<std::string, double> cache;
  if (cache.empty()) cache = run_and_index(default_config(ExperimentKind::BaselineCompare), "baseline-compare")["d=2 k=1"];
  return cache;
}

Outcome criterion1() {
  const double e = toy_d2().at("pszo-minsel");
  return {e <= 0.05, "mean |theta_hat| = " + fmt(e) + " (<= 0.05)"};
}

Outcome criterion2() {
  auto c = default_config(ExperimentKind::DimSweep);
  c.dims = {5, 10, 20};
  auto idx = run_and_index(c, "dim-sweep");
  const std::vector<double> errs{toy_d2().at("pszo-minsel"), idx["d=5 k=4"].at("pszo-minsel"),
                                 idx["d=10 k=9"].at("pszo-minsel"), idx["d=20 k=19"].at("pszo-minsel")};
  bool monotone = true;
  for (std::size_t i = 1; i < errs.size(); ++i) monotone = monotone && errs[i] >= errs[i - 1];
  std::string detail = "d=2,5,10,20: ";
  for (double e : errs) detail += fmt(e) + " ";
  detail += monotone ? "(nondecreasing)" : "(NOT nondecreasing)";
  detail += ", d=20 <= 0.12";
  return {monotone && errs.back() <= 0.12, detail};
}

Outcome criterion3() {
  auto c = default_config(ExperimentKind::FixedK);
  c.dims = {5, 30};
  auto idx = run_and_index(c, "fixed-k");
  const double e5 = idx["d=5 k=1"].at("pszo-minsel"), e30 = idx["d=30 k=1"].at("pszo-minsel");
  return {e30 <= 3.0 * e5 && e5 <= 0.1 && e30 <= 0.1,
          "d=5: " + fmt(e5) + ", d=30: " + fmt(e30) + " (ratio " + fmt(e30 / e5) + " <= 3, both <= 0.1)"};
}

Outcome criterion4() {
  auto idx = run_and_index(default_config(ExperimentKind::ToyPessimistic), "toy-pessimistic");
  const double e5 = idx["d=5 k=4"].at("pszo-minsel"), e10 = idx["d=10 k=9"].at("pszo-minsel");
  return {e5 <= 0.1 && e10 <= 0.1, "d=5: " + fmt(e5) + ", d=10: " + fmt(e10) + " (<= 0.1)"};
}

Outcome criterion5() {
  const auto& m = toy_d2();
  const double z = m.at("pszo-minsel"), v = m.at("v-pbgd"), g = m.at("g-pbgd");
  return {z < std::min(v, g), "pszo-minsel " + fmt(z) + " vs v-pbgd " + fmt(v) + ", g-pbgd " + fmt(g)};
}

// Grid quadrature of E|X| under exp(-g/lambda) on [-3,3]^2.
double quadrature_radius(const BilevelProblem& p, double lambda) {
  const int n = 2001;
  const double h = 6.0 / (n - 1);
  std::vector<double> gv(static_cast<std::size_t>(n) * n);
  double gmin = 1e300;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double v = p.g(Vector{0.0}, Vector{-3.0 + i * h, -3.0 + j * h});
      gv[static_cast<std::size_t>(i) * n + j] = v;
      gmin = std::min(gmin, v);
    }
  double z = 0.0, acc = 0.0;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < n; ++j) {
      const double w = std::exp(-(gv[static_cast<std::size_t>(i) * n + j] - gmin) / lambda);
      z += w;
      acc += w * std::hypot(-3.0 + i * h, -3.0 + j * h);
    }
  return acc / z;
}

Outcome criterion6() {
  const std::size_t d = 3;
  LangevinConfig cfg;
  cfg.lambda = 0.01;
  cfg.step_size = 0.01;
  cfg.burn_in = 1000;
  cfg.steps_per_sample = 100;
  cfg.n_chains = 1000;
  cfg.samples_per_chain = 100;
  const GradFn quad = [](ConstSpan, ConstSpan x, MutSpan out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
  };
  const auto b = sample_gibbs(quad, d, Vector{0.0}, cfg, 2024);
  Vector mu(d, 0.0);
  for (std::size_t i = 0; i < b.rows; ++i)
    for (std::size_t j = 0; j < d; ++j) mu[j] += b.row(i)[j] / static_cast<double>(b.rows);
  const double target = cfg.lambda / (1.0 - cfg.step_size / 2.0);
  double worst = 0.0;
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t c = 0; c < d; ++c) {
      double cov = 0.0;
      for (std::size_t i = 0; i < b.rows; ++i) cov += (b.row(i)[a] - mu[a]) * (b.row(i)[c] - mu[c]);
      cov /= static_cast<double>(b.rows - 1);
      worst = std::max(worst, std::abs(cov - (a == c ? target : 0.0)) / target);
    }

  const auto toy = make_toy({2, 1, Sense::Optimistic});
  const double oracle = quadrature_radius(toy, 0.01);
  LangevinConfig tc;
  tc.lambda = 0.01;
  tc.n_chains = 200;
  tc.samples_per_chain = 100;
  const auto tb = sample_gibbs(toy, Vector{0.0}, tc, 2025);
  double r = 0.0;
  for (std::size_t i = 0; i < tb.rows; ++i) r += norm(tb.row(i)) / static_cast<double>(tb.rows);
  const double rel = std::abs(r - oracle) / oracle;
  return {norm(mu) <= 0.01 && worst <= 0.05 && rel <= 0.02,
          "|mean| " + fmt(norm(mu)) + ", max cov rel err " + fmt(worst) + ", E|X| " + fmt(r) + " vs quadrature " +
              fmt(oracle) + " (rel " + fmt(rel) + ")"};
}

Outcome criterion7() {
  Vector ten(10);
  std::iota(ten.begin(), ten.end(), 1.0);
  SqConfig cfg;
  cfg.delta = 0.2;
  cfg.inner_iters = 100000;
  cfg.beta_bound = 10.0;
  Rng rng(7);
  const double b1 = psgd_beta([&] { return ten[static_cast<std::size_t>(rng.uniform() * 10.0)]; }, cfg);
  const double discrete = phi_value(b1, ten, 0.2, Tail::Upper);

  const boost::math::normal_distribution<double> n01;
  const double cvar = boost::math::pdf(n01, boost::math::quantile(n01, 0.9)) / 0.1;
  cfg.delta = 0.1;
  cfg.beta_bound = 5.0;
  const double b2 = psgd_beta([&] { return rng.normal(); }, cfg);
  const double gauss = b2 + (boost::math::pdf(n01, b2) - b2 * boost::math::cdf(boost::math::complement(n01, b2))) / 0.1;
  return {std::abs(discrete - 9.5) <= 0.01 && std::abs(gauss - cvar) <= 0.02,
          "discrete " + fmt(discrete) + " vs 9.5, gaussian " + fmt(gauss) + " vs " + fmt(cvar)};
}

Outcome criterion8() {
  auto idx = run_and_index(default_config(ExperimentKind::ApproxSweep), "approx-sweep");
  const std::vector<double> deltas{0.2, 0.1, 0.05, 0.025};
  Vector lx, ly;
  bool decreasing = true;
  std::string detail = "errors ";
  double prev = 1e300;
  for (double d : deltas) {
    std::ostringstream key;
    key << "delta=" << std::setprecision(17) << d;
    const double e = idx[key.str()].at("sq-gibbs");
    decreasing = decreasing && e < prev;
    prev = e;
    lx.push_back(std::log(d));
    ly.push_back(std::log(e));
    detail += fmt(e) + " ";
  }
  const double slope = ols_slope(lx, ly);
  detail += decreasing ? "(strictly decreasing)" : "(NOT strictly decreasing)";
  detail += ", log-log slope " + fmt(slope) + " (required in [0.5, 1.5])";
  return {decreasing && slope >= 0.5 && slope <= 1.5, detail};
}

Outcome criterion9() {
  const auto toy = make_toy({2, 1, Sense::Optimistic});
  const double theta = 0.5, rho = 0.1;
  const double target =
      (toy.closed_form_hyper(Vector{theta + rho}) - toy.closed_form_hyper(Vector{theta - rho})) / (2.0 * rho);
  const SurrogateConfig sc = experiment_surrogate(2);
  const int n = 200;
  double s1 = 0.0, s2 = 0.0;
  Rng dir_rng(31);
  for (int i = 0; i < n; ++i) {
    const Vector u = sample_unit_sphere(1, dir_rng);
    const double vp = query_surrogate(toy, Vector{theta + rho * u[0]}, sc, 1.0, derive_seed(31, {std::uint64_t(i), 0})).value;
    const double vm = query_surrogate(toy, Vector{theta - rho * u[0]}, sc, 1.0, derive_seed(31, {std::uint64_t(i), 1})).value;
    const double g = two_point_estimator(Vector{vp}, Vector{vm}, {u}, rho, 1)[0];
    s1 += g;
    s2 += g * g;
  }
  const double mean = s1 / n;
  const double se = std::sqrt((s2 / n - mean * mean) / (n - 1));
  return {std::abs(mean - target) <= 3.0 * se,
          "mean " + fmt(mean) + " vs " + fmt(target) + ", |diff| " + fmt(std::abs(mean - target)) + " <= 3 SE " +
              fmt(3.0 * se)};
}

Outcome criterion10() {
  std::size_t checks = 0, failures = 0;
  auto expect = [&](bool ok) {
    ++checks;
    failures += !ok;
  };
  Rng rng(99);

  // projections: nonexpansive, idempotent, feasible
  const auto box = UpperDomain::box(Vector{-1.0, 0.0, -3.0}, Vector{2.0, 0.5, 3.0});
  const auto ball = UpperDomain::ball(Vector{0.5, -1.0, 2.0}, 1.5);
  for (const auto* dom : {&box, &ball}) {
    for (int i = 0; i < 2000; ++i) {
      Vector a(3), b(3);
      for (auto& v : a) v = 4.0 * rng.normal();
      for (auto& v : b) v = 4.0 * rng.normal();
      const Vector pa = dom->project(a), pb = dom->project(b);
      expect(distance(pa, pb) <= distance(a, b) + 1e-12);
      expect(distance(dom->project(pa), pa) <= 1e-12);
      expect(dom->contains(pa, 1e-12));
    }
  }
  // subgradient bound
  for (int i = 0; i < 10000; ++i) {
    const double delta = 0.01 + 0.49 * rng.uniform();
    for (Tail t : {Tail::Upper, Tail::Lower})
      expect(std::abs(phi_subgradient(5.0 * rng.normal(), 5.0 * rng.normal(), delta, t)) <= 1.0 + 1.0 / delta);
  }
  // W1 metric axioms
  for (int i = 0; i < 500; ++i) {
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 20);
    Vector a(n), b(n), c(n);
    for (std::size_t j = 0; j < n; ++j) {
      a[j] = rng.normal();
      b[j] = rng.normal() + 1.0;
      c[j] = 3.0 * rng.uniform();
    }
    expect(wasserstein1_1d(a, a) == 0.0);
    expect(std::abs(wasserstein1_1d(a, b) - wasserstein1_1d(b, a)) <= 1e-12);
    expect(wasserstein1_1d(a, b) <= wasserstein1_1d(a, c) + wasserstein1_1d(c, b) + 1e-12);
  }
  // feasibility of every recorded iterate in the runs above
  for (const auto& entry : fs::recursive_directory_iterator(kOut)) {
    const auto name = entry.path().filename().string();
    if (entry.path().extension() != ".csv" || entry.path().parent_path().filename() != "trajectories" ||
        name.find("_best") != std::string::npos)
      continue;
    std::ifstream in(entry.path());
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      std::stringstream ss(line);
      std::string iter, th;
      std::getline(ss, iter, ',');
      std::getline(ss, th, ',');
      expect(std::abs(std::stod(th)) <= std::numbers::pi);
    }
  }
  // determinism of an exported trajectory
  const auto toy = make_toy({3, 2, Sense::Pessimistic});
  OuterConfig oc;
  oc.surrogate = experiment_surrogate(3);
  oc.n_outer = 20;
  oc.seed = 5;
  std::ostringstream x1, x2;
  write_trajectory_csv(x1, pszo_minsel(toy, oc), {true});
  write_trajectory_csv(x2, pszo_minsel(toy, oc), {true});
  expect(x1.str() == x2.str());

  return {failures == 0, std::to_string(checks) + " checks, " + std::to_string(failures) + " failures"};
}

}  // namespace

int main() {
  fs::create_directories(kOut);
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"1 toy optimistic d=2", criterion1},
      {"2 dimension sweep k=d-1", criterion2},
      {"3 fixed intrinsic dimension k=1", criterion3},
      {"4 pessimistic toy", criterion4},
      {"5 baseline separation", criterion5},
      {"6 sampler oracle equivalence", criterion6},
      {"7 inner solver oracle equivalence", criterion7},
      {"8 approximation scaling", criterion8},
      {"9 estimator consistency", criterion9},
      {"10 invariant suite", criterion10},
  };
  int failed = 0;
  for (const auto& [name, fn] : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] criterion %s: %s (%.0fs)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
    failed += !o.pass;
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
