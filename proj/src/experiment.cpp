#include "sqg/experiment.hpp"

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <thread>

namespace sqg {

using json = nlohmann::ordered_json;

namespace {

const std::vector<std::pair<ExperimentKind, std::string>> kNames{
    {ExperimentKind::ToyOptimistic, "toy-optimistic"},
    {ExperimentKind::ToyPessimistic, "toy-pessimistic"},
    {ExperimentKind::DimSweep, "dim-sweep"},
    {ExperimentKind::FixedK, "fixed-k"},
    {ExperimentKind::ApproxSweep, "approx-sweep"},
    {ExperimentKind::SamplerCheck, "sampler-check"},
    {ExperimentKind::Hyperclean, "hyperclean"},
    {ExperimentKind::BaselineCompare, "baseline-compare"},
};

bool is_toy_outer(ExperimentKind k) {
  return k == ExperimentKind::ToyOptimistic || k == ExperimentKind::ToyPessimistic ||
         k == ExperimentKind::DimSweep || k == ExperimentKind::FixedK || k == ExperimentKind::BaselineCompare;
}

bool nonnegative_integer(const json& v) {
  return v.is_number_unsigned() || (v.is_number_integer() && v.get<std::int64_t>() >= 0);
}

// Reads the keys of one JSON object onto existing values and rejects the rest.
class Reader {
 public:
  Reader(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  bool has(const char* key) const { return obj_.contains(key); }

  const json& child(const char* key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  template <class T>
  void get(const char* key, T& out) {
    if (!obj_.contains(key)) return;
    seen_.insert(key);
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(key, "expected a boolean");
    } else if constexpr (std::is_unsigned_v<T>) {
      if (!nonnegative_integer(v)) fail(key, "expected a nonnegative integer");
    } else if constexpr (std::is_arithmetic_v<T>) {
      if (!v.is_number()) fail(key, "expected a number");
    } else if constexpr (std::is_unsigned_v<typename T::value_type>) {
      if (!v.is_array() || !std::all_of(v.begin(), v.end(), nonnegative_integer)) {
        fail(key, "expected a list of nonnegative integers");
      }
    }
    try {
      out = v.get<T>();
    } catch (const nlohmann::json::exception& e) {
      fail(key, e.what());
    }
  }

  std::optional<std::string> get_string(const char* key) {
    if (!obj_.contains(key)) return std::nullopt;
    seen_.insert(key);
    if (!obj_.at(key).is_string()) fail(key, "expected a string");
    return obj_.at(key).get<std::string>();
  }

  [[noreturn]] void fail(const std::string& key, const std::string& why) const {
    throw ConfigError(path_ + "." + key + ": " + why);
  }

  void finish() const {
    for (const auto& item : obj_.items()) {
      if (!seen_.count(item.key())) throw ConfigError("unknown key " + path_ + "." + item.key());
    }
  }

 private:
  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string boundary_name(BoundaryMode m) { return m == BoundaryMode::Interiorize ? "interiorize" : "clamp-evaluate"; }
std::string step_rule_name(StepRule r) {
  return r == StepRule::ConstantAveraged ? "constant-averaged" : "inverse-sqrt";
}
std::string oracle_name(LowerValueOracle::Kind k) {
  return k == LowerValueOracle::Kind::ClosedForm ? "closed-form" : "inner-descent";
}

std::string slug(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c == ' ') out += '_';
    else if (c != '=') out += c;
  }
  return out;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

std::string toy_setting(std::size_t d, std::size_t k) {
  return "d=" + std::to_string(d) + " k=" + std::to_string(k);
}

OuterConfig outer_for(const ExperimentConfig& c, std::size_t lower_dim, std::size_t upper_dim,
                      std::uint64_t seed) {
  OuterConfig o = c.outer;
  o.seed = seed;
  if (c.auto_init_scale) {
    o.surrogate.langevin.init = LangevinInit::gaussian(1.0 / std::sqrt(static_cast<double>(lower_dim)));
  }
  if (o.theta0.empty()) o.theta0.assign(upper_dim, 0.0);
  return o;
}

std::filesystem::path trajectory_path(const ExperimentConfig& c, const std::string& setting,
                                      const std::string& method, std::uint64_t seed) {
  return c.out_dir / "trajectories" / (slug(setting) + "_" + method + "_seed" + std::to_string(seed) + ".csv");
}

void persist(const std::filesystem::path& path, const OuterTrajectory& traj) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_trajectory_csv(os, traj);
  auto best = path;
  best.replace_extension();
  std::ofstream bs(best.string() + "_best.csv");
  write_best_csv(bs, traj);
}

RunRow finish_row(RunRow row, const OuterTrajectory& traj, const std::filesystem::path& path) {
  persist(path, traj);
  row.file = path.filename().string();
  row.best_iter = traj.best.index;
  row.best_value = traj.best.value;
  row.metric = traj.best.error ? *traj.best.error : traj.best.value;
  return row;
}

// Runs `body`; a RunAborted still persists what was recorded.
RunRow guarded(RunRow row, const std::filesystem::path& path, const std::function<RunRow(RunRow)>& body) {
  try {
    return body(row);
  } catch (const RunAborted& e) {
    persist(path, e.partial());
    row.file = path.filename().string();
    row.status = std::string("error: ") + e.what();
  } catch (const std::exception& e) {
    row.status = std::string("error: ") + e.what();
  }
  return row;
}

using Job = std::function<std::vector<RunRow>()>;

std::vector<RunRow> run_jobs(const std::vector<Job>& jobs, std::size_t workers) {
  std::vector<std::vector<RunRow>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) results[i] = jobs[i]();
  };
  workers = std::max<std::size_t>(1, std::min(workers, jobs.size()));
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  std::vector<RunRow> out;
  for (auto& r : results) out.insert(out.end(), r.begin(), r.end());
  return out;
}

std::vector<Job> toy_jobs(const ExperimentConfig& c) {
  std::vector<Job> jobs;
  for (std::size_t d : c.dims) {
    const std::size_t k = c.k.value_or(d - 1);
    const std::string setting = toy_setting(d, k);
    auto problem = std::make_shared<const BilevelProblem>(make_toy({d, k, c.sense}));
    for (std::uint64_t seed : c.seeds) {
      RunRow base;
      base.setting = setting;
      base.seed = seed;
      base.method = "pszo-minsel";
      jobs.push_back([=, &c] {
        const auto path = trajectory_path(c, setting, base.method, seed);
        return std::vector<RunRow>{guarded(base, path, [&](RunRow row) {
          return finish_row(row, pszo_minsel(*problem, outer_for(c, d, 1, seed)), path);
        })};
      });
      if (c.experiment != ExperimentKind::BaselineCompare) continue;
      for (auto variant : {PenaltyVariant::ValuePenalty, PenaltyVariant::GradNormPenalty}) {
        RunRow pb = base;
        pb.method = to_string(variant);
        jobs.push_back([=, &c] {
          PenaltyConfig pc = c.penalty;
          pc.variant = variant;
          const auto path = trajectory_path(c, setting, pb.method, seed);
          return std::vector<RunRow>{guarded(pb, path, [&](RunRow row) {
            const Vector theta0 = c.outer.theta0.empty() ? Vector(1, 0.0) : c.outer.theta0;
            return finish_row(row, pbgd_run(*problem, pc, theta0, Vector{}, seed), path);
          })};
        });
      }
    }
  }
  return jobs;
}

std::vector<Job> sweep_jobs(const ExperimentConfig& c) {
  std::vector<Job> jobs;
  const std::size_t d = c.dims.front();
  const std::size_t k = c.k.value_or(d - 1);
  auto problem = std::make_shared<const BilevelProblem>(make_toy({d, k, c.sense}));
  const LambdaRule rule = power_lambda_rule(c.sweep.lambda_c, k);
  for (double delta : c.sweep.deltas) {
    for (std::uint64_t seed : c.seeds) {
      RunRow base;
      base.setting = "delta=" + format_double(delta);
      base.method = "sq-gibbs";
      base.seed = seed;
      jobs.push_back([=, &c] {
        RunRow row = base;
        try {
          SweepOptions o;
          o.langevin.strict = true;
          o.langevin.step_size = c.sweep.step_size;
          o.langevin.burn_in = c.sweep.burn_in;
          o.langevin.steps_per_sample = 1;
          o.langevin.init = LangevinInit::gaussian(1.0 / std::sqrt(static_cast<double>(d)));
          o.samples = c.sweep.samples;
          o.seeds = {seed};
          const auto r = approximation_sweep(*problem, Vector{c.sweep.theta}, Vector{delta}, rule, o);
          row.metric = r.rows.front().err_mean;
          row.best_value = r.rows.front().lambda;
        } catch (const std::exception& e) {
          row.status = std::string("error: ") + e.what();
        }
        return std::vector<RunRow>{row};
      });
    }
  }
  return jobs;
}

std::vector<Job> sampler_jobs(const ExperimentConfig& c) {
  std::vector<Job> jobs;
  const auto& s = c.sampler_check;
  for (std::uint64_t seed : c.seeds) {
    jobs.push_back([=] {
      std::vector<RunRow> rows;
      auto add = [&](const std::string& setting, const std::string& method, double value, double threshold) {
        RunRow r;
        r.setting = setting;
        r.method = method;
        r.seed = seed;
        r.metric = value;
        r.best_value = threshold;
        r.status = value <= threshold ? "ok" : "fail";
        rows.push_back(r);
      };
      LangevinConfig cfg;
      cfg.lambda = s.lambda;
      cfg.step_size = s.step_size;
      cfg.n_chains = s.chains;
      cfg.samples_per_chain = s.samples_per_chain;
      cfg.steps_per_sample = s.steps_per_sample;
      const std::size_t d = s.gaussian_dim;
      try {
        const GradFn quad = [](ConstSpan, ConstSpan x, MutSpan out) {
          for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i];
        };
        const auto batch = sample_gibbs(quad, d, Vector{0.0}, cfg, seed);
        Vector mu(d, 0.0);
        for (std::size_t i = 0; i < batch.rows; ++i)
          for (std::size_t j = 0; j < d; ++j) mu[j] += batch.row(i)[j] / static_cast<double>(batch.rows);
        const double target = s.lambda / (1.0 - s.step_size / 2.0);
        double diff2 = 0.0;
        for (std::size_t a = 0; a < d; ++a) {
          for (std::size_t b = 0; b < d; ++b) {
            double cov = 0.0;
            for (std::size_t i = 0; i < batch.rows; ++i)
              cov += (batch.row(i)[a] - mu[a]) * (batch.row(i)[b] - mu[b]);
            cov /= static_cast<double>(batch.rows - 1);
            const double ref = a == b ? target : 0.0;
            diff2 += (cov - ref) * (cov - ref);
          }
        }
        const std::string g = "gaussian d=" + std::to_string(d);
        add(g, "mean-norm", norm(mu), 0.01);
        add(g, "cov-rel-err", std::sqrt(diff2 / (static_cast<double>(d) * target * target)), 0.05);

        const auto toy = make_toy({2, 1, Sense::Optimistic});
        const double oracle = gibbs_mean_radius_quadrature(toy, Vector{0.0}, s.lambda, 3.0, s.grid);
        LangevinConfig tc;
        tc.lambda = s.lambda;
        tc.n_chains = 200;
        tc.samples_per_chain = 100;
        const auto tb = sample_gibbs(toy, Vector{0.0}, tc, seed);
        double r = 0.0;
        for (std::size_t i = 0; i < tb.rows; ++i) r += norm(tb.row(i)) / static_cast<double>(tb.rows);
        add("toy-g1 d=2", "radius-rel-err", std::abs(r - oracle) / oracle, 0.02);
      } catch (const std::exception& e) {
        RunRow r;
        r.setting = "sampler";
        r.method = "check";
        r.seed = seed;
        r.status = std::string("error: ") + e.what();
        rows.push_back(r);
      }
      return rows;
    });
  }
  return jobs;
}

std::vector<Job> hyperclean_jobs(const ExperimentConfig& c, std::vector<RunRow>& upfront) {
  std::vector<Job> jobs;
  auto inst = std::make_shared<const HypercleanInstance>(make_hyperclean(c.hyperclean));
  std::filesystem::create_directories(c.out_dir / "data");
  write_hyperclean_files(*inst->data, c.out_dir / "data");
  std::ostringstream name;
  name << "p=" << c.hyperclean.pollute_rate;
  const std::string setting = name.str();

  RunRow plain;
  plain.setting = setting;
  plain.method = "plain-logistic";
  plain.seed = c.hyperclean.data_seed;
  plain.metric = 1.0 - accuracy(inst->data->test, fit_plain_logistic(*inst->data));
  upfront.push_back(plain);

  for (std::uint64_t seed : c.seeds) {
    RunRow base;
    base.setting = setting;
    base.method = "pszo-minsel";
    base.seed = seed;
    jobs.push_back([=, &c] {
      const auto path = trajectory_path(c, setting, base.method, seed);
      return std::vector<RunRow>{guarded(base, path, [&](RunRow row) {
        const auto& p = inst->problem;
        OuterConfig o = outer_for(c, p.lower_dim, p.upper_dim, seed);
        const auto traj = pszo_minsel(p, o);
        row = finish_row(row, traj, path);
        row.metric = 1.0 - accuracy(inst->data->test, fit_weighted_logistic(*inst->data, traj.best.theta));
        return row;
      })};
    });
  }
  return jobs;
}

std::string title_for(ExperimentKind k) {
  switch (k) {
    case ExperimentKind::ApproxSweep:
      return "Approximation error |F_sq - F| (mean +/- 95% CI)";
    case ExperimentKind::SamplerCheck:
      return "Sampler checks (observed value, mean over seeds)";
    case ExperimentKind::Hyperclean:
      return "Test error rate (mean +/- 95% CI)";
    default:
      return "Best-so-far absolute error |theta_hat - theta*| (mean +/- 95% CI)";
  }
}

void ensure_writable(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  const auto probe = dir / ".write_probe";
  std::ofstream os(probe);
  if (ec || !os) throw ConfigError("out_dir '" + dir.string() + "' is not writable");
  os.close();
  std::filesystem::remove(probe, ec);
}

}  // namespace

std::string to_string(ExperimentKind k) {
  for (const auto& [kind, name] : kNames)
    if (kind == k) return name;
  return "unknown";
}

ExperimentKind experiment_from_string(const std::string& name) {
  for (const auto& [kind, n] : kNames)
    if (n == name) return kind;
  std::string all;
  for (const auto& [kind, n] : kNames) all += (all.empty() ? "" : ", ") + n;
  throw ConfigError("unknown experiment '" + name + "' (expected one of: " + all + ")");
}

std::vector<std::string> experiment_names() {
  std::vector<std::string> out;
  for (const auto& kv : kNames) out.push_back(kv.second);
  return out;
}

ExperimentConfig default_config(ExperimentKind kind) {
  ExperimentConfig c;
  c.experiment = kind;
  c.outer.surrogate = experiment_surrogate(2);
  c.out_dir = std::filesystem::path("results") / to_string(kind);
  switch (kind) {
    case ExperimentKind::ToyOptimistic:
      break;
    case ExperimentKind::ToyPessimistic:
      c.dims = {5, 10};
      c.sense = Sense::Pessimistic;
      break;
    case ExperimentKind::DimSweep:
      c.dims = {2, 5, 10, 20};
      break;
    case ExperimentKind::FixedK:
      c.dims = {5, 10, 20, 30};
      c.k = 1;
      break;
    case ExperimentKind::ApproxSweep:
      c.dims = {2};
      c.k = 1;
      c.sense = Sense::Pessimistic;
      c.seeds = {0, 1, 2, 3, 4};
      break;
    case ExperimentKind::SamplerCheck:
      c.seeds = {42};
      break;
    case ExperimentKind::Hyperclean:
      c.seeds = {0, 1, 2};
      c.outer.n_outer = 20;
      c.outer.batch_directions = 4;
      c.outer.eta = 0.001;
      c.outer.theta0.clear();
      break;
    case ExperimentKind::BaselineCompare:
      break;
  }
  return c;
}

json to_json(const ExperimentConfig& c) {
  const auto& o = c.outer;
  const auto& s = o.surrogate;
  const auto& l = s.langevin;
  json j;
  j["experiment"] = to_string(c.experiment);
  j["problem"] = {{"dims", c.dims},
                  {"k", c.k ? json(*c.k) : json(nullptr)},
                  {"sense", to_string(c.sense)}};
  j["outer"] = {{"n_outer", o.n_outer},
                {"batch_directions", o.batch_directions},
                {"rho", o.rho},
                {"eta", o.eta},
                {"boundary_mode", boundary_name(o.boundary_mode)},
                {"reuse_center_batch", o.reuse_center_batch},
                {"warm_start", o.warm_start},
                {"reeval_factor", o.reeval_factor},
                {"theta0", o.theta0}};
  j["surrogate"] = {{"delta", s.sq.delta},
                    {"inner_iters", s.sq.inner_iters},
                    {"fresh_samples", s.fresh_samples},
                    {"step_rule", step_rule_name(s.sq.step_rule)},
                    {"beta_init", s.sq.beta_init},
                    {"beta_bound", s.sq.beta_bound},
                    {"calibrate_bound", s.calibrate_bound},
                    {"bound_safety", s.bound_safety},
                    {"bound_floor", s.bound_floor}};
  json init_sigma = c.auto_init_scale ? json("auto") : json(l.init.sigma);
  j["langevin"] = {{"lambda", l.lambda},
                   {"step_size", l.step_size},
                   {"burn_in", l.burn_in},
                   {"steps_per_sample", l.steps_per_sample},
                   {"strict", l.strict},
                   {"init", l.init.kind == LangevinInit::Kind::Zero ? "zero" : "gaussian"},
                   {"init_sigma", init_sigma}};
  if (c.experiment == ExperimentKind::BaselineCompare) {
    const auto& p = c.penalty;
    j["penalty"] = {{"gamma", p.gamma},
                    {"joint_step", p.joint_step},
                    {"n_iters", p.n_iters},
                    {"lower_value_oracle", oracle_name(p.lower_value_oracle.kind)},
                    {"inner_steps", p.lower_value_oracle.steps},
                    {"inner_step_size", p.lower_value_oracle.step_size},
                    {"alternating", p.alternating},
                    {"backtrack", p.backtrack}};
  }
  if (c.experiment == ExperimentKind::ApproxSweep) {
    const auto& w = c.sweep;
    j["sweep"] = {{"deltas", w.deltas},       {"lambda_c", w.lambda_c}, {"samples", w.samples},
                  {"step_size", w.step_size}, {"burn_in", w.burn_in},   {"theta", w.theta}};
  }
  if (c.experiment == ExperimentKind::SamplerCheck) {
    const auto& w = c.sampler_check;
    j["sampler_check"] = {{"lambda", w.lambda},
                          {"step_size", w.step_size},
                          {"chains", w.chains},
                          {"samples_per_chain", w.samples_per_chain},
                          {"steps_per_sample", w.steps_per_sample},
                          {"gaussian_dim", w.gaussian_dim},
                          {"grid", w.grid}};
  }
  if (c.experiment == ExperimentKind::Hyperclean) {
    const auto& h = c.hyperclean;
    j["hyperclean"] = {{"n_train", h.n_train},
                       {"n_val", h.n_val},
                       {"n_test", h.n_test},
                       {"pollute_rate", h.pollute_rate},
                       {"feature_dim", h.feature_dim},
                       {"ridge", h.ridge},
                       {"weight_bound", h.weight_bound},
                       {"class_separation", h.class_separation},
                       {"data_seed", h.data_seed}};
  }
  j["seeds"] = c.seeds;
  j["out_dir"] = c.out_dir.string();
  return j;
}

ExperimentConfig config_from_json(const json& doc) {
  Reader top(doc, "config");
  const auto name = top.get_string("experiment");
  if (!name) throw ConfigError("config.experiment is required");
  ExperimentConfig c = default_config(experiment_from_string(*name));

  if (top.has("problem")) {
    Reader r(top.child("problem"), "problem");
    r.get("dims", c.dims);
    if (r.has("k")) {
      const json& k = r.child("k");
      if (k.is_null()) c.k.reset();
      else if (nonnegative_integer(k)) c.k = k.get<std::size_t>();
      else r.fail("k", "expected a nonnegative integer or null");
    }
    if (auto s = r.get_string("sense")) {
      if (*s == "pessimistic") c.sense = Sense::Pessimistic;
      else if (*s == "optimistic") c.sense = Sense::Optimistic;
      else r.fail("sense", "expected 'pessimistic' or 'optimistic'");
    }
    r.finish();
  }
  if (top.has("outer")) {
    Reader r(top.child("outer"), "outer");
    auto& o = c.outer;
    r.get("n_outer", o.n_outer);
    r.get("batch_directions", o.batch_directions);
    r.get("rho", o.rho);
    r.get("eta", o.eta);
    if (auto s = r.get_string("boundary_mode")) {
      if (*s == "interiorize") o.boundary_mode = BoundaryMode::Interiorize;
      else if (*s == "clamp-evaluate") o.boundary_mode = BoundaryMode::ClampEvaluate;
      else r.fail("boundary_mode", "expected 'interiorize' or 'clamp-evaluate'");
    }
    r.get("reuse_center_batch", o.reuse_center_batch);
    r.get("warm_start", o.warm_start);
    r.get("reeval_factor", o.reeval_factor);
    r.get("theta0", o.theta0);
    r.finish();
  }
  if (top.has("surrogate")) {
    Reader r(top.child("surrogate"), "surrogate");
    auto& s = c.outer.surrogate;
    r.get("delta", s.sq.delta);
    r.get("inner_iters", s.sq.inner_iters);
    r.get("fresh_samples", s.fresh_samples);
    if (auto v = r.get_string("step_rule")) {
      if (*v == "constant-averaged") s.sq.step_rule = StepRule::ConstantAveraged;
      else if (*v == "inverse-sqrt") s.sq.step_rule = StepRule::InverseSqrt;
      else r.fail("step_rule", "expected 'constant-averaged' or 'inverse-sqrt'");
    }
    r.get("beta_init", s.sq.beta_init);
    r.get("beta_bound", s.sq.beta_bound);
    r.get("calibrate_bound", s.calibrate_bound);
    r.get("bound_safety", s.bound_safety);
    r.get("bound_floor", s.bound_floor);
    r.finish();
  }
  if (top.has("langevin")) {
    Reader r(top.child("langevin"), "langevin");
    auto& l = c.outer.surrogate.langevin;
    r.get("lambda", l.lambda);
    r.get("step_size", l.step_size);
    r.get("burn_in", l.burn_in);
    r.get("steps_per_sample", l.steps_per_sample);
    r.get("strict", l.strict);
    if (auto v = r.get_string("init")) {
      if (*v == "zero") {
        l.init = LangevinInit::zero();
        c.auto_init_scale = false;
      } else if (*v != "gaussian") {
        r.fail("init", "expected 'zero' or 'gaussian'");
      }
    }
    if (r.has("init_sigma")) {
      const json& v = r.child("init_sigma");
      if (v.is_string() && v.get<std::string>() == "auto") {
        c.auto_init_scale = l.init.kind != LangevinInit::Kind::Zero;
      } else if (v.is_number()) {
        c.auto_init_scale = false;
        if (l.init.kind != LangevinInit::Kind::Zero) l.init = LangevinInit::gaussian(v.get<double>());
      } else {
        r.fail("init_sigma", "expected a number or \"auto\"");
      }
    }
    r.finish();
  }
  if (top.has("penalty")) {
    Reader r(top.child("penalty"), "penalty");
    auto& p = c.penalty;
    r.get("gamma", p.gamma);
    r.get("joint_step", p.joint_step);
    r.get("n_iters", p.n_iters);
    if (auto v = r.get_string("lower_value_oracle")) {
      if (*v == "closed-form") p.lower_value_oracle.kind = LowerValueOracle::Kind::ClosedForm;
      else if (*v == "inner-descent") p.lower_value_oracle.kind = LowerValueOracle::Kind::InnerDescent;
      else r.fail("lower_value_oracle", "expected 'closed-form' or 'inner-descent'");
    }
    r.get("inner_steps", p.lower_value_oracle.steps);
    r.get("inner_step_size", p.lower_value_oracle.step_size);
    r.get("alternating", p.alternating);
    r.get("backtrack", p.backtrack);
    r.finish();
  }
  if (top.has("sweep")) {
    Reader r(top.child("sweep"), "sweep");
    auto& w = c.sweep;
    r.get("deltas", w.deltas);
    r.get("lambda_c", w.lambda_c);
    r.get("samples", w.samples);
    r.get("step_size", w.step_size);
    r.get("burn_in", w.burn_in);
    r.get("theta", w.theta);
    r.finish();
  }
  if (top.has("sampler_check")) {
    Reader r(top.child("sampler_check"), "sampler_check");
    auto& w = c.sampler_check;
    r.get("lambda", w.lambda);
    r.get("step_size", w.step_size);
    r.get("chains", w.chains);
    r.get("samples_per_chain", w.samples_per_chain);
    r.get("steps_per_sample", w.steps_per_sample);
    r.get("gaussian_dim", w.gaussian_dim);
    r.get("grid", w.grid);
    r.finish();
  }
  if (top.has("hyperclean")) {
    Reader r(top.child("hyperclean"), "hyperclean");
    auto& h = c.hyperclean;
    r.get("n_train", h.n_train);
    r.get("n_val", h.n_val);
    r.get("n_test", h.n_test);
    r.get("pollute_rate", h.pollute_rate);
    r.get("feature_dim", h.feature_dim);
    r.get("ridge", h.ridge);
    r.get("weight_bound", h.weight_bound);
    r.get("class_separation", h.class_separation);
    r.get("data_seed", h.data_seed);
    r.finish();
  }
  top.get("seeds", c.seeds);
  if (auto dir = top.get_string("out_dir")) c.out_dir = *dir;
  top.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  json doc;
  try {
    doc = json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
  return config_from_json(doc);
}

void validate_config(const ExperimentConfig& c) {
  if (c.seeds.empty()) throw ConfigError("seeds must be nonempty");
  if (std::set<std::uint64_t>(c.seeds.begin(), c.seeds.end()).size() != c.seeds.size()) {
    throw ConfigError("seeds must be distinct");
  }
  auto toy = [&](std::size_t d) {
    if (d < 2) throw ConfigError("problem.dims: every dimension must be at least 2");
    const std::size_t k = c.k.value_or(d - 1);
    try {
      return make_toy({d, k, c.sense});
    } catch (const InvalidArgument& e) {
      throw ConfigError(std::string("problem: ") + e.what());
    }
  };
  if (c.experiment != ExperimentKind::SamplerCheck && c.experiment != ExperimentKind::Hyperclean &&
      c.dims.empty()) {
    throw ConfigError("problem.dims must be nonempty");
  }
  if (is_toy_outer(c.experiment)) {
    for (std::size_t d : c.dims) {
      const auto p = toy(d);
      outer_for(c, d, 1, 0).validate(p);
      if (c.experiment == ExperimentKind::BaselineCompare) {
        for (auto v : {PenaltyVariant::ValuePenalty, PenaltyVariant::GradNormPenalty}) {
          PenaltyConfig pc = c.penalty;
          pc.variant = v;
          pc.validate(p);
        }
      }
    }
  }
  if (c.experiment == ExperimentKind::ApproxSweep) {
    toy(c.dims.front());
    if (c.dims.size() != 1) throw ConfigError("approx-sweep takes a single dimension");
    if (c.sweep.deltas.empty()) throw ConfigError("sweep.deltas must be nonempty");
    for (double d : c.sweep.deltas) {
      if (!(d > 0.0 && d <= 0.5)) throw ConfigError("sweep.deltas must lie in (0, 1/2]");
    }
    if (!(c.sweep.lambda_c > 0.0) || !(c.sweep.step_size > 0.0) || c.sweep.samples == 0) {
      throw ConfigError("sweep: lambda_c, step_size and samples must be positive");
    }
  }
  if (c.experiment == ExperimentKind::SamplerCheck) {
    const auto& s = c.sampler_check;
    if (!(s.lambda > 0.0) || !(s.step_size > 0.0) || s.chains == 0 || s.samples_per_chain == 0 ||
        s.steps_per_sample == 0 || s.gaussian_dim == 0 || s.grid < 3) {
      throw ConfigError("sampler_check: all settings must be positive (grid >= 3)");
    }
  }
  if (c.experiment == ExperimentKind::Hyperclean) {
    c.hyperclean.validate();
    if (!c.outer.theta0.empty() && c.outer.theta0.size() != c.hyperclean.n_train) {
      throw ConfigError("outer.theta0 must be empty or have n_train entries");
    }
    BilevelProblem shape;
    shape.upper_dim = c.hyperclean.n_train;
    shape.lower_dim = c.hyperclean.feature_dim + 1;
    shape.domain = UpperDomain::ball(Vector(c.hyperclean.n_train, 0.0), c.hyperclean.weight_bound);
    outer_for(c, shape.lower_dim, shape.upper_dim, 0).validate(shape);
  }
  ensure_writable(c.out_dir);
}

std::size_t workers_from_env() {
  if (const char* v = std::getenv("SQG_WORKERS")) {
    char* end = nullptr;
    const long n = std::strtol(v, &end, 10);
    if (end != v && *end == '\0' && n > 0) return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

std::vector<SummaryRow> summarize(const std::vector<RunRow>& runs) {
  std::vector<std::pair<std::string, std::string>> order;
  std::map<std::pair<std::string, std::string>, Vector> values;
  for (const auto& r : runs) {
    if (r.status.rfind("error", 0) == 0) continue;
    const auto key = std::make_pair(r.setting, r.method);
    if (!values.count(key)) order.push_back(key);
    values[key].push_back(r.metric);
  }
  std::vector<SummaryRow> out;
  for (const auto& key : order) {
    const Vector& v = values[key];
    SummaryRow s;
    s.setting = key.first;
    s.method = key.second;
    s.mean_err = mean(v);
    s.ci95 = 1.96 * stddev(v) / std::sqrt(static_cast<double>(v.size()));
    s.n_seeds = v.size();
    out.push_back(s);
  }
  return out;
}

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows) {
  os << "setting,method,mean_err,ci95,n_seeds\n";
  for (const auto& r : rows) {
    os << r.setting << "," << r.method << "," << format_double(r.mean_err) << "," << format_double(r.ci95)
       << "," << r.n_seeds << "\n";
  }
}

void write_runs_csv(std::ostream& os, const std::vector<RunRow>& rows) {
  os << "setting,method,seed,status,metric,best_value,best_iter,file\n";
  for (const auto& r : rows) {
    std::string status = r.status;
    for (char& ch : status)
      if (ch == ',' || ch == '\n') ch = ';';
    os << r.setting << "," << r.method << "," << r.seed << "," << status << "," << format_double(r.metric) << ","
       << format_double(r.best_value) << "," << r.best_iter << "," << r.file << "\n";
  }
}

void write_table(std::ostream& os, const std::string& title, const std::vector<SummaryRow>& rows) {
  std::vector<std::string> settings, methods;
  std::map<std::pair<std::string, std::string>, const SummaryRow*> cell;
  for (const auto& r : rows) {
    if (std::find(settings.begin(), settings.end(), r.setting) == settings.end()) settings.push_back(r.setting);
    if (std::find(methods.begin(), methods.end(), r.method) == methods.end()) methods.push_back(r.method);
    cell[{r.setting, r.method}] = &r;
  }
  std::size_t w0 = 8;
  for (const auto& s : settings) w0 = std::max(w0, s.size());
  const std::size_t w = 22;
  os << title << "\n\n" << std::left << std::setw(static_cast<int>(w0 + 2)) << "setting";
  for (const auto& m : methods) os << std::setw(static_cast<int>(w)) << m;
  os << "\n";
  for (const auto& s : settings) {
    os << std::setw(static_cast<int>(w0 + 2)) << s;
    for (const auto& m : methods) {
      auto it = cell.find({s, m});
      std::ostringstream v;
      if (it == cell.end()) {
        v << "-";
      } else {
        v << std::fixed << std::setprecision(4) << it->second->mean_err << " +/- " << it->second->ci95;
      }
      os << std::setw(static_cast<int>(w)) << v.str();
    }
    os << "\n";
  }
}

double gibbs_mean_radius_quadrature(const BilevelProblem& p, ConstSpan theta, double lambda, double half_width,
                                    std::size_t grid) {
  if (p.lower_dim != 2) throw InvalidArgument("gibbs_mean_radius_quadrature: lower level must be two-dimensional");
  if (grid < 3 || !(lambda > 0.0)) throw InvalidArgument("gibbs_mean_radius_quadrature: bad grid or lambda");
  const double step = 2.0 * half_width / static_cast<double>(grid - 1);
  Vector gv(grid * grid);
  double gmin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const Vector x{-half_width + step * static_cast<double>(i), -half_width + step * static_cast<double>(j)};
      gv[i * grid + j] = p.g(theta, x);
      gmin = std::min(gmin, gv[i * grid + j]);
    }
  }
  double z = 0.0, acc = 0.0;
  for (std::size_t i = 0; i < grid; ++i) {
    for (std::size_t j = 0; j < grid; ++j) {
      const double w = std::exp(-(gv[i * grid + j] - gmin) / lambda);
      const double x = -half_width + step * static_cast<double>(i), y = -half_width + step * static_cast<double>(j);
      z += w;
      acc += w * std::hypot(x, y);
    }
  }
  return acc / z;
}

ExperimentReport run_experiment(const ExperimentConfig& c, std::size_t workers) {
  validate_config(c);
  std::filesystem::create_directories(c.out_dir / "trajectories");
  {
    std::ofstream cfg(c.out_dir / "config.json");
    cfg << to_json(c).dump(2) << "\n";
  }

  std::vector<RunRow> upfront;
  std::vector<Job> jobs;
  if (is_toy_outer(c.experiment)) jobs = toy_jobs(c);
  else if (c.experiment == ExperimentKind::ApproxSweep) jobs = sweep_jobs(c);
  else if (c.experiment == ExperimentKind::SamplerCheck) jobs = sampler_jobs(c);
  else jobs = hyperclean_jobs(c, upfront);

  ExperimentReport rep;
  rep.runs = upfront;
  const auto results = run_jobs(jobs, workers);
  rep.runs.insert(rep.runs.end(), results.begin(), results.end());
  rep.summary = summarize(rep.runs);
  for (const auto& r : rep.runs) {
    if (r.status != "ok") rep.exit_code = 1;
  }

  rep.summary_csv = c.out_dir / "summary.csv";
  rep.runs_csv = c.out_dir / "runs.csv";
  rep.table_txt = c.out_dir / "table.txt";
  std::ofstream(rep.summary_csv) << [&] {
    std::ostringstream os;
    write_summary_csv(os, rep.summary);
    return os.str();
  }();
  std::ofstream(rep.runs_csv) << [&] {
    std::ostringstream os;
    write_runs_csv(os, rep.runs);
    return os.str();
  }();
  std::ofstream table(rep.table_txt);
  write_table(table, title_for(c.experiment), rep.summary);

  if (c.experiment == ExperimentKind::ApproxSweep) {
    SweepResult sr;
    for (const auto& s : rep.summary) {
      SweepRow row;
      row.delta = std::stod(s.setting.substr(6));
      for (const auto& r : rep.runs)
        if (r.setting == s.setting) row.lambda = r.best_value;
      row.err_mean = s.mean_err;
      row.err_std = s.n_seeds > 0 ? s.ci95 * std::sqrt(static_cast<double>(s.n_seeds)) / 1.96 : 0.0;
      row.n_seeds = s.n_seeds;
      sr.rows.push_back(row);
    }
    std::ofstream sweep(c.out_dir / "sweep.csv");
    write_sweep_csv(sweep, sr);
    if (sr.rows.size() >= 2) {
      Vector lx, ly;
      for (const auto& r : sr.rows) {
        lx.push_back(std::log(r.delta));
        ly.push_back(std::log(std::max(r.err_mean, 1e-300)));
      }
      table << "\nlog-log slope of error against delta: " << std::setprecision(4) << ols_slope(lx, ly) << "\n";
    }
  }
  return rep;
}

}  // namespace sqg
