#include "sqg/problems.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "json.hpp"
#include "sqg/random.hpp"

namespace sqg {

namespace {

// f(theta,x) = 2|x| + <x,u> with u = (cos t, sin t, 0...) (or u = e_1 when
// the direction does not rotate).
double sphere_upper(ConstSpan x, double c, double s) {
  const double r = norm(x);
  return 2.0 * r + c * x[0] + s * x[1];
}

void sphere_upper_grad_x(ConstSpan x, double c, double s, MutSpan out) {
  const double r = norm(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = r > 0.0 ? 2.0 * x[i] / r : 0.0;
  out[0] += c;
  out[1] += s;
}

}  // namespace

BilevelProblem make_toy(const ToySpec& spec) {
  if (spec.d < 2) throw InvalidArgument("toy: ambient dimension d must be at least 2");
  if (spec.k < 1 || spec.k + 1 > spec.d) {
    throw InvalidArgument("toy: need 1 <= k <= d-1 (got d=" + std::to_string(spec.d) +
                          ", k=" + std::to_string(spec.k) + ")");
  }
  const std::size_t d = spec.d;
  const std::size_t active = spec.k + 1;

  BilevelProblem p;
  p.name = "toy(d=" + std::to_string(d) + ",k=" + std::to_string(spec.k) + "," + to_string(spec.sense) + ")";
  p.upper_dim = 1;
  p.lower_dim = d;
  p.sense = spec.sense;
  p.domain = UpperDomain::cube(1, -std::numbers::pi, std::numbers::pi);
  p.theta_star = Vector{0.0};

  p.f = [](ConstSpan th, ConstSpan x) { return sphere_upper(x, std::cos(th[0]), std::sin(th[0])); };
  p.grad_x_f = [](ConstSpan th, ConstSpan x, MutSpan out) {
    sphere_upper_grad_x(x, std::cos(th[0]), std::sin(th[0]), out);
  };
  p.grad_theta_f = [](ConstSpan th, ConstSpan x, MutSpan out) {
    out[0] = -std::sin(th[0]) * x[0] + std::cos(th[0]) * x[1];
  };

  // Coordinates beyond the first k+1 carry +x_i^2/2 so the Gibbs measure is
  // normalizable; the minimizer set is unchanged.
  p.g = [active](ConstSpan th, ConstSpan x) {
    double s = 0.0, rest = 0.0;
    for (std::size_t i = 0; i < active; ++i) s += x[i] * x[i];
    for (std::size_t i = active; i < x.size(); ++i) rest += x[i] * x[i];
    const double t2 = th[0] * th[0];
    return 0.25 * (s - t2) * (s - t2) - 0.5 * s + 0.5 * rest;
  };
  p.grad_x_g = [active](ConstSpan th, ConstSpan x, MutSpan out) {
    double s = 0.0;
    for (std::size_t i = 0; i < active; ++i) s += x[i] * x[i];
    const double a = s - th[0] * th[0] - 1.0;
    for (std::size_t i = 0; i < active; ++i) out[i] = a * x[i];
    for (std::size_t i = active; i < x.size(); ++i) out[i] = x[i];
  };
  p.grad_theta_g = [active](ConstSpan th, ConstSpan x, MutSpan out) {
    double s = 0.0;
    for (std::size_t i = 0; i < active; ++i) s += x[i] * x[i];
    out[0] = -th[0] * (s - th[0] * th[0]);
  };
  p.hess_xx_g_vec = [active](ConstSpan th, ConstSpan x, ConstSpan v, MutSpan out) {
    double s = 0.0, xv = 0.0;
    for (std::size_t i = 0; i < active; ++i) {
      s += x[i] * x[i];
      xv += x[i] * v[i];
    }
    const double a = s - th[0] * th[0] - 1.0;
    for (std::size_t i = 0; i < active; ++i) out[i] = a * v[i] + 2.0 * x[i] * xv;
    for (std::size_t i = active; i < x.size(); ++i) out[i] = v[i];
  };
  p.cross_theta_x_g_vec = [active](ConstSpan th, ConstSpan x, ConstSpan v, MutSpan out) {
    double xv = 0.0;
    for (std::size_t i = 0; i < active; ++i) xv += x[i] * v[i];
    out[0] = -2.0 * th[0] * xv;
  };
  p.lower_value = [](ConstSpan th) { return -0.25 - 0.5 * th[0] * th[0]; };
  p.grad_lower_value = [](ConstSpan th, MutSpan out) { out[0] = -th[0]; };

  const double scale = spec.sense == Sense::Pessimistic ? 3.0 : 1.0;
  p.closed_form_hyper = [scale](ConstSpan th) { return scale * std::sqrt(1.0 + th[0] * th[0]); };
  return p;
}

std::vector<Vector> toy_manifold_points(const ToySpec& spec, double theta, std::size_t count,
                                        std::uint64_t seed) {
  Rng rng(seed);
  const double radius = std::sqrt(1.0 + theta * theta);
  std::vector<Vector> pts;
  pts.reserve(count);
  for (std::size_t n = 0; n < count; ++n) {
    Vector x(spec.d, 0.0);
    double r = 0.0;
    do {
      for (std::size_t i = 0; i <= spec.k; ++i) x[i] = rng.normal();
      r = norm(ConstSpan(x).subspan(0, spec.k + 1));
    } while (r == 0.0);
    for (std::size_t i = 0; i <= spec.k; ++i) x[i] *= radius / r;
    pts.push_back(std::move(x));
  }
  return pts;
}

BilevelProblem make_example26(std::size_t d, Sense sense) {
  if (d < 2) throw InvalidArgument("example26: d must be at least 2");
  BilevelProblem p;
  p.name = "example26(d=" + std::to_string(d) + ")";
  p.upper_dim = 1;
  p.lower_dim = d;
  p.sense = sense;
  p.domain = UpperDomain::cube(1, 0.0, 1.0);
  p.theta_star = Vector{0.0};
  p.f = [](ConstSpan, ConstSpan x) { return sphere_upper(x, 1.0, 0.0); };
  p.grad_x_f = [](ConstSpan, ConstSpan x, MutSpan out) { sphere_upper_grad_x(x, 1.0, 0.0, out); };
  p.grad_theta_f = [](ConstSpan, ConstSpan, MutSpan out) { out[0] = 0.0; };
  p.g = [](ConstSpan th, ConstSpan x) {
    const double s = dot(x, x);
    return 0.25 * (s - th[0]) * (s - th[0]) - 0.5 * s;
  };
  p.grad_x_g = [](ConstSpan th, ConstSpan x, MutSpan out) {
    const double a = dot(x, x) - th[0] - 1.0;
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * x[i];
  };
  p.grad_theta_g = [](ConstSpan th, ConstSpan x, MutSpan out) { out[0] = -0.5 * (dot(x, x) - th[0]); };
  p.hess_xx_g_vec = [](ConstSpan th, ConstSpan x, ConstSpan v, MutSpan out) {
    const double a = dot(x, x) - th[0] - 1.0;
    const double xv = dot(x, v);
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = a * v[i] + 2.0 * x[i] * xv;
  };
  p.cross_theta_x_g_vec = [](ConstSpan, ConstSpan x, ConstSpan v, MutSpan out) { out[0] = -dot(x, v); };
  p.lower_value = [](ConstSpan th) { return -0.25 - 0.5 * th[0]; };
  p.grad_lower_value = [](ConstSpan, MutSpan out) { out[0] = -0.5; };
  const double scale = sense == Sense::Pessimistic ? 3.0 : 1.0;
  p.closed_form_hyper = [scale](ConstSpan th) { return scale * std::sqrt(1.0 + th[0]); };
  return p;
}

BilevelProblem make_quadratic_sanity(std::size_t d) {
  if (d < 1) throw InvalidArgument("quadratic sanity: d must be positive");
  BilevelProblem p;
  p.name = "quadratic(d=" + std::to_string(d) + ")";
  p.upper_dim = 1;
  p.lower_dim = d;
  p.sense = Sense::Optimistic;
  p.domain = UpperDomain::cube(1, -2.0, 2.0);
  p.theta_star = Vector{0.0};
  p.f = [](ConstSpan, ConstSpan x) { return dot(x, x); };
  p.grad_x_f = [](ConstSpan, ConstSpan x, MutSpan out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = 2.0 * x[i];
  };
  p.grad_theta_f = [](ConstSpan, ConstSpan, MutSpan out) { out[0] = 0.0; };
  p.g = [](ConstSpan th, ConstSpan x) {
    double s = 0.0;
    for (double v : x) s += (v - th[0]) * (v - th[0]);
    return 0.5 * s;
  };
  p.grad_x_g = [](ConstSpan th, ConstSpan x, MutSpan out) {
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - th[0];
  };
  p.grad_theta_g = [](ConstSpan th, ConstSpan x, MutSpan out) {
    double s = 0.0;
    for (double v : x) s += v - th[0];
    out[0] = -s;
  };
  p.hess_xx_g_vec = [](ConstSpan, ConstSpan, ConstSpan v, MutSpan out) {
    std::copy(v.begin(), v.end(), out.begin());
  };
  p.cross_theta_x_g_vec = [](ConstSpan, ConstSpan, ConstSpan v, MutSpan out) {
    out[0] = -std::accumulate(v.begin(), v.end(), 0.0);
  };
  p.lower_value = [](ConstSpan) { return 0.0; };
  p.grad_lower_value = [](ConstSpan, MutSpan out) { out[0] = 0.0; };
  const double dd = static_cast<double>(d);
  p.closed_form_hyper = [dd](ConstSpan th) { return dd * th[0] * th[0]; };
  return p;
}

// ---------------------------------------------------------------------------
// data hyper-cleaning

void HypercleanSpec::validate() const {
  if (n_train == 0 || n_test == 0 || feature_dim == 0) {
    throw ConfigError("hyperclean: n_train, n_test and feature_dim must be positive");
  }
  if (n_val < 10) throw ConfigError("hyperclean: n_val must be at least 10");
  if (!(pollute_rate >= 0.0 && pollute_rate < 1.0)) {
    throw ConfigError("hyperclean: pollute_rate must lie in [0, 1)");
  }
  if (!(ridge > 0.0)) throw ConfigError("hyperclean: ridge must be positive");
  if (!(weight_bound > 0.0)) throw ConfigError("hyperclean: weight_bound must be positive");
}

namespace {

double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// log(1 + exp(z)) without overflow
double softplus(double z) { return z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

// Model x = (w_1..w_q, bias).
double logit(ConstSpan feat, ConstSpan x) {
  double z = x[feat.size()];
  for (std::size_t j = 0; j < feat.size(); ++j) z += feat[j] * x[j];
  return z;
}

// -log P(label | feat; x)
double nll(ConstSpan feat, int label, ConstSpan x) {
  const double z = logit(feat, x);
  return label == 1 ? softplus(-z) : softplus(z);
}

LabeledSet draw_set(std::size_t n, const Vector& mean, Rng& rng) {
  LabeledSet s;
  s.features.reserve(n);
  s.labels.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = rng.uniform() < 0.5 ? 1 : 0;
    const double sign = y == 1 ? 1.0 : -1.0;
    Vector f(mean.size());
    for (std::size_t j = 0; j < f.size(); ++j) f[j] = sign * mean[j] + rng.normal();
    s.features.push_back(std::move(f));
    s.labels.push_back(y);
  }
  return s;
}

double mean_nll(const LabeledSet& s, ConstSpan x) {
  double acc = 0.0;
  for (std::size_t i = 0; i < s.labels.size(); ++i) acc += nll(s.features[i], s.labels[i], x);
  return acc / static_cast<double>(s.labels.size());
}

void mean_nll_grad(const LabeledSet& s, ConstSpan x, MutSpan out) {
  std::fill(out.begin(), out.end(), 0.0);
  const std::size_t q = x.size() - 1;
  for (std::size_t i = 0; i < s.labels.size(); ++i) {
    const double r = sigmoid(logit(s.features[i], x)) - s.labels[i];
    for (std::size_t j = 0; j < q; ++j) out[j] += r * s.features[i][j];
    out[q] += r;
  }
  for (auto& v : out) v /= static_cast<double>(s.labels.size());
}

Vector fit_logistic(const LabeledSet& s, const Vector& weights, double ridge, int iters) {
  const std::size_t q = s.features.front().size();
  const std::size_t n = s.labels.size();
  Eigen::VectorXd x = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(q + 1));
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd grad = ridge * x;
    Eigen::MatrixXd hess = ridge * Eigen::MatrixXd::Identity(x.size(), x.size());
    for (std::size_t i = 0; i < n; ++i) {
      Eigen::VectorXd a(x.size());
      for (std::size_t j = 0; j < q; ++j) a[static_cast<Eigen::Index>(j)] = s.features[i][j];
      a[static_cast<Eigen::Index>(q)] = 1.0;
      const double p = sigmoid(a.dot(x));
      const double w = weights[i] / static_cast<double>(n);
      grad += w * (p - s.labels[i]) * a;
      hess += w * p * (1.0 - p) * a * a.transpose();
    }
    const Eigen::VectorXd step = hess.ldlt().solve(grad);
    x -= step;
    if (step.norm() < 1e-12) break;
  }
  return Vector(x.data(), x.data() + x.size());
}

}  // namespace

HypercleanData generate_hyperclean_data(const HypercleanSpec& spec) {
  spec.validate();
  Rng rng(derive_seed(spec.data_seed, {0x68636c65616eull}));
  Vector mean(spec.feature_dim, spec.class_separation / std::sqrt(static_cast<double>(spec.feature_dim)));
  HypercleanData data;
  data.spec = spec;
  data.train = draw_set(spec.n_train, mean, rng);
  data.val = draw_set(spec.n_val, mean, rng);
  data.test = draw_set(spec.n_test, mean, rng);

  // Flip exactly round(p * n) training labels chosen uniformly without replacement.
  std::vector<std::size_t> order(spec.n_train);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t i = order.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.uniform() * static_cast<double>(i));
    std::swap(order[i - 1], order[std::min(j, i - 1)]);
  }
  const auto n_flip = static_cast<std::size_t>(std::llround(spec.pollute_rate * static_cast<double>(spec.n_train)));
  data.corrupted.assign(spec.n_train, false);
  for (std::size_t i = 0; i < n_flip; ++i) {
    data.train.labels[order[i]] = 1 - data.train.labels[order[i]];
    data.corrupted[order[i]] = true;
  }
  return data;
}

HypercleanInstance make_hyperclean(const HypercleanSpec& spec) {
  auto data = std::make_shared<const HypercleanData>(generate_hyperclean_data(spec));
  const std::size_t q = spec.feature_dim;
  const double n = static_cast<double>(spec.n_train);
  const double ridge = spec.ridge;

  BilevelProblem p;
  p.name = "hyperclean(n_train=" + std::to_string(spec.n_train) + ",p=" + std::to_string(spec.pollute_rate) + ")";
  p.upper_dim = spec.n_train;
  p.lower_dim = q + 1;
  p.sense = Sense::Optimistic;
  p.domain = UpperDomain::ball(Vector(spec.n_train, 0.0), spec.weight_bound);

  p.f = [data](ConstSpan, ConstSpan x) { return mean_nll(data->val, x); };
  p.grad_x_f = [data](ConstSpan, ConstSpan x, MutSpan out) { mean_nll_grad(data->val, x, out); };
  p.grad_theta_f = [](ConstSpan, ConstSpan, MutSpan out) { std::fill(out.begin(), out.end(), 0.0); };
  p.g = [data, n, ridge](ConstSpan th, ConstSpan x) {
    const auto& tr = data->train;
    double acc = 0.0;
    for (std::size_t i = 0; i < tr.labels.size(); ++i) {
      acc += sigmoid(th[i]) * nll(tr.features[i], tr.labels[i], x);
    }
    return acc / n + 0.5 * ridge * dot(x, x);
  };
  p.grad_x_g = [data, n, ridge, q](ConstSpan th, ConstSpan x, MutSpan out) {
    const auto& tr = data->train;
    for (std::size_t j = 0; j <= q; ++j) out[j] = ridge * x[j];
    for (std::size_t i = 0; i < tr.labels.size(); ++i) {
      const auto& a = tr.features[i];
      const double r = sigmoid(th[i]) * (sigmoid(logit(a, x)) - tr.labels[i]) / n;
      for (std::size_t j = 0; j < q; ++j) out[j] += r * a[j];
      out[q] += r;
    }
  };
  p.grad_theta_g = [data, n](ConstSpan th, ConstSpan x, MutSpan out) {
    const auto& tr = data->train;
    for (std::size_t i = 0; i < tr.labels.size(); ++i) {
      const double w = sigmoid(th[i]);
      out[i] = w * (1.0 - w) * nll(tr.features[i], tr.labels[i], x) / n;
    }
  };
  p.hess_xx_g_vec = [data, n, ridge, q](ConstSpan th, ConstSpan x, ConstSpan v, MutSpan out) {
    const auto& tr = data->train;
    for (std::size_t j = 0; j <= q; ++j) out[j] = ridge * v[j];
    for (std::size_t i = 0; i < tr.labels.size(); ++i) {
      const auto& a = tr.features[i];
      const double s = sigmoid(logit(a, x));
      const double av = logit(a, v);  // <a, v_w> + v_bias
      const double c = sigmoid(th[i]) * s * (1.0 - s) * av / n;
      for (std::size_t j = 0; j < q; ++j) out[j] += c * a[j];
      out[q] += c;
    }
  };
  p.cross_theta_x_g_vec = [data, n](ConstSpan th, ConstSpan x, ConstSpan v, MutSpan out) {
    const auto& tr = data->train;
    for (std::size_t i = 0; i < tr.labels.size(); ++i) {
      const auto& a = tr.features[i];
      const double w = sigmoid(th[i]);
      out[i] = w * (1.0 - w) * (sigmoid(logit(a, x)) - tr.labels[i]) * logit(a, v) / n;
    }
  };
  return {std::move(p), std::move(data)};
}

Vector fit_weighted_logistic(const HypercleanData& data, ConstSpan theta, int newton_iters) {
  Vector w(data.train.labels.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = sigmoid(theta[i]);
  return fit_logistic(data.train, w, data.spec.ridge, newton_iters);
}

Vector fit_plain_logistic(const HypercleanData& data, int newton_iters) {
  return fit_logistic(data.train, Vector(data.train.labels.size(), 1.0), data.spec.ridge, newton_iters);
}

double accuracy(const LabeledSet& set, ConstSpan model) {
  std::size_t hits = 0;
  for (std::size_t i = 0; i < set.labels.size(); ++i) {
    const int pred = logit(set.features[i], model) > 0.0 ? 1 : 0;
    hits += pred == set.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(set.labels.size());
}

void write_hyperclean_files(const HypercleanData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "dataset.csv");
  if (!csv) throw ConfigError("cannot write " + (dir / "dataset.csv").string());
  csv << "split,label";
  for (std::size_t j = 0; j < data.spec.feature_dim; ++j) csv << ",feat_" << (j + 1);
  csv << "\n";
  csv.precision(17);
  auto emit = [&](const char* split, const LabeledSet& s) {
    for (std::size_t i = 0; i < s.labels.size(); ++i) {
      csv << split << "," << s.labels[i];
      for (double v : s.features[i]) csv << "," << v;
      csv << "\n";
    }
  };
  emit("train", data.train);
  emit("val", data.val);
  emit("test", data.test);

  const auto& sp = data.spec;
  nlohmann::ordered_json manifest = {
      {"data_seed", sp.data_seed},     {"pollute_rate", sp.pollute_rate},
      {"feature_dim", sp.feature_dim}, {"n_train", sp.n_train},
      {"n_val", sp.n_val},             {"n_test", sp.n_test},
      {"ridge", sp.ridge},             {"weight_bound", sp.weight_bound},
      {"class_separation", sp.class_separation},
      {"n_corrupted", std::count(data.corrupted.begin(), data.corrupted.end(), true)},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << "\n";
}

}  // namespace sqg
