#include "sqg/langevin.hpp"

#include <cmath>
#include <ostream>
#include <sstream>

#include "sqg/random.hpp"

namespace sqg {

namespace {

constexpr double kDivergenceRadius = 1e6;

}  // namespace

std::string LangevinConfig::validate() const {
  if (!(lambda > 0.0)) throw ConfigError("langevin: lambda must be positive");
  if (!(step_size > 0.0)) throw ConfigError("langevin: step_size must be positive");
  if (steps_per_sample == 0) throw ConfigError("langevin: steps_per_sample must be positive");
  if (n_chains == 0 || samples_per_chain == 0) {
    throw ConfigError("langevin: n_chains and samples_per_chain must be positive");
  }
  if (strict && samples_per_chain != 1) {
    throw ConfigError("langevin: strict mode requires samples_per_chain == 1");
  }
  if (init.kind == LangevinInit::Kind::Explicit && init.points.empty()) {
    throw ConfigError("langevin: explicit init needs at least one point");
  }
  if (init.kind == LangevinInit::Kind::GaussianScale && !(init.sigma >= 0.0)) {
    throw ConfigError("langevin: init sigma must be nonnegative");
  }
  if (smoothness) {
    if (!(step_size < 2.0 * lambda / *smoothness)) {
      std::ostringstream os;
      os << "langevin: step_size " << step_size << " violates h < 2*lambda/L = "
         << 2.0 * lambda / *smoothness;
      throw ConfigError(os.str());
    }
    return {};
  }
  return "langevin: no smoothness estimate given; step-size condition not checked";
}

LangevinConfig LangevinConfig::with_sample_count(std::size_t count) const {
  if (count == 0) throw InvalidArgument("langevin: sample count must be positive");
  LangevinConfig c = *this;
  if (strict) {
    c.n_chains = count;
    c.samples_per_chain = 1;
    return c;
  }
  c.n_chains = std::min(n_chains, count);
  if (count % c.n_chains != 0) {
    // fall back to the largest chain count dividing the request
    while (count % c.n_chains != 0) --c.n_chains;
  }
  c.samples_per_chain = count / c.n_chains;
  return c;
}

Vector lmc_step(ConstSpan x, ConstSpan grad, double h, double lambda, ConstSpan noise,
                std::size_t step_index) {
  if (x.size() != grad.size() || x.size() != noise.size()) {
    throw InvalidArgument("lmc_step: x, grad and noise must have equal length");
  }
  if (!all_finite(grad)) {
    throw SamplerDivergence(0, step_index,
                            "lmc_step: nonfinite gradient at step " + std::to_string(step_index));
  }
  const double c = std::sqrt(2.0 * lambda * h);
  Vector out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - h * grad[i] + c * noise[i];
  return out;
}

GibbsSampleBatch sample_gibbs(const BilevelProblem& problem, ConstSpan theta,
                              const LangevinConfig& config, std::uint64_t seed) {
  if (theta.size() != problem.upper_dim) {
    throw InvalidArgument("sample_gibbs: theta dimension does not match the problem");
  }
  return sample_gibbs(problem.grad_x_g, problem.lower_dim, theta, config, seed);
}

GibbsSampleBatch sample_gibbs(const GradFn& grad_x_g, std::size_t d, ConstSpan theta,
                              const LangevinConfig& config, std::uint64_t seed) {
  config.validate();
  const std::size_t n_chains = config.n_chains;
  const std::size_t per_chain = config.samples_per_chain;
  const double h = config.step_size;
  const double c = std::sqrt(2.0 * config.lambda * h);
  const double limit2 = kDivergenceRadius * kDivergenceRadius;

  GibbsSampleBatch batch;
  batch.rows = n_chains * per_chain;
  batch.cols = d;
  batch.samples.assign(batch.rows * d, 0.0);
  batch.theta.assign(theta.begin(), theta.end());
  batch.config = config;
  batch.master_seed = seed;
  batch.chain_begin = 0;
  batch.chain_end = n_chains;

  Vector x(d), grad(d);
  for (std::size_t chain = 0; chain < n_chains; ++chain) {
    Rng rng(derive_seed(seed, {chain}));
    switch (config.init.kind) {
      case LangevinInit::Kind::Zero:
        std::fill(x.begin(), x.end(), 0.0);
        break;
      case LangevinInit::Kind::GaussianScale:
        for (auto& v : x) v = config.init.sigma * rng.normal();
        break;
      case LangevinInit::Kind::Explicit: {
        const auto& pts = config.init.points;
        const Vector& p = pts[pts.size() == 1 ? 0 : chain % pts.size()];
        if (p.size() != d) throw InvalidArgument("sample_gibbs: explicit init point has wrong dimension");
        x = p;
        break;
      }
    }

    const std::size_t total_steps = config.burn_in + per_chain * config.steps_per_sample;
    std::size_t recorded = 0;
    for (std::size_t step = 1; step <= total_steps; ++step) {
      grad_x_g(theta, x, grad);
      double r2 = 0.0;
      for (std::size_t i = 0; i < d; ++i) {
        x[i] += -h * grad[i] + c * rng.normal();
        r2 += x[i] * x[i];
      }
      if (!(r2 <= limit2)) {
        std::ostringstream os;
        os << "sampler diverged in chain " << chain << " at step " << step
           << " (state norm " << std::sqrt(r2) << "); reduce the step size (currently " << h << ")";
        throw SamplerDivergence(chain, step, os.str());
      }
      if (step > config.burn_in && (step - config.burn_in) % config.steps_per_sample == 0) {
        std::copy(x.begin(), x.end(),
                  batch.samples.begin() + static_cast<std::ptrdiff_t>((chain * per_chain + recorded) * d));
        ++recorded;
      }
    }
  }
  return batch;
}

void write_samples_csv(std::ostream& os, const GibbsSampleBatch& batch) {
  os << "chain,step";
  for (std::size_t j = 0; j < batch.cols; ++j) os << ",x_" << (j + 1);
  os << "\n";
  const std::size_t per_chain = batch.config.samples_per_chain;
  os.precision(17);
  for (std::size_t i = 0; i < batch.rows; ++i) {
    const std::size_t chain = batch.chain_begin + i / per_chain;
    const std::size_t step = batch.config.burn_in + (i % per_chain + 1) * batch.config.steps_per_sample;
    os << chain << "," << step;
    for (double v : batch.row(i)) os << "," << v;
    os << "\n";
  }
}

}  // namespace sqg
