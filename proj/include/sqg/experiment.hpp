#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "sqg/diagnostics.hpp"
#include "sqg/penalty.hpp"
#include "sqg/problems.hpp"
#include "sqg/zeroth_order.hpp"

namespace sqg {

enum class ExperimentKind {
  ToyOptimistic,
  ToyPessimistic,
  DimSweep,
  FixedK,
  ApproxSweep,
  SamplerCheck,
  Hyperclean,
  BaselineCompare,
};

std::string to_string(ExperimentKind k);
ExperimentKind experiment_from_string(const std::string& name);
std::vector<std::string> experiment_names();

struct SweepSettings {
  std::vector<double> deltas{0.2, 0.1, 0.05, 0.025};
  /// lambda = lambda_c * delta^(2(k+1)/k)
  double lambda_c = 1.0;
  std::size_t samples = 100000;
  double step_size = 0.01;
  std::size_t burn_in = 1000;
  double theta = 0.0;
};

struct SamplerCheckSettings {
  double lambda = 0.01;
  double step_size = 0.01;
  std::size_t chains = 1000;
  std::size_t samples_per_chain = 100;
  std::size_t steps_per_sample = 100;
  std::size_t gaussian_dim = 3;
  /// quadrature grid points per axis on [-3, 3]^2
  std::size_t grid = 2001;
};

struct ExperimentConfig {
  ExperimentKind experiment = ExperimentKind::ToyOptimistic;
  std::vector<std::size_t> dims{2};
  /// Intrinsic dimension; unset means k = d - 1.
  std::optional<std::size_t> k;
  Sense sense = Sense::Optimistic;
  OuterConfig outer;
  /// Chains start at N(0, I/d) when set, whatever langevin.init says.
  bool auto_init_scale = true;
  PenaltyConfig penalty;
  SweepSettings sweep;
  SamplerCheckSettings sampler_check;
  HypercleanSpec hyperclean;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::filesystem::path out_dir = "results";
};

ExperimentConfig default_config(ExperimentKind kind);

/// Missing keys keep the defaults of the named experiment; unknown keys and
/// malformed values raise ConfigError.
ExperimentConfig config_from_json(const nlohmann::ordered_json& doc);
nlohmann::ordered_json to_json(const ExperimentConfig& config);
ExperimentConfig load_config(const std::filesystem::path& path);

/// Semantic checks: seeds, dimensions, per-run configs, writable out_dir.
void validate_config(const ExperimentConfig& config);

struct RunRow {
  std::string setting;
  std::string method;
  std::uint64_t seed = 0;
  /// "ok", "fail" (check did not pass) or "error: ..."
  std::string status = "ok";
  /// metric aggregated in the summary (absolute error, or test error rate)
  double metric = 0.0;
  double best_value = 0.0;
  std::size_t best_iter = 0;
  std::string file;
};

struct SummaryRow {
  std::string setting;
  std::string method;
  double mean_err = 0.0;
  double ci95 = 0.0;
  std::size_t n_seeds = 0;
};

struct ExperimentReport {
  std::vector<RunRow> runs;
  std::vector<SummaryRow> summary;
  std::filesystem::path summary_csv, runs_csv, table_txt;
  /// 0 when every run succeeded, 1 otherwise
  int exit_code = 0;
};

/// SQG_WORKERS when set to a positive integer, else the hardware thread count.
std::size_t workers_from_env();

ExperimentReport run_experiment(const ExperimentConfig& config, std::size_t workers);

/// Groups successful rows by (setting, method) in first-seen order;
/// ci95 = 1.96 * std / sqrt(n).
std::vector<SummaryRow> summarize(const std::vector<RunRow>& runs);

void write_summary_csv(std::ostream& os, const std::vector<SummaryRow>& rows);
void write_runs_csv(std::ostream& os, const std::vector<RunRow>& rows);
void write_table(std::ostream& os, const std::string& title, const std::vector<SummaryRow>& rows);

/// E|X| under exp(-g(theta, .)/lambda) for a two-dimensional lower level, by
/// quadrature on [-half_width, half_width]^2.
double gibbs_mean_radius_quadrature(const BilevelProblem& problem, ConstSpan theta, double lambda,
                                    double half_width, std::size_t grid);

}  // namespace sqg
