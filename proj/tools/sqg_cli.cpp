#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "sqg/experiment.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kRunFailure = 1;
constexpr int kConfigError = 2;

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Superquantile-Gibbs bilevel experiments"};
  app.require_subcommand(1);

  std::string config_path;
  auto* run = app.add_subcommand("run", "Run an experiment described by a JSON config");
  run->add_option("--config", config_path, "Path to the JSON config")->required();

  std::string experiment;
  auto* defaults = app.add_subcommand("print-defaults", "Print the default config of an experiment");
  defaults->add_option("--experiment", experiment, "Experiment name")
      ->required()
      ->check(CLI::IsMember(sqg::experiment_names()));

  std::string validate_path;
  auto* validate = app.add_subcommand("validate", "Check a config without running it");
  validate->add_option("--config", validate_path, "Path to the JSON config")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*defaults) {
      std::cout << sqg::to_json(sqg::default_config(sqg::experiment_from_string(experiment))).dump(2) << "\n";
      return kOk;
    }
    if (*validate) {
      sqg::validate_config(sqg::load_config(validate_path));
      std::cout << "config OK\n";
      return kOk;
    }
    const auto config = sqg::load_config(config_path);
    const std::size_t workers = sqg::workers_from_env();
    std::cerr << "running " << sqg::to_string(config.experiment) << " with " << workers << " worker(s)\n";
    const auto report = sqg::run_experiment(config, workers);
    std::ifstream table(report.table_txt);
    std::cout << table.rdbuf();
    std::size_t failed = 0;
    for (const auto& r : report.runs) {
      if (r.status != "ok") {
        ++failed;
        std::cerr << r.setting << " " << r.method << " seed " << r.seed << ": " << r.status << "\n";
      }
    }
    std::cerr << "wrote " << report.summary_csv.string() << ", " << report.runs_csv.string() << "\n";
    if (failed) std::cerr << failed << " of " << report.runs.size() << " runs did not pass\n";
    return report.exit_code == 0 ? kOk : kRunFailure;
  } catch (const sqg::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kRunFailure;
  }
}
