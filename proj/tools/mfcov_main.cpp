// mfcov: multifidelity covariance estimation benchmark driver.
//
// Subcommands:
//   run        execute an experiment described by a JSON config
//   tune       run only the pilot + lambda-tuning phases and print the result
//   summarize  recompute group summaries from a per-trial CSV
//   selftest   run the fast deterministic property suite
//
// Exit codes: 0 success, 1 configuration error, 2 runtime failure,
// 3 selftest failure.

#include <exception>
#include <iostream>
#include <string>

#include "../vendor/CLI11.hpp"

#include "mfcov/bench.hpp"

int main(int argc, char** argv) {
  CLI::App app{"multifidelity covariance estimation benchmarks"};
  app.require_subcommand(1);

  std::string run_config;
  CLI::App* run_cmd = app.add_subcommand("run", "execute an experiment");
  run_cmd->add_option("-c,--config,config", run_config, "JSON config file")
      ->required();

  std::string tune_config;
  CLI::App* tune_cmd =
      app.add_subcommand("tune", "pilot + lambda tuning phases only");
  tune_cmd->add_option("-c,--config,config", tune_config, "JSON config file")
      ->required();

  std::string csv_path;
  CLI::App* summarize_cmd =
      app.add_subcommand("summarize", "recompute summaries from a trials CSV");
  summarize_cmd->add_option("csv", csv_path, "per-trial CSV file")->required();

  CLI::App* selftest_cmd =
      app.add_subcommand("selftest", "run the deterministic property suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (run_cmd->parsed()) {
      mfcov::ExperimentConfig cfg = mfcov::load_config(run_config);
      mfcov::apply_env_overrides(cfg);
      return mfcov::run_experiment(cfg, std::cerr);
    }
    if (tune_cmd->parsed()) {
      mfcov::ExperimentConfig cfg = mfcov::load_config(tune_config);
      mfcov::apply_env_overrides(cfg);
      return mfcov::run_tune(cfg, std::cout, std::cerr);
    }
    if (summarize_cmd->parsed()) {
      return mfcov::summarize_file(csv_path, std::cout, std::cerr);
    }
    if (selftest_cmd->parsed()) {
      return mfcov::run_property_suite(std::cerr) ? 0 : 3;
    }
  } catch (const mfcov::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
