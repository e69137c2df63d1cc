#include "rsss/commands.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <string>

namespace {

constexpr int kExitConfigError = 2;
constexpr int kExitNumericalFailure = 3;

struct CommonArgs {
  std::string config_path;
  int jobs = 1;
  std::int64_t seed = -1;
  std::string out_dir;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "Run configuration (JSON)")
      ->required()
      ->check(CLI::ExistingFile);
  cmd->add_option("--jobs", args.jobs, "Worker cap (reserved; runs are sequential)")
      ->check(CLI::PositiveNumber);
  cmd->add_option("--seed", args.seed, "Override the config seed");
  cmd->add_option("--out", args.out_dir, "Override the config output directory");
}

rsss::RunConfig load(const CommonArgs& args) {
  rsss::RunConfig cfg = rsss::load_run_config(args.config_path);
  if (args.seed >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Regime-switching state-space modeling: simulation, estimation "
               "and forecasting"};
  app.require_subcommand(1);

  CommonArgs sim_args, fit_args, fc_args, ev_args;
  CLI::App* sim = app.add_subcommand("simulate", "Generate synthetic panels");
  add_common(sim, sim_args);
  CLI::App* fit = app.add_subcommand("fit", "Estimate parameters on the training window");
  add_common(fit, fit_args);
  CLI::App* forecast =
      app.add_subcommand("forecast", "Filter the full horizon with frozen parameters");
  add_common(forecast, fc_args);
  CLI::App* evaluate = app.add_subcommand("evaluate", "Compute metric tables");
  add_common(evaluate, ev_args);

  CLI11_PARSE(app, argc, argv);

  try {
    if (sim->parsed()) {
      rsss::cmd_simulate(load(sim_args));
    } else if (fit->parsed()) {
      rsss::cmd_fit(load(fit_args));
    } else if (forecast->parsed()) {
      rsss::cmd_forecast(load(fc_args));
    } else if (evaluate->parsed()) {
      rsss::cmd_evaluate(load(ev_args));
    }
  } catch (const rsss::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const rsss::ConstraintError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfigError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumericalFailure;
  }
  return 0;
}
