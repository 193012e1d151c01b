#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gsbl/gsbl.hpp"

namespace {

struct Overrides {
  std::optional<int> trials;
  std::optional<int> threads;
  std::optional<std::string> out;

  void add_to(CLI::App* cmd) {
    cmd->add_option("--trials", trials, "Monte Carlo trials per sweep value")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
    cmd->add_option("--out", out, "output directory");
  }

  void apply(gsbl::ExperimentConfig& c) const {
    if (trials) c.trials = *trials;
    if (threads) c.threads = *threads;
    if (out) c.output = *out;
  }
};

int execute(const gsbl::ExperimentConfig& c) {
  std::cerr << "running " << c.values.size() << " sweep value(s) x " << c.trials << " trial(s) on " << c.threads
            << " thread(s)\n";
  const auto records = gsbl::run_monte_carlo(c, &std::cerr);
  const auto paths = gsbl::emit_csv(records, c, c.output);
  {
    std::ofstream cfg(std::filesystem::path(c.output) / "config.txt");
    cfg << gsbl::experiment_to_config(c);
  }
  std::ifstream summary(paths.summary);
  std::cout << summary.rdbuf();
  std::cout << "wrote " << paths.raw.string() << ", " << paths.aggregate.string() << ", " << paths.timing.string()
            << ", " << paths.summary.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Group-sparse channel estimation experiments"};
  app.require_subcommand(1);

  std::string config_path;
  Overrides run_opts;
  auto* run = app.add_subcommand("run", "run an experiment from a key-value config file");
  run->add_option("--config", config_path, "config file")->required()->check(CLI::ExistingFile);
  run_opts.add_to(run);

  std::string preset;
  Overrides sweep_opts;
  auto* sweep = app.add_subcommand("sweep", "run a built-in large-scale sweep");
  sweep->add_option("preset", preset, "fig2a | fig2b | fig3a | fig3b | fig6")
      ->required()
      ->check(CLI::IsMember(gsbl::preset_names()));
  sweep_opts.add_to(sweep);

  std::string dump_name;
  auto* dump = app.add_subcommand("dump-preset", "print a preset as a config file");
  dump->add_option("preset", dump_name, "preset name")->required()->check(CLI::IsMember(gsbl::preset_names()));

  std::string snap_config;
  std::string snap_out = "snapshot";
  std::string snap_method = "proposed";
  double snap_value = 0.0;
  int snap_trial = 0;
  auto* snap = app.add_subcommand("snapshot", "run one trial and export the variational state");
  snap->add_option("--config", snap_config, "config file")->required()->check(CLI::ExistingFile);
  snap->add_option("--method", snap_method, "proposed | group_only | common")
      ->check(CLI::IsMember({"proposed", "group_only", "common"}));
  snap->add_option("--value", snap_value, "sweep value (first listed value by default)");
  snap->add_option("--trial", snap_trial, "trial index")->check(CLI::NonNegativeNumber);
  snap->add_option("--out", snap_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*run) {
      auto c = gsbl::experiment_from_config(gsbl::KeyValueConfig::load(config_path));
      run_opts.apply(c);
      c.validate();
      return execute(c);
    }
    if (*sweep) {
      auto c = gsbl::preset_config(preset);
      sweep_opts.apply(c);
      c.validate();
      return execute(c);
    }
    if (*dump) {
      std::cout << gsbl::experiment_to_config(gsbl::preset_config(dump_name));
      return 0;
    }
    if (*snap) {
      const auto base = gsbl::experiment_from_config(gsbl::KeyValueConfig::load(snap_config));
      const double value = snap->count("--value") ? snap_value : base.values.front();
      const auto c = gsbl::apply_sweep(base, value);
      const auto data = gsbl::make_trial_data(c, gsbl::trial_seed(c.base_seed, value, snap_trial));
      gsbl::Hyperparams h = c.hyper;
      const auto method = gsbl::parse_method(snap_method);
      h.mode = method == gsbl::Method::proposed     ? gsbl::InferenceMode::general
               : method == gsbl::Method::group_only ? gsbl::InferenceMode::group_only
                                                    : gsbl::InferenceMode::common;
      h.offgrid_enabled = c.offgrid;
      h.seed = data.inference_seed;
      const auto result = gsbl::run_inference(h, data.observations, data.geometry);
      const auto files =
          gsbl::write_snapshot(snap_out, result, &data.realization, c.scenario.subpaths_per_cluster);
      std::cout << "iterations " << result.summary.iterations << ", final ELBO " << result.summary.final_elbo
                << ", NMSE " << gsbl::nmse(result.summary.channels, data.channels) << "\n";
      for (const auto& f : files) std::cout << "wrote " << f.string() << "\n";
      return 0;
    }
  } catch (const gsbl::config_error& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
