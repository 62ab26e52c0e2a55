#include <iostream>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "splitvfu/errors.hpp"

namespace cli = splitvfu::cli;

int main(int argc, char** argv) {
  CLI::App app{"Split vertical federated learning simulator with client-level unlearning"};
  app.require_subcommand(1);

  std::string config;
  cli::Overrides o;
  std::string out;
  std::uint64_t seed = 0;
  int threads = 0;
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "Experiment config (JSON)")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Master seed override");
    sub->add_option("--threads", threads, "Worker threads for per-party compute")->check(CLI::PositiveNumber);
  };

  CLI::App* run = app.add_subcommand("run", "Pretrain, unlearn, retrain gold, evaluate");
  common(run);
  CLI::App* sweep = app.add_subcommand("sweep", "Unlearn over a grid of c or alpha");
  common(sweep);
  std::string param;
  std::vector<double> values;
  sweep->add_option("--param", param, "c | alpha")->required()->check(CLI::IsMember({"c", "alpha"}));
  sweep->add_option("--values", values, "Grid values")->required()->delimiter(',');
  CLI::App* ablate = app.add_subcommand("ablate", "coordinated vs no_gcm vs rand_proj");
  common(ablate);
  CLI::App* retrain = app.add_subcommand("retrain", "Train the gold model without the forgetting party");
  common(retrain);
  CLI::App* eval = app.add_subcommand("eval", "Evaluate a saved checkpoint");
  common(eval);
  std::string checkpoint;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);
  CLI::App* inspect = app.add_subcommand("inspect-checkpoint", "Print checkpoint metadata");
  inspect->add_option("checkpoint", checkpoint, "Checkpoint file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  for (CLI::App* sub : {run, sweep, ablate, retrain, eval}) {
    if (!sub->parsed()) continue;
    if (sub->count("--out") > 0) o.out = out;
    if (sub->count("--seed") > 0) o.seed = seed;
    if (sub->count("--threads") > 0) o.threads = threads;
  }

  try {
    if (inspect->parsed()) {
      std::cout << cli::cmd_inspect(checkpoint) << '\n';
      return 0;
    }
    const splitvfu::ExperimentConfig cfg = cli::resolve(config, o);
    if (run->parsed()) cli::cmd_run(cfg);
    if (sweep->parsed()) cli::cmd_sweep(cfg, param, values);
    if (ablate->parsed()) cli::cmd_ablate(cfg);
    if (retrain->parsed()) cli::cmd_retrain(cfg);
    if (eval->parsed()) cli::cmd_eval(cfg, checkpoint);
  } catch (const splitvfu::ConfigError& e) {
    spdlog::error("config error: {}", e.what());
    return 2;
  } catch (const splitvfu::NumericError& e) {
    spdlog::error("numeric error: {}", e.what());
    return 3;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return 1;
  }
  return 0;
}
