#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "splitvfu/experiment.hpp"

namespace splitvfu::cli {

struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
};

ExperimentConfig resolve(const std::filesystem::path& config, const Overrides& o);

// Each command writes its artifacts under cfg.output_dir.
RunResult cmd_run(const ExperimentConfig& cfg);
void cmd_sweep(const ExperimentConfig& cfg, const std::string& param, const std::vector<double>& values);
void cmd_ablate(const ExperimentConfig& cfg);
void cmd_retrain(const ExperimentConfig& cfg);
void cmd_eval(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint);
std::string cmd_inspect(const std::filesystem::path& checkpoint);

}  // namespace splitvfu::cli
