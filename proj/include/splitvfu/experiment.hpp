#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "splitvfu/dataset.hpp"
#include "splitvfu/evaluation.hpp"
#include "splitvfu/unlearning.hpp"
#include "splitvfu/vfl.hpp"

namespace splitvfu {

inline constexpr int kConfigSchemaVersion = 1;

struct IdxSource {
  std::string train_images;
  std::string train_labels;
  std::string test_images;
  std::string test_labels;
  std::size_t train_limit = 0;  // 0 = all
  std::size_t test_limit = 0;
};

struct SynthSource {
  std::size_t n_train = 600;
  std::size_t n_test = 300;
  int height = 12;
  int width = 12;
  int num_classes = 3;
  int channels = 1;
  double noise = 0.15;
};

struct TrainSettings {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.05;
};

struct EvalSettings {
  bool original_clean = true;
  bool retrain_gold = true;
  bool mia = true;
  bool kl = true;
};

struct ExperimentConfig {
  std::uint64_t seed = 1;
  std::string source = "synth";  // "synth" | "idx"
  IdxSource idx;
  SynthSource synth;
  int num_slices = 3;
  ActiveTopology topology = ActiveTopology::kLabelOnly;
  int forget_party = 2;
  TriggerSpec trigger;
  ArchitectureSpec model;
  TrainSettings pretrain;
  std::optional<TrainSettings> retrain;  // defaults to pretrain
  UnlearnConfig unlearn;
  EvalSettings eval;
  std::string output_dir = "runs/default";
  bool save_checkpoints = true;
  int threads = 1;
};

// Throws ConfigError naming the offending field path.
ExperimentConfig parse_config(const std::string& json_text);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string config_to_json(const ExperimentConfig& cfg);
// FNV-1a over the canonical JSON, excluding output location and thread count.
std::uint64_t config_hash(const ExperimentConfig& cfg);
std::string hex64(std::uint64_t v);

// Relative dataset paths resolve against SPLITVFU_DATA_ROOT when set.
std::filesystem::path resolve_data_path(const std::string& path);

struct PreparedData {
  PartitionedDataset train_clean;
  PartitionedDataset train;      // poisoned in the forgetting party's slice
  PartitionedDataset test;
  PartitionedDataset triggered;  // test set with the trigger stamped, true labels
  PartyId active;
  PartyId forget;
  int num_classes = 0;
};

PreparedData prepare_data(const ExperimentConfig& cfg);

TrainConfig train_config(const ExperimentConfig& cfg, const TrainSettings& s);
ArchitectureSpec architecture(const ExperimentConfig& cfg, int num_classes);
UnlearnConfig unlearn_config(const ExperimentConfig& cfg);

VflModel pretrain_model(const ExperimentConfig& cfg, const PreparedData& data, const PartitionedDataset& train);
VflModel retrain_model(const ExperimentConfig& cfg, const PreparedData& data);

// Evaluates one model. `gold` enables KL; MIA uses the poisoned training set
// as members and the clean test set as nonmembers.
MetricsRecord evaluate_model(const ExperimentConfig& cfg, const PreparedData& data, const VflModel& model,
                             const VflModel* gold);

struct ModelReport {
  std::string name;
  MetricsRecord metrics;
};

struct RunResult {
  std::vector<ModelReport> models;
  std::vector<TraceRecord> trace;
  std::map<std::string, double> timings;
  VflModel original;
  VflModel unlearned;
  std::optional<VflModel> gold;
  double anchor_distance_before = 0.0;
  double anchor_distance_after = 0.0;
};

RunResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data);

// One unlearning run from an already pretrained model; used by sweeps and
// ablations so every variant starts from the same checkpoint.
struct VariantResult {
  VflModel model;
  MetricsRecord metrics;
  std::vector<TraceRecord> trace;
};

VariantResult run_unlearn_variant(const ExperimentConfig& cfg, const PreparedData& data,
                                  const VflModel& original, const VflModel* gold, const UnlearnConfig& ucfg);

// Artifacts.
void write_summary_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                       const std::vector<ModelReport>& models);
void write_metrics_jsonl(const std::filesystem::path& path, const ExperimentConfig& cfg, const RunResult& run);

}  // namespace splitvfu
