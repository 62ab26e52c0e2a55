#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "splitvfu/errors.hpp"
#include "splitvfu/experiment.hpp"

namespace splitvfu {
namespace {

const char* kMinimal = R"({"schema_version": 1, "dataset": {"source": "synth"}})";

std::string tiny(std::uint64_t seed = 1) {
  return R"({
    "schema_version": 1, "seed": )" +
         std::to_string(seed) + R"(,
    "dataset": {"source": "synth", "synth": {"n_train": 90, "n_test": 60, "height": 6, "width": 9, "num_classes": 3}},
    "trigger": {"height": 2, "width": 2, "poison_rate": 0.2},
    "model": {"encoder_hidden": [6], "hidden_dim": 4, "top_hidden": [8]},
    "pretrain": {"epochs": 4, "batch_size": 16, "learning_rate": 0.1},
    "unlearn": {"alpha": 1.0, "learning_rate": 0.1, "epochs": 2, "batch_size": 16}
  })";
}

std::string config_error_field(const std::string& text) {
  try {
    parse_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

TEST(Config, DefaultsFromMinimal) {
  const ExperimentConfig c = parse_config(kMinimal);
  EXPECT_EQ(c.source, "synth");
  EXPECT_EQ(c.num_slices, 3);
  EXPECT_EQ(c.forget_party, 2);
  EXPECT_DOUBLE_EQ(c.unlearn.c, 1.0);
  EXPECT_DOUBLE_EQ(c.unlearn.alpha, 1e-3);
  EXPECT_FALSE(c.retrain.has_value());
}

TEST(Config, UnknownKeysNameTheirPath) {
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "synth"}, "sed": 3})"), "sed");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "synth"}, "unlearn": {"aplha": 1}})"),
            "unlearn.aplha");
  EXPECT_EQ(config_error_field(
                R"({"schema_version": 1, "dataset": {"source": "synth", "synth": {"nosie": 0.1}}})"),
            "dataset.synth.nosie");
}

TEST(Config, RejectsBadValues) {
  EXPECT_EQ(config_error_field(R"({"dataset": {"source": "synth"}})"), "schema_version");
  EXPECT_EQ(config_error_field(R"({"schema_version": 2, "dataset": {"source": "synth"}})"), "schema_version");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1})"), "dataset");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "csv"}})"), "dataset.source");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "synth"}, "unlearn": {"c": 0}})"),
            "unlearn.c");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "synth"}, "unlearn": {"mode": "x"}})"),
            "unlearn.mode");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "synth"}, "forget_party": 4})"),
            "forget_party");
  EXPECT_EQ(config_error_field(
                R"({"schema_version": 1, "dataset": {"source": "synth"}, "partition": {"active": "owns_last_slice"}, "forget_party": 3})"),
            "forget_party");
  EXPECT_EQ(config_error_field(R"({"schema_version": 1, "dataset": {"source": "synth"}, "seed": "one"})"), "seed");
  EXPECT_EQ(config_error_field("{not json"), "<root>");
}

TEST(Config, MissingIdxFileNamesField) {
  ExperimentConfig c = parse_config(R"({"schema_version": 1, "dataset": {"source": "idx", "idx": {
      "train_images": "/nonexistent/a", "train_labels": "/nonexistent/b",
      "test_images": "/nonexistent/c", "test_labels": "/nonexistent/d"}}})");
  try {
    prepare_data(c);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "dataset.idx.train_images");
  }
}

TEST(Config, RoundTripAndHash) {
  const ExperimentConfig a = parse_config(tiny());
  const ExperimentConfig b = parse_config(config_to_json(a));
  EXPECT_EQ(config_to_json(a), config_to_json(b));
  EXPECT_EQ(config_hash(a), config_hash(b));

  ExperimentConfig moved = a;
  moved.output_dir = "elsewhere";
  moved.threads = 4;
  EXPECT_EQ(config_hash(moved), config_hash(a));

  ExperimentConfig changed = a;
  changed.unlearn.alpha = 0.5;
  EXPECT_NE(config_hash(changed), config_hash(a));
  EXPECT_EQ(hex64(0xabcULL), "0000000000000abc");
}

TEST(Config, DataRootResolvesRelativePaths) {
  setenv("SPLITVFU_DATA_ROOT", "/data/root", 1);
  EXPECT_EQ(resolve_data_path("mnist/x"), std::filesystem::path("/data/root/mnist/x"));
  EXPECT_EQ(resolve_data_path("/abs/x"), std::filesystem::path("/abs/x"));
  unsetenv("SPLITVFU_DATA_ROOT");
  EXPECT_EQ(resolve_data_path("mnist/x"), std::filesystem::path("mnist/x"));
}

TEST(Experiment, PreparedDataShapes) {
  const ExperimentConfig c = parse_config(tiny());
  const PreparedData d = prepare_data(c);
  EXPECT_EQ(d.train.size(), 90u);
  EXPECT_EQ(d.test.size(), 60u);
  EXPECT_EQ(d.active, PartyId{4});
  EXPECT_EQ(d.forget, PartyId{2});
  EXPECT_EQ(d.train.poisoned_count(), 18u);
  EXPECT_EQ(d.train_clean.poisoned_count(), 0u);
  EXPECT_EQ(d.triggered.labels, d.test.labels);
}

TEST(Experiment, EndToEndDeterministic) {
  const ExperimentConfig c = parse_config(tiny(3));
  const PreparedData d = prepare_data(c);
  const RunResult a = run_experiment(c, d);
  const RunResult b = run_experiment(c, d);
  ASSERT_EQ(a.models.size(), 4u);
  EXPECT_EQ(a.models[0].name, "original_bkd");
  EXPECT_EQ(a.models[1].name, "original_clean");
  EXPECT_EQ(a.models[2].name, "unlearned");
  EXPECT_EQ(a.models[3].name, "gold");
  EXPECT_EQ(a.models[3].metrics.kl_to_gold, 0.0);
  EXPECT_LT(a.anchor_distance_after, a.anchor_distance_before);
  EXPECT_FALSE(a.trace.empty());
  for (std::size_t i = 0; i < a.models.size(); ++i) {
    EXPECT_EQ(a.models[i].metrics.clean_acc, b.models[i].metrics.clean_acc);
    EXPECT_EQ(a.models[i].metrics.mia_auc, b.models[i].metrics.mia_auc);
  }
  EXPECT_TRUE(a.timings.contains("pretrain"));
  EXPECT_TRUE(a.timings.contains("unlearn"));
  EXPECT_TRUE(a.timings.contains("retrain"));

  const auto dir = std::filesystem::temp_directory_path() / "splitvfu-test-experiment";
  std::filesystem::create_directories(dir);
  write_summary_csv(dir / "s.csv", c, a.models);
  std::ifstream in(dir / "s.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "config_hash,seed,model,clean_acc,backdoor_success,mia_auc,mia_acc,kl_to_gold");
  int rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, 4);
  std::filesystem::remove_all(dir);
}

TEST(Experiment, VariantStartsFromGivenModel) {
  const ExperimentConfig c = parse_config(tiny(2));
  const PreparedData d = prepare_data(c);
  const VflModel original = pretrain_model(c, d, d.train);
  UnlearnConfig u = unlearn_config(c);
  u.epochs = 0;
  const VariantResult v = run_unlearn_variant(c, d, original, nullptr, u);
  EXPECT_EQ(v.model.flatten(), original.flatten());
  EXPECT_TRUE(v.trace.empty());
}

}  // namespace
}  // namespace splitvfu
