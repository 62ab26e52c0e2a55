#include "commands.hpp"

#include <fstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "splitvfu/checkpoint.hpp"
#include "splitvfu/errors.hpp"

namespace splitvfu::cli {

namespace fs = std::filesystem;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << text;
}

fs::path prepare_output(const ExperimentConfig& cfg) {
  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  write_text(dir / "config.json", config_to_json(cfg) + "\n");
  return dir;
}

void write_trace(const fs::path& path, const std::vector<TraceRecord>& trace) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  write_trace_jsonl(out, trace);
}

CheckpointMeta meta(const ExperimentConfig& cfg, const std::string& label) {
  return {config_hash(cfg), cfg.seed, label};
}

std::string num(double v) { return fmt::format("{:.6f}", v); }

std::string metrics_csv(const MetricsRecord& m) {
  return num(m.clean_acc) + ',' + num(m.backdoor_success) + ',' + num(m.mia_auc) + ',' + num(m.mia_acc) + ',' +
         num(m.kl_to_gold);
}

// A diverged variant is recorded rather than aborting the whole grid.
std::optional<VariantResult> try_variant(const ExperimentConfig& cfg, const PreparedData& data,
                                         const VflModel& original, const std::optional<VflModel>& gold) {
  try {
    return run_unlearn_variant(cfg, data, original, gold ? &*gold : nullptr, unlearn_config(cfg));
  } catch (const NumericError& e) {
    spdlog::warn("variant diverged: {}", e.what());
    return std::nullopt;
  }
}

void log_metrics(const std::string& name, const MetricsRecord& m) {
  spdlog::info("{:<14} clean={:.2f} backdoor={:.2f} mia_auc={:.3f} kl={:.4f}", name, m.clean_acc,
               m.backdoor_success, m.mia_auc, m.kl_to_gold);
}

}  // namespace

ExperimentConfig resolve(const fs::path& config, const Overrides& o) {
  ExperimentConfig cfg = load_config(config);
  if (o.out) cfg.output_dir = *o.out;
  if (o.seed) cfg.seed = *o.seed;
  if (o.threads) {
    if (*o.threads < 1) throw ConfigError("--threads", "must be >= 1");
    cfg.threads = *o.threads;
  }
  return cfg;
}

RunResult cmd_run(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const PreparedData data = prepare_data(cfg);
  RunResult run = run_experiment(cfg, data);
  for (const ModelReport& r : run.models) log_metrics(r.name, r.metrics);
  if (run.timings.contains("retrain")) {
    spdlog::info("unlearn/retrain wall-clock ratio {:.3f}", run.timings.at("unlearn") / run.timings.at("retrain"));
  }
  write_summary_csv(dir / "summary.csv", cfg, run.models);
  write_metrics_jsonl(dir / "metrics.jsonl", cfg, run);
  write_trace(dir / "trace.jsonl", run.trace);
  if (cfg.save_checkpoints) {
    fs::create_directories(dir / "checkpoints");
    save_checkpoint(dir / "checkpoints" / "original.ckpt", run.original, meta(cfg, "original"));
    save_checkpoint(dir / "checkpoints" / "unlearned.ckpt", run.unlearned, meta(cfg, "unlearned"));
    if (run.gold) save_checkpoint(dir / "checkpoints" / "gold.ckpt", *run.gold, meta(cfg, "gold"));
  }
  return run;
}

void cmd_sweep(const ExperimentConfig& cfg, const std::string& param, const std::vector<double>& values) {
  if (param != "c" && param != "alpha") throw ConfigError("--param", "must be 'c' or 'alpha'");
  if (values.empty()) throw ConfigError("--values", "at least one value required");
  const fs::path dir = prepare_output(cfg);
  const PreparedData data = prepare_data(cfg);
  const VflModel original = pretrain_model(cfg, data, data.train);
  std::optional<VflModel> gold;
  if (cfg.eval.retrain_gold) gold = retrain_model(cfg, data);

  std::ofstream out(dir / "sweep.csv", std::ios::trunc);
  out << "config_hash,seed,param,value,status,clean_acc,backdoor_success,mia_auc,mia_acc,kl_to_gold\n";
  for (double v : values) {
    ExperimentConfig variant = cfg;
    (param == "c" ? variant.unlearn.c : variant.unlearn.alpha) = v;
    const std::optional<VariantResult> r = try_variant(variant, data, original, gold);
    out << hex64(config_hash(cfg)) << ',' << cfg.seed << ',' << param << ',' << fmt::format("{}", v) << ',';
    if (!r) {
      out << "diverged,nan,nan,nan,nan,nan\n";
      continue;
    }
    log_metrics(fmt::format("{}={}", param, v), r->metrics);
    out << "ok," << metrics_csv(r->metrics) << '\n';
    write_trace(dir / fmt::format("trace_{}_{}.jsonl", param, v), r->trace);
  }
}

void cmd_ablate(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const PreparedData data = prepare_data(cfg);
  const VflModel original = pretrain_model(cfg, data, data.train);
  std::optional<VflModel> gold;
  if (cfg.eval.retrain_gold) gold = retrain_model(cfg, data);

  std::ofstream out(dir / "ablation.csv", std::ios::trunc);
  out << "config_hash,seed,mode,status,clean_acc,backdoor_success,mia_auc,mia_acc,kl_to_gold\n";
  for (UnlearnMode mode : {UnlearnMode::kCoordinated, UnlearnMode::kNoGcm, UnlearnMode::kRandProj}) {
    ExperimentConfig variant = cfg;
    variant.unlearn.mode = mode;
    const std::optional<VariantResult> r = try_variant(variant, data, original, gold);
    out << hex64(config_hash(cfg)) << ',' << cfg.seed << ',' << to_string(mode) << ',';
    if (!r) {
      out << "diverged,nan,nan,nan,nan,nan\n";
      continue;
    }
    log_metrics(to_string(mode), r->metrics);
    out << "ok," << metrics_csv(r->metrics) << '\n';
    write_trace(dir / ("trace_" + to_string(mode) + ".jsonl"), r->trace);
  }
}

void cmd_retrain(const ExperimentConfig& cfg) {
  const fs::path dir = prepare_output(cfg);
  const PreparedData data = prepare_data(cfg);
  const VflModel gold = retrain_model(cfg, data);
  const MetricsRecord m = evaluate_model(cfg, data, gold, &gold);
  log_metrics("gold", m);
  write_summary_csv(dir / "summary.csv", cfg, {{"gold", m}});
  fs::create_directories(dir / "checkpoints");
  save_checkpoint(dir / "checkpoints" / "gold.ckpt", gold, meta(cfg, "gold"));
}

void cmd_eval(const ExperimentConfig& cfg, const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  if (ck.meta.config_hash != config_hash(cfg)) {
    throw ConfigError("--checkpoint", fmt::format("checkpoint config hash {} does not match config {}",
                                                  hex64(ck.meta.config_hash), hex64(config_hash(cfg))));
  }
  const fs::path dir = prepare_output(cfg);
  const PreparedData data = prepare_data(cfg);
  const fs::path gold_path = checkpoint.parent_path() / "gold.ckpt";
  std::optional<VflModel> gold;
  if (cfg.eval.kl && fs::exists(gold_path)) gold = load_checkpoint(gold_path).model;
  const MetricsRecord m = evaluate_model(cfg, data, ck.model, gold ? &*gold : nullptr);
  log_metrics(ck.meta.label, m);
  write_summary_csv(dir / "summary.csv", cfg, {{ck.meta.label, m}});
}

std::string cmd_inspect(const fs::path& checkpoint) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  nlohmann::ordered_json j;
  j["label"] = ck.meta.label;
  j["config_hash"] = hex64(ck.meta.config_hash);
  j["seed"] = ck.meta.seed;
  j["active"] = ck.model.active.index;
  j["parameter_count"] = ck.model.parameter_count();
  for (PartyId p : ck.model.feature_parties()) {
    const auto [offset, len] = ck.model.block(p);
    j["blocks"].push_back(
        {{"party", p.index}, {"offset", offset}, {"length", len}, {"hidden_dim", ck.model.hidden_dim(p)}});
  }
  const auto [offset, len] = ck.model.top_block();
  j["blocks"].push_back({{"party", "top"}, {"offset", offset}, {"length", len}});
  return j.dump(2);
}

}  // namespace splitvfu::cli
