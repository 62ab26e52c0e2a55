#include "splitvfu/experiment.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "splitvfu/errors.hpp"
#include "splitvfu/rng.hpp"

namespace splitvfu {

namespace {

using json = nlohmann::ordered_json;

// Walks one JSON object, tracking which keys were consumed so leftovers can
// be reported as unknown.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "<root>" : path_, "expected an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  void get(const std::string& key, T& out) {
    if (!j_.contains(key)) return;
    seen_.insert(key);
    try {
      out = j_.at(key).template get<T>();
    } catch (const nlohmann::json::exception&) {
      throw ConfigError(field(key), "wrong type (got " + std::string(j_.at(key).type_name()) + ")");
    }
  }

  template <typename T>
  void require(const std::string& key, T& out) {
    if (!j_.contains(key)) throw ConfigError(field(key), "required field missing");
    get(key, out);
  }

  Fields child(const std::string& key) {
    seen_.insert(key);
    return Fields(j_.at(key), field(key));
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.contains(k)) throw ConfigError(field(k), "unknown key");
    }
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void check(bool ok, const std::string& field, const std::string& detail) {
  if (!ok) throw ConfigError(field, detail);
}

TriggerCorner corner_from(const std::string& s, const std::string& field) {
  if (s == "lower_right") return TriggerCorner::kLowerRight;
  if (s == "lower_left") return TriggerCorner::kLowerLeft;
  if (s == "upper_right") return TriggerCorner::kUpperRight;
  if (s == "upper_left") return TriggerCorner::kUpperLeft;
  throw ConfigError(field, "unknown corner '" + s + "'");
}

std::string corner_name(TriggerCorner c) {
  switch (c) {
    case TriggerCorner::kLowerRight: return "lower_right";
    case TriggerCorner::kLowerLeft: return "lower_left";
    case TriggerCorner::kUpperRight: return "upper_right";
    case TriggerCorner::kUpperLeft: return "upper_left";
  }
  return "lower_right";
}

void read_train(Fields f, TrainSettings& s) {
  f.get("epochs", s.epochs);
  f.get("batch_size", s.batch_size);
  f.get("learning_rate", s.learning_rate);
  f.finish();
  check(s.epochs >= 0, f.field("epochs"), "must be >= 0");
  check(s.batch_size >= 1, f.field("batch_size"), "must be >= 1");
  check(s.learning_rate > 0.0, f.field("learning_rate"), "must be > 0");
}

json train_json(const TrainSettings& s) {
  return {{"epochs", s.epochs}, {"batch_size", s.batch_size}, {"learning_rate", s.learning_rate}};
}

json canonical(const ExperimentConfig& c, bool with_output) {
  json j;
  j["schema_version"] = kConfigSchemaVersion;
  j["seed"] = c.seed;
  json ds;
  ds["source"] = c.source;
  if (c.source == "idx") {
    ds["idx"] = {{"train_images", c.idx.train_images}, {"train_labels", c.idx.train_labels},
                 {"test_images", c.idx.test_images},   {"test_labels", c.idx.test_labels},
                 {"train_limit", c.idx.train_limit},   {"test_limit", c.idx.test_limit}};
  } else {
    ds["synth"] = {{"n_train", c.synth.n_train}, {"n_test", c.synth.n_test},
                   {"height", c.synth.height},   {"width", c.synth.width},
                   {"num_classes", c.synth.num_classes}, {"channels", c.synth.channels},
                   {"noise", c.synth.noise}};
  }
  j["dataset"] = ds;
  j["partition"] = {{"num_slices", c.num_slices},
                    {"active", c.topology == ActiveTopology::kLabelOnly ? "label_only" : "owns_last_slice"}};
  j["forget_party"] = c.forget_party;
  j["trigger"] = {{"height", c.trigger.height},
                  {"width", c.trigger.width},
                  {"corner", corner_name(c.trigger.corner)},
                  {"fill", c.trigger.fill_value},
                  {"target_label", c.trigger.target_label},
                  {"poison_rate", c.trigger.poison_rate}};
  j["model"] = {{"encoder", c.model.encoder == EncoderKind::kMlp ? "mlp" : "conv"},
                {"encoder_hidden", c.model.encoder_hidden},
                {"encoder_output", c.model.encoder_relu_output ? "relu" : "linear"},
                {"hidden_dim", c.model.hidden_dim},
                {"conv_channels", c.model.conv_channels},
                {"conv_padding", c.model.conv_padding},
                {"top_hidden", c.model.top_hidden}};
  j["pretrain"] = train_json(c.pretrain);
  if (c.retrain) j["retrain"] = train_json(*c.retrain);
  j["unlearn"] = {{"c", c.unlearn.c},
                  {"alpha", c.unlearn.alpha},
                  {"learning_rate", c.unlearn.learning_rate},
                  {"epochs", c.unlearn.epochs},
                  {"batch_size", c.unlearn.batch_size},
                  {"mode", to_string(c.unlearn.mode)}};
  j["eval"] = {{"original_clean", c.eval.original_clean},
               {"retrain_gold", c.eval.retrain_gold},
               {"mia", c.eval.mia},
               {"kl", c.eval.kl}};
  if (with_output) {
    j["output"] = {{"dir", c.output_dir}, {"checkpoints", c.save_checkpoints}};
    j["threads"] = c.threads;
  }
  return j;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json root;
  try {
    root = json::parse(json_text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("<root>", std::string("invalid JSON: ") + e.what());
  }
  Fields f(root, "");
  int version = 0;
  f.require("schema_version", version);
  check(version == kConfigSchemaVersion, "schema_version",
        "unsupported version " + std::to_string(version) + " (expected " + std::to_string(kConfigSchemaVersion) + ")");

  ExperimentConfig c;
  f.get("seed", c.seed);
  f.get("threads", c.threads);
  check(c.threads >= 1, "threads", "must be >= 1");

  if (!f.has("dataset")) throw ConfigError("dataset", "required field missing");
  {
    Fields ds = f.child("dataset");
    ds.require("source", c.source);
    check(c.source == "idx" || c.source == "synth", "dataset.source", "must be 'idx' or 'synth'");
    if (c.source == "idx") {
      if (!ds.has("idx")) throw ConfigError("dataset.idx", "required field missing");
      Fields idx = ds.child("idx");
      idx.require("train_images", c.idx.train_images);
      idx.require("train_labels", c.idx.train_labels);
      idx.require("test_images", c.idx.test_images);
      idx.require("test_labels", c.idx.test_labels);
      idx.get("train_limit", c.idx.train_limit);
      idx.get("test_limit", c.idx.test_limit);
      idx.finish();
    } else if (ds.has("synth")) {
      Fields s = ds.child("synth");
      s.get("n_train", c.synth.n_train);
      s.get("n_test", c.synth.n_test);
      s.get("height", c.synth.height);
      s.get("width", c.synth.width);
      s.get("num_classes", c.synth.num_classes);
      s.get("channels", c.synth.channels);
      s.get("noise", c.synth.noise);
      s.finish();
      check(c.synth.n_train >= 1, "dataset.synth.n_train", "must be >= 1");
      check(c.synth.n_test >= 1, "dataset.synth.n_test", "must be >= 1");
      check(c.synth.height >= 1 && c.synth.width >= 1, "dataset.synth.width", "image dimensions must be >= 1");
      check(c.synth.num_classes >= 1, "dataset.synth.num_classes", "must be >= 1");
      check(c.synth.channels >= 1, "dataset.synth.channels", "must be >= 1");
      check(c.synth.noise >= 0.0, "dataset.synth.noise", "must be >= 0");
    }
    ds.finish();
  }

  if (f.has("partition")) {
    Fields p = f.child("partition");
    p.get("num_slices", c.num_slices);
    std::string active = "label_only";
    p.get("active", active);
    check(active == "label_only" || active == "owns_last_slice", "partition.active",
          "must be 'label_only' or 'owns_last_slice'");
    c.topology = active == "label_only" ? ActiveTopology::kLabelOnly : ActiveTopology::kOwnsLastSlice;
    p.finish();
    check(c.num_slices >= 1, "partition.num_slices", "must be >= 1");
  }

  f.get("forget_party", c.forget_party);
  check(c.forget_party >= 1 && c.forget_party <= c.num_slices, "forget_party",
        "must name a feature party in 1.." + std::to_string(c.num_slices));
  check(!(c.topology == ActiveTopology::kOwnsLastSlice && c.forget_party == c.num_slices), "forget_party",
        "the active party cannot be forgotten");

  if (f.has("trigger")) {
    Fields t = f.child("trigger");
    t.get("height", c.trigger.height);
    t.get("width", c.trigger.width);
    std::string corner = "lower_right";
    t.get("corner", corner);
    c.trigger.corner = corner_from(corner, "trigger.corner");
    t.get("fill", c.trigger.fill_value);
    t.get("target_label", c.trigger.target_label);
    t.get("poison_rate", c.trigger.poison_rate);
    t.finish();
    check(c.trigger.height >= 1 && c.trigger.width >= 1, "trigger.height", "trigger must be at least 1x1");
    check(c.trigger.poison_rate >= 0.0 && c.trigger.poison_rate <= 1.0, "trigger.poison_rate", "must be in [0, 1]");
    check(c.trigger.target_label >= 0, "trigger.target_label", "must be >= 0");
  }

  if (f.has("model")) {
    Fields m = f.child("model");
    std::string enc = "mlp";
    m.get("encoder", enc);
    check(enc == "mlp" || enc == "conv", "model.encoder", "must be 'mlp' or 'conv'");
    c.model.encoder = enc == "mlp" ? EncoderKind::kMlp : EncoderKind::kConv;
    m.get("encoder_hidden", c.model.encoder_hidden);
    std::string output = "linear";
    m.get("encoder_output", output);
    check(output == "linear" || output == "relu", "model.encoder_output", "must be 'linear' or 'relu'");
    c.model.encoder_relu_output = output == "relu";
    m.get("hidden_dim", c.model.hidden_dim);
    m.get("conv_channels", c.model.conv_channels);
    m.get("conv_padding", c.model.conv_padding);
    m.get("top_hidden", c.model.top_hidden);
    m.finish();
    check(c.model.hidden_dim >= 1, "model.hidden_dim", "must be >= 1");
    check(c.model.conv_padding == 0 || c.model.conv_padding == 1, "model.conv_padding", "must be 0 or 1");
    check(!c.model.conv_channels.empty(), "model.conv_channels", "must not be empty");
    for (int v : c.model.encoder_hidden) check(v >= 1, "model.encoder_hidden", "widths must be >= 1");
    for (int v : c.model.top_hidden) check(v >= 1, "model.top_hidden", "widths must be >= 1");
    for (int v : c.model.conv_channels) check(v >= 1, "model.conv_channels", "channels must be >= 1");
  }

  if (f.has("pretrain")) read_train(f.child("pretrain"), c.pretrain);
  if (f.has("retrain")) {
    TrainSettings r = c.pretrain;
    read_train(f.child("retrain"), r);
    c.retrain = r;
  }

  if (f.has("unlearn")) {
    Fields u = f.child("unlearn");
    u.get("c", c.unlearn.c);
    u.get("alpha", c.unlearn.alpha);
    u.get("learning_rate", c.unlearn.learning_rate);
    u.get("epochs", c.unlearn.epochs);
    u.get("batch_size", c.unlearn.batch_size);
    std::string mode = "coordinated";
    u.get("mode", mode);
    u.finish();
    try {
      c.unlearn.mode = unlearn_mode_from_string(mode);
    } catch (const ArgumentError& e) {
      throw ConfigError("unlearn.mode", e.what());
    }
    check(c.unlearn.c > 0.0, "unlearn.c", "must be > 0");
    check(c.unlearn.alpha >= 0.0, "unlearn.alpha", "must be >= 0");
    check(c.unlearn.learning_rate > 0.0, "unlearn.learning_rate", "must be > 0");
    check(c.unlearn.epochs >= 0, "unlearn.epochs", "must be >= 0");
    check(c.unlearn.batch_size >= 1, "unlearn.batch_size", "must be >= 1");
  }

  if (f.has("eval")) {
    Fields e = f.child("eval");
    e.get("original_clean", c.eval.original_clean);
    e.get("retrain_gold", c.eval.retrain_gold);
    e.get("mia", c.eval.mia);
    e.get("kl", c.eval.kl);
    e.finish();
  }

  if (f.has("output")) {
    Fields o = f.child("output");
    o.get("dir", c.output_dir);
    o.get("checkpoints", c.save_checkpoints);
    o.finish();
  }
  f.finish();
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("--config", "cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) { return canonical(cfg, true).dump(2); }

std::uint64_t config_hash(const ExperimentConfig& cfg) { return fnv1a64(canonical(cfg, false).dump()); }

std::string hex64(std::uint64_t v) { return fmt::format("{:016x}", v); }

std::filesystem::path resolve_data_path(const std::string& path) {
  std::filesystem::path p(path);
  if (p.is_relative()) {
    if (const char* root = std::getenv("SPLITVFU_DATA_ROOT"); root != nullptr && *root != '\0') {
      return std::filesystem::path(root) / p;
    }
  }
  return p;
}

PreparedData prepare_data(const ExperimentConfig& cfg) {
  RawDataset train_raw, test_raw;
  if (cfg.source == "idx") {
    const std::pair<const char*, const std::string*> files[] = {{"dataset.idx.train_images", &cfg.idx.train_images},
                                                                 {"dataset.idx.train_labels", &cfg.idx.train_labels},
                                                                 {"dataset.idx.test_images", &cfg.idx.test_images},
                                                                 {"dataset.idx.test_labels", &cfg.idx.test_labels}};
    for (const auto& [field, path] : files) {
      if (!std::filesystem::exists(resolve_data_path(*path))) {
        throw ConfigError(field, "file not found: " + resolve_data_path(*path).string());
      }
    }
    train_raw = load_idx(resolve_data_path(cfg.idx.train_images), resolve_data_path(cfg.idx.train_labels));
    test_raw = load_idx(resolve_data_path(cfg.idx.test_images), resolve_data_path(cfg.idx.test_labels));
    if (cfg.idx.train_limit > 0) train_raw = take_head(train_raw, cfg.idx.train_limit);
    if (cfg.idx.test_limit > 0) test_raw = take_head(test_raw, cfg.idx.test_limit);
    if (!(train_raw.image_shape == test_raw.image_shape)) {
      throw ConfigError("dataset.idx.test_images", "image shape differs from the training set");
    }
    const int classes = std::max(train_raw.num_classes, test_raw.num_classes);
    train_raw.num_classes = classes;
    test_raw.num_classes = classes;
  } else {
    SynthParams p;
    p.seed = derive_seed(cfg.seed, "synth");
    p.n = cfg.synth.n_train + cfg.synth.n_test;
    p.height = cfg.synth.height;
    p.width = cfg.synth.width;
    p.num_classes = cfg.synth.num_classes;
    p.channels = cfg.synth.channels;
    p.noise = cfg.synth.noise;
    std::tie(train_raw, test_raw) = split_head(synth_dataset(p), cfg.synth.n_train);
  }

  const int width = train_raw.image_shape.width;
  check(cfg.num_slices <= width, "partition.num_slices",
        "more slices than image columns (" + std::to_string(width) + ")");
  check(cfg.trigger.target_label < train_raw.num_classes, "trigger.target_label",
        "must be below the class count " + std::to_string(train_raw.num_classes));
  const PartitionSpec spec = PartitionSpec::equal_slices(width, cfg.num_slices);

  PreparedData out;
  out.num_classes = train_raw.num_classes;
  out.active = active_party_for(cfg.num_slices, cfg.topology);
  out.forget = PartyId{cfg.forget_party};
  out.train_clean = partition(train_raw, spec);
  out.test = partition(test_raw, spec);
  try {
    out.train = inject_backdoor(out.train_clean, cfg.trigger, cfg.forget_party, derive_seed(cfg.seed, "poison"));
    out.triggered = stamp_trigger(out.test, cfg.trigger, cfg.forget_party);
  } catch (const ArgumentError& e) {
    throw ConfigError("trigger", e.what());
  }
  return out;
}

TrainConfig train_config(const ExperimentConfig& cfg, const TrainSettings& s) {
  TrainConfig t;
  t.epochs = s.epochs;
  t.batch_size = s.batch_size;
  t.learning_rate = s.learning_rate;
  t.seed = derive_seed(cfg.seed, "shuffle");
  t.threads = cfg.threads;
  return t;
}

ArchitectureSpec architecture(const ExperimentConfig& cfg, int num_classes) {
  ArchitectureSpec a = cfg.model;
  a.num_classes = num_classes;
  return a;
}

UnlearnConfig unlearn_config(const ExperimentConfig& cfg) {
  UnlearnConfig u = cfg.unlearn;
  u.seed = derive_seed(cfg.seed, "unlearn");
  u.threads = cfg.threads;
  return u;
}

VflModel pretrain_model(const ExperimentConfig& cfg, const PreparedData& data, const PartitionedDataset& train) {
  VflModel init = build_model(architecture(cfg, data.num_classes), slice_shapes(train), data.active,
                              derive_seed(cfg.seed, "init"));
  return vfl_pretrain(train, train_config(cfg, cfg.pretrain), std::move(init)).model;
}

VflModel retrain_model(const ExperimentConfig& cfg, const PreparedData& data) {
  return retrain_gold(data.train, train_config(cfg, cfg.retrain.value_or(cfg.pretrain)),
                      architecture(cfg, data.num_classes), data.active, data.forget, derive_seed(cfg.seed, "init"))
      .model;
}

MetricsRecord evaluate_model(const ExperimentConfig& cfg, const PreparedData& data, const VflModel& model,
                             const VflModel* gold) {
  MetricsRecord m;
  m.clean_acc = clean_accuracy(model, data.test);
  m.backdoor_success = backdoor_success(model, data.triggered, cfg.trigger.target_label);
  if (cfg.eval.mia) {
    const MiaResult r = mia_attack(model, data.train, data.test, data.forget.index, derive_seed(cfg.seed, "mia"));
    m.mia_auc = r.auc;
    m.mia_acc = r.acc;
  }
  if (cfg.eval.kl && gold != nullptr) {
    m.kl_to_gold = kl_predictive(predictive_distribution(*gold, data.test), predictive_distribution(model, data.test));
  }
  return m;
}

RunResult run_experiment(const ExperimentConfig& cfg, const PreparedData& data) {
  RunResult run;
  run.original = time_phase("pretrain", [&] { return pretrain_model(cfg, data, data.train); }, run.timings);
  const UnlearnConfig ucfg = unlearn_config(cfg);
  UnlearnResult u = time_phase("unlearn", [&] { return unlearn(run.original, data.train, data.forget, ucfg); },
                               run.timings);
  run.unlearned = u.model;
  run.trace = std::move(u.trace);
  run.anchor_distance_before = mean_anchor_distance(run.original, data.train, data.forget, u.anchor);
  run.anchor_distance_after = mean_anchor_distance(run.unlearned, data.train, data.forget, u.anchor);
  if (cfg.eval.retrain_gold) {
    run.gold = time_phase("retrain", [&] { return retrain_model(cfg, data); }, run.timings);
  }
  const VflModel* gold = run.gold ? &*run.gold : nullptr;
  run.models.push_back({"original_bkd", evaluate_model(cfg, data, run.original, gold)});
  if (cfg.eval.original_clean) {
    VflModel clean = time_phase("pretrain_clean", [&] { return pretrain_model(cfg, data, data.train_clean); },
                                run.timings);
    run.models.push_back({"original_clean", evaluate_model(cfg, data, clean, gold)});
  }
  run.models.push_back({"unlearned", evaluate_model(cfg, data, run.unlearned, gold)});
  if (gold != nullptr) run.models.push_back({"gold", evaluate_model(cfg, data, *gold, gold)});
  for (ModelReport& r : run.models) r.metrics.wall_clock_s = run.timings;
  return run;
}

VariantResult run_unlearn_variant(const ExperimentConfig& cfg, const PreparedData& data, const VflModel& original,
                                  const VflModel* gold, const UnlearnConfig& ucfg) {
  VariantResult v;
  UnlearnResult u = time_phase("unlearn", [&] { return unlearn(original, data.train, data.forget, ucfg); },
                               v.metrics.wall_clock_s);
  const auto timing = v.metrics.wall_clock_s;
  v.metrics = evaluate_model(cfg, data, u.model, gold);
  v.metrics.wall_clock_s = timing;
  v.model = std::move(u.model);
  v.trace = std::move(u.trace);
  return v;
}

namespace {

std::string num(double v) { return fmt::format("{:.6f}", v); }

}  // namespace

void write_summary_csv(const std::filesystem::path& path, const ExperimentConfig& cfg,
                       const std::vector<ModelReport>& models) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  out << "config_hash,seed,model,clean_acc,backdoor_success,mia_auc,mia_acc,kl_to_gold\n";
  for (const ModelReport& r : models) {
    out << hex64(config_hash(cfg)) << ',' << cfg.seed << ',' << r.name << ',' << num(r.metrics.clean_acc) << ','
        << num(r.metrics.backdoor_success) << ',' << num(r.metrics.mia_auc) << ',' << num(r.metrics.mia_acc) << ','
        << num(r.metrics.kl_to_gold) << '\n';
  }
}

void write_metrics_jsonl(const std::filesystem::path& path, const ExperimentConfig& cfg, const RunResult& run) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  const std::string hash = hex64(config_hash(cfg));
  for (const ModelReport& r : run.models) {
    json j;
    j["kind"] = "model";
    j["config_hash"] = hash;
    j["seed"] = cfg.seed;
    j["model"] = r.name;
    j["clean_acc"] = r.metrics.clean_acc;
    j["backdoor_success"] = r.metrics.backdoor_success;
    j["mia_auc"] = r.metrics.mia_auc;
    j["mia_acc"] = r.metrics.mia_acc;
    j["kl_to_gold"] = r.metrics.kl_to_gold;
    out << j.dump() << '\n';
  }
  json t;
  t["kind"] = "timing";
  t["config_hash"] = hash;
  for (const auto& [label, s] : run.timings) t[label + "_s"] = s;
  if (run.timings.contains("unlearn") && run.timings.contains("retrain") && run.timings.at("retrain") > 0.0) {
    t["unlearn_to_retrain_ratio"] = fmt::format("{:.3f}", run.timings.at("unlearn") / run.timings.at("retrain"));
  }
  t["anchor_distance_before"] = run.anchor_distance_before;
  t["anchor_distance_after"] = run.anchor_distance_after;
  out << t.dump() << '\n';
}

}  // namespace splitvfu
