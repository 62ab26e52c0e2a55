#include "splitvfu/vfl.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <numeric>

#include "splitvfu/errors.hpp"
#include "splitvfu/rng.hpp"

namespace splitvfu {

std::string to_string(PartyId p) { return "party " + std::to_string(p.index); }

std::string to_string(MessageKind kind) {
  switch (kind) {
    case MessageKind::kReprUpload: return "repr_upload";
    case MessageKind::kGradDownload: return "grad_download";
    case MessageKind::kParamGradUpload: return "param_grad_upload";
    case MessageKind::kModelBroadcast: return "model_broadcast";
  }
  return "unknown";
}

// ---- VflModel ----

std::vector<PartyId> VflModel::feature_parties() const {
  std::vector<PartyId> out;
  out.reserve(bottom.size());
  for (const auto& [p, net] : bottom) out.push_back(p);
  return out;
}

Eigen::Index VflModel::hidden_dim(PartyId p) const {
  auto it = bottom.find(p);
  if (it == bottom.end()) throw ArgumentError(to_string(p) + " has no encoder");
  return it->second.output_size();
}

Eigen::Index VflModel::parameter_count() const {
  Eigen::Index n = top.parameter_count();
  for (const auto& [p, net] : bottom) n += net.parameter_count();
  return n;
}

std::pair<Eigen::Index, Eigen::Index> VflModel::block(PartyId p) const {
  Eigen::Index offset = 0;
  for (const auto& [q, net] : bottom) {
    if (q == p) return {offset, net.parameter_count()};
    offset += net.parameter_count();
  }
  throw ArgumentError(to_string(p) + " has no encoder");
}

std::pair<Eigen::Index, Eigen::Index> VflModel::top_block() const {
  Eigen::Index offset = 0;
  for (const auto& [q, net] : bottom) offset += net.parameter_count();
  return {offset, top.parameter_count()};
}

Vector VflModel::flatten() const {
  Vector out(parameter_count());
  Eigen::Index offset = 0;
  for (const auto& [p, net] : bottom) {
    const Eigen::Index n = net.parameter_count();
    out.segment(offset, n) = net.flatten();
    offset += n;
  }
  out.segment(offset, top.parameter_count()) = top.flatten();
  return out;
}

void VflModel::unflatten(const Vector& params) {
  if (params.size() != parameter_count()) {
    throw DimensionError("model has " + std::to_string(parameter_count()) + " parameters, got " +
                         std::to_string(params.size()));
  }
  Eigen::Index offset = 0;
  for (auto& [p, net] : bottom) {
    const Eigen::Index n = net.parameter_count();
    net.unflatten(params.segment(offset, n));
    offset += n;
  }
  top.unflatten(params.segment(offset, top.parameter_count()));
}

void VflModel::validate() const {
  if (bottom.empty()) throw ArgumentError("model has no feature parties");
  if (top.empty()) throw ArgumentError("model has no top network");
  Eigen::Index width = 0;
  for (const auto& [p, net] : bottom) {
    if (p.index <= 0) throw ArgumentError("party indices are 1-based, got " + std::to_string(p.index));
    width += net.output_size();
  }
  if (top.input_size() != width) {
    throw DimensionError("top expects " + std::to_string(top.input_size()) +
                         " inputs but encoders produce " + std::to_string(width));
  }
}

VflModel build_model(const ArchitectureSpec& arch, const std::map<PartyId, Shape>& slices,
                     PartyId active, std::uint64_t init_seed) {
  if (slices.empty()) throw ArgumentError("build_model needs at least one feature party");
  if (arch.num_classes < 1) throw ArgumentError("num_classes must be positive");
  VflModel model;
  model.active = active;
  Eigen::Index width = 0;
  for (const auto& [p, shape] : slices) {
    Network enc;
    if (arch.encoder == EncoderKind::kMlp) {
      std::vector<int> sizes{static_cast<int>(shape.size())};
      sizes.insert(sizes.end(), arch.encoder_hidden.begin(), arch.encoder_hidden.end());
      sizes.push_back(arch.hidden_dim);
      enc = make_mlp(sizes, arch.encoder_relu_output);
    } else {
      enc = make_conv_encoder(shape, arch.conv_channels, arch.conv_padding);
    }
    Rng rng(derive_seed(init_seed, "init/encoder/" + std::to_string(p.index)));
    enc.initialize(rng);
    width += enc.output_size();
    model.bottom.emplace(p, std::move(enc));
  }
  std::vector<int> sizes{static_cast<int>(width)};
  sizes.insert(sizes.end(), arch.top_hidden.begin(), arch.top_hidden.end());
  sizes.push_back(arch.num_classes);
  model.top = make_mlp(sizes);
  Rng rng(derive_seed(init_seed, "init/top"));
  model.top.initialize(rng);
  model.validate();
  return model;
}

PartyId active_party_for(int num_slices, ActiveTopology topology) {
  if (num_slices < 1) throw ArgumentError("need at least one slice");
  return topology == ActiveTopology::kLabelOnly ? PartyId{num_slices + 1} : PartyId{num_slices};
}

// ---- MessageBus ----

void MessageBus::open_round(std::uint64_t round, std::vector<PartyId> feature_parties,
                            PartyId active) {
  if (phase_ != Phase::kIdle) {
    throw ProtocolError("round " + std::to_string(round_) + " still open, cannot start round " +
                        std::to_string(round));
  }
  if (!log_.empty() && round <= round_) {
    throw ProtocolError("round " + std::to_string(round) + " is not after round " +
                        std::to_string(round_));
  }
  round_ = round;
  active_ = active;
  parties_ = std::move(feature_parties);
  pending_.clear();
  downloads_.clear();
  downloaded_.clear();
  phase_ = Phase::kUploads;
  log_.push_back(RoundLog{round, {}, 0, false});
}

void MessageBus::expect_phase(Phase phase, const RoundMessage& msg) const {
  if (msg.round != round_) {
    throw ProtocolError("stale " + to_string(msg.kind) + " from " + to_string(msg.sender) +
                        " for round " + std::to_string(msg.round) + " during round " +
                        std::to_string(round_));
  }
  if (phase_ != phase) {
    throw ProtocolError(to_string(msg.kind) + " from " + to_string(msg.sender) +
                        " arrived out of order in round " + std::to_string(round_));
  }
}

void MessageBus::post(RoundMessage msg) {
  auto known = [&](PartyId p) { return std::find(parties_.begin(), parties_.end(), p) != parties_.end(); };
  switch (msg.kind) {
    case MessageKind::kReprUpload:
      expect_phase(Phase::kUploads, msg);
      if (!known(msg.sender)) throw ProtocolError("repr_upload from unknown " + to_string(msg.sender));
      if (msg.receiver != active_) throw ProtocolError("repr_upload must go to the active party");
      if (pending_.contains(msg.sender)) {
        throw ProtocolError("duplicate repr_upload from " + to_string(msg.sender));
      }
      break;
    case MessageKind::kGradDownload:
      expect_phase(Phase::kDownloads, msg);
      if (msg.sender != active_) throw ProtocolError("grad_download must come from the active party");
      if (!known(msg.receiver)) throw ProtocolError("grad_download to unknown " + to_string(msg.receiver));
      if (downloads_.contains(msg.receiver) || downloaded_.contains(msg.receiver)) {
        throw ProtocolError("duplicate grad_download to " + to_string(msg.receiver));
      }
      break;
    case MessageKind::kParamGradUpload:
      if (phase_ == Phase::kDownloads && msg.round == round_ && downloaded_.contains(msg.sender)) {
        phase_ = Phase::kParamGrads;
      }
      if (phase_ == Phase::kDownloads && !downloaded_.contains(msg.sender)) {
        throw ProtocolError("param_grad_upload from " + to_string(msg.sender) +
                            " before its grad_download");
      }
      expect_phase(Phase::kParamGrads, msg);
      if (!downloaded_.contains(msg.sender)) {
        throw ProtocolError("param_grad_upload from " + to_string(msg.sender) +
                            " before its grad_download");
      }
      if (msg.receiver != active_) throw ProtocolError("param_grad_upload must go to the active party");
      if (pending_.contains(msg.sender)) {
        throw ProtocolError("duplicate param_grad_upload from " + to_string(msg.sender));
      }
      break;
    case MessageKind::kModelBroadcast:
      expect_phase(Phase::kBroadcast, msg);
      if (msg.sender != active_) throw ProtocolError("model_broadcast must come from the active party");
      break;
  }
  log_.back().sequence.push_back(msg.kind);
  ++delivered_;
  switch (msg.kind) {
    case MessageKind::kReprUpload:
    case MessageKind::kParamGradUpload: {
      const PartyId sender = msg.sender;
      pending_.emplace(sender, std::move(msg));
      break;
    }
    case MessageKind::kGradDownload: {
      const PartyId receiver = msg.receiver;
      downloads_.emplace(receiver, std::move(msg));
      break;
    }
    case MessageKind::kModelBroadcast:
      broadcast_ = std::move(msg);
      log_.back().complete = true;
      phase_ = Phase::kIdle;
      break;
  }
}

std::vector<RoundMessage> MessageBus::take_uploads() {
  if (phase_ != Phase::kUploads) throw ProtocolError("aggregation outside the upload phase");
  std::vector<RoundMessage> out;
  for (PartyId p : parties_) {
    auto it = pending_.find(p);
    if (it == pending_.end()) {
      throw ProtocolError("missing repr_upload from " + to_string(p) + " in round " +
                          std::to_string(round_));
    }
    out.push_back(std::move(it->second));
  }
  pending_.clear();
  ++log_.back().aggregations;
  phase_ = Phase::kDownloads;
  return out;
}

RoundMessage MessageBus::take_download(PartyId receiver) {
  auto it = downloads_.find(receiver);
  if (it == downloads_.end()) throw ProtocolError("no grad_download waiting for " + to_string(receiver));
  RoundMessage msg = std::move(it->second);
  downloads_.erase(it);
  downloaded_.insert(receiver);
  return msg;
}

std::vector<RoundMessage> MessageBus::take_param_grads() {
  if (phase_ != Phase::kParamGrads) throw ProtocolError("no param_grad_upload received in round " +
                                                        std::to_string(round_));
  std::vector<RoundMessage> out;
  for (PartyId p : parties_) {
    auto it = pending_.find(p);
    if (it == pending_.end()) {
      throw ProtocolError("missing param_grad_upload from " + to_string(p) + " in round " +
                          std::to_string(round_));
    }
    out.push_back(std::move(it->second));
  }
  pending_.clear();
  phase_ = Phase::kBroadcast;
  return out;
}

// ---- Parties ----

PassiveParty::PassiveParty(PartyId id, PartyId active, const Matrix& features, Network encoder)
    : id_(id), active_(active), features_(&features), encoder_(std::move(encoder)) {
  if (features.cols() != encoder_.input_size()) {
    throw DimensionError(to_string(id) + " slice has " + std::to_string(features.cols()) +
                         " features, encoder expects " + std::to_string(encoder_.input_size()));
  }
}

RoundMessage PassiveParty::local_forward(std::uint64_t round, std::span<const Eigen::Index> batch) {
  if (batch.empty()) throw ArgumentError("empty batch");
  Matrix x(static_cast<Eigen::Index>(batch.size()), features_->cols());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Eigen::Index r = batch[i];
    if (r < 0 || r >= features_->rows()) {
      throw ArgumentError("sample index " + std::to_string(r) + " out of range for " + to_string(id_));
    }
    x.row(static_cast<Eigen::Index>(i)) = features_->row(r);
  }
  RoundMessage msg;
  msg.kind = MessageKind::kReprUpload;
  msg.sender = id_;
  msg.receiver = active_;
  msg.round = round;
  msg.tensors.push_back(encoder_.forward(x));
  cached_round_ = round;
  return msg;
}

RoundMessage PassiveParty::local_backward(const RoundMessage& grad_download) {
  if (!cached_round_ || *cached_round_ != grad_download.round) {
    throw ProtocolError("stale grad_download for round " + std::to_string(grad_download.round) +
                        " at " + to_string(id_));
  }
  RoundMessage msg;
  msg.kind = MessageKind::kParamGradUpload;
  msg.sender = id_;
  msg.receiver = active_;
  msg.round = grad_download.round;
  for (const Matrix& g : grad_download.tensors) {
    msg.grads.push_back(encoder_.backward(g, false).parameter_grads);
  }
  return msg;
}

void PassiveParty::apply_broadcast(const RoundMessage& broadcast, Eigen::Index offset) {
  encoder_.unflatten(broadcast.parameters.segment(offset, encoder_.parameter_count()));
  encoder_.clear_cache();
  cached_round_.reset();
}

ActiveParty::ActiveParty(PartyId id, std::vector<int> labels, Network top,
                         std::vector<PartyId> feature_parties, std::vector<Eigen::Index> widths)
    : id_(id),
      labels_(std::move(labels)),
      top_(std::move(top)),
      order_(std::move(feature_parties)),
      widths_(std::move(widths)) {
  if (order_.size() != widths_.size()) throw ArgumentError("one width per feature party required");
  const Eigen::Index total = std::accumulate(widths_.begin(), widths_.end(), Eigen::Index{0});
  if (total != top_.input_size()) {
    throw DimensionError("top expects " + std::to_string(top_.input_size()) + " inputs, parties give " +
                         std::to_string(total));
  }
}

Matrix ActiveParty::aggregate_and_predict(std::uint64_t round, std::vector<RoundMessage> uploads) {
  std::map<PartyId, Matrix> by_party;
  for (RoundMessage& m : uploads) {
    if (m.kind != MessageKind::kReprUpload || m.tensors.size() != 1) {
      throw ProtocolError("aggregation expects one representation per repr_upload");
    }
    if (m.round != round) throw ProtocolError("stale repr_upload from " + to_string(m.sender));
    if (by_party.contains(m.sender)) throw ProtocolError("duplicate repr_upload from " + to_string(m.sender));
    by_party.emplace(m.sender, std::move(m.tensors.front()));
  }
  Eigen::Index rows = -1;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    auto it = by_party.find(order_[i]);
    if (it == by_party.end()) throw ProtocolError("missing repr_upload from " + to_string(order_[i]));
    if (it->second.cols() != widths_[i]) {
      throw DimensionError(to_string(order_[i]) + " uploaded width " + std::to_string(it->second.cols()) +
                           ", expected " + std::to_string(widths_[i]));
    }
    if (rows >= 0 && it->second.rows() != rows) {
      throw DimensionError("repr_upload batch sizes disagree at " + to_string(order_[i]));
    }
    rows = it->second.rows();
  }
  if (by_party.size() != order_.size()) throw ProtocolError("repr_upload from a party outside the round");
  Matrix z(rows, top_.input_size());
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    z.middleCols(col, widths_[i]) = by_party.at(order_[i]);
    col += widths_[i];
  }
  logits_ = top_.forward(z);
  uploads_ = std::move(by_party);
  round_ = round;
  return logits_;
}

ActiveParty::Backprop ActiveParty::backprop_round(std::uint64_t round, std::span<const Eigen::Index> batch) {
  if (!round_ || *round_ != round) throw ProtocolError("backprop for round " + std::to_string(round) +
                                                       " without its aggregation");
  if (static_cast<Eigen::Index>(batch.size()) != logits_.rows()) {
    throw DimensionError("batch has " + std::to_string(batch.size()) + " rows, logits have " +
                         std::to_string(logits_.rows()));
  }
  std::vector<int> y(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    y[i] = labels_.at(static_cast<std::size_t>(batch[i]));
  }
  LossResult ce = loss_softmax_ce(logits_, y);
  Backprop out = backprop_upstream(round, ce.grad);
  out.loss = ce.value;
  return out;
}

ActiveParty::Backprop ActiveParty::backprop_upstream(std::uint64_t round, const Matrix& dlogits) {
  if (!round_ || *round_ != round) throw ProtocolError("backprop for round " + std::to_string(round) +
                                                       " without its aggregation");
  BackwardResult br = top_.backward(dlogits, true);
  Backprop out;
  out.top_grads = std::move(br.parameter_grads);
  Eigen::Index col = 0;
  for (std::size_t i = 0; i < order_.size(); ++i) {
    out.repr_grads.emplace(order_[i], br.input_grad.middleCols(col, widths_[i]));
    col += widths_[i];
  }
  return out;
}

const Matrix& ActiveParty::uploaded(PartyId p) const {
  auto it = uploads_.find(p);
  if (it == uploads_.end()) throw ArgumentError("no representation from " + to_string(p) + " this round");
  return it->second;
}

// ---- Federation ----

namespace {

std::vector<Eigen::Index> widths_of(const VflModel& model) {
  std::vector<Eigen::Index> w;
  for (const auto& [p, net] : model.bottom) w.push_back(net.output_size());
  return w;
}

}  // namespace

Federation::Federation(const VflModel& model, const PartitionedDataset& data, int threads)
    : layout_(model),
      active_(model.active, data.labels, model.top, model.feature_parties(), widths_of(model)),
      mirror_(model.flatten()),
      threads_(std::max(1, threads)) {
  model.validate();
  for (const auto& [p, net] : model.bottom) {
    if (p.index > data.num_parties()) {
      throw ProtocolError(to_string(p) + " has no feature slice in the dataset");
    }
    parties_.emplace_back(p, model.active, data.party_features(p.index), net);
  }
}

template <typename F>
void Federation::for_each_party(F&& f) {
  if (threads_ <= 1 || parties_.size() <= 1) {
    for (std::size_t i = 0; i < parties_.size(); ++i) f(i);
    return;
  }
  const std::size_t width = static_cast<std::size_t>(threads_);
  for (std::size_t start = 0; start < parties_.size(); start += width) {
    std::vector<std::future<void>> jobs;
    for (std::size_t i = start; i < std::min(parties_.size(), start + width); ++i) {
      jobs.push_back(std::async(std::launch::async, [&f, i] { f(i); }));
    }
    for (auto& j : jobs) j.get();
  }
}

RoundGradients Federation::compute_round(std::span<const Eigen::Index> batch,
                                         const RepresentationObjective* objective) {
  const std::uint64_t r = ++round_;
  bus_.open_round(r, layout_.feature_parties(), layout_.active);

  std::vector<RoundMessage> ups(parties_.size());
  for_each_party([&](std::size_t i) { ups[i] = parties_[i].local_forward(r, batch); });
  for (RoundMessage& m : ups) bus_.post(std::move(m));

  RoundGradients out;
  out.logits = active_.aggregate_and_predict(r, bus_.take_uploads());
  ActiveParty::Backprop bp = active_.backprop_round(r, batch);
  out.task_loss = bp.loss;

  std::optional<LossResult> forget;
  if (objective != nullptr) {
    forget = objective->loss(active_.uploaded(objective->party));
    out.objective_loss = forget->value;
  }

  for (const PassiveParty& party : parties_) {
    RoundMessage msg;
    msg.kind = MessageKind::kGradDownload;
    msg.sender = layout_.active;
    msg.receiver = party.id();
    msg.round = r;
    msg.tensors.push_back(std::move(bp.repr_grads.at(party.id())));
    if (forget && objective->party == party.id()) msg.tensors.push_back(forget->grad);
    bus_.post(std::move(msg));
  }

  std::vector<RoundMessage> downs;
  for (const PassiveParty& party : parties_) downs.push_back(bus_.take_download(party.id()));
  std::vector<RoundMessage> param_ups(parties_.size());
  for_each_party([&](std::size_t i) { param_ups[i] = parties_[i].local_backward(downs[i]); });
  for (RoundMessage& m : param_ups) bus_.post(std::move(m));

  std::vector<RoundMessage> grads = bus_.take_param_grads();
  out.task_grad = GradientVector(mirror_.size());
  if (forget) out.objective_grad = GradientVector(mirror_.size());
  for (const RoundMessage& m : grads) {
    const auto [offset, len] = layout_.block(m.sender);
    out.task_grad.values().segment(offset, len) = m.grads.at(0).values();
    if (forget && m.sender == objective->party) {
      out.objective_grad->values().segment(offset, len) = m.grads.at(1).values();
    }
  }
  const auto [top_offset, top_len] = layout_.top_block();
  out.task_grad.values().segment(top_offset, top_len) = bp.top_grads.values();
  return out;
}

void Federation::apply_update(const GradientVector& delta, double lr) {
  if (delta.size() != mirror_.size()) {
    throw DimensionError("update has " + std::to_string(delta.size()) + " entries, model has " +
                         std::to_string(mirror_.size()));
  }
  mirror_ -= lr * delta.values();
  RoundMessage msg;
  msg.kind = MessageKind::kModelBroadcast;
  msg.sender = layout_.active;
  msg.receiver = kBroadcast;
  msg.round = round_;
  msg.parameters = mirror_;
  bus_.post(std::move(msg));
  const RoundMessage& bc = bus_.broadcast();
  for (PassiveParty& party : parties_) party.apply_broadcast(bc, layout_.block(party.id()).first);
  const auto [top_offset, top_len] = layout_.top_block();
  active_.install_top(bc.parameters.segment(top_offset, top_len));
}

VflModel Federation::model() const {
  VflModel m = layout_;
  m.unflatten(mirror_);
  return m;
}

// ---- Training ----

std::vector<Eigen::Index> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  Rng rng(derive_seed(seed, "epoch/" + std::to_string(epoch)));
  rng.shuffle(std::span<Eigen::Index>(order));
  return order;
}

std::map<PartyId, Shape> slice_shapes(const PartitionedDataset& data) {
  std::map<PartyId, Shape> out;
  for (int k = 1; k <= data.num_parties(); ++k) out.emplace(PartyId{k}, data.slice_shape(k));
  return out;
}

TrainResult vfl_pretrain(const PartitionedDataset& data, const TrainConfig& cfg, VflModel initial) {
  if (cfg.epochs < 0) throw ArgumentError("epochs must be non-negative");
  if (cfg.batch_size < 1) throw ArgumentError("batch_size must be positive");
  if (!(cfg.learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (data.size() == 0) throw ArgumentError("training set is empty");
  Federation fed(initial, data, cfg.threads);
  TrainResult result;
  const std::size_t n = data.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < cfg.epochs; ++e) {
    const std::vector<Eigen::Index> order = epoch_order(n, cfg.seed, e);
    double total = 0.0;
    for (std::size_t start = 0; start < n; start += bs) {
      std::span<const Eigen::Index> batch(order.data() + start, std::min(bs, n - start));
      RoundGradients g = fed.compute_round(batch);
      if (!std::isfinite(g.task_loss) || !g.task_grad.is_finite()) {
        throw NumericError("pretrain", fed.rounds(), "task loss " + std::to_string(g.task_loss));
      }
      fed.apply_update(g.task_grad, cfg.learning_rate);
      total += g.task_loss * static_cast<double>(batch.size());
    }
    result.epoch_losses.push_back(total / static_cast<double>(n));
  }
  result.model = fed.model();
  return result;
}

TrainResult retrain_gold(const PartitionedDataset& data, const TrainConfig& cfg,
                         const ArchitectureSpec& arch, PartyId active, PartyId drop,
                         std::uint64_t init_seed) {
  if (drop == active) throw UnsupportedOperation("cannot retrain without the active (label) party");
  std::map<PartyId, Shape> slices = slice_shapes(data);
  if (slices.erase(drop) == 0) throw ArgumentError(to_string(drop) + " is not a feature party");
  if (slices.empty()) throw ArgumentError("no feature party left after dropping " + to_string(drop));
  return vfl_pretrain(data, cfg, build_model(arch, slices, active, init_seed));
}

Matrix predict(const VflModel& model, const PartitionedDataset& data,
               std::span<const Eigen::Index> indices) {
  model.validate();
  for (const auto& [p, net] : model.bottom) {
    if (p.index > data.num_parties()) throw ProtocolError("no features for " + to_string(p));
  }
  constexpr std::size_t kChunk = 512;
  Matrix out(static_cast<Eigen::Index>(indices.size()), model.top.output_size());
  for (std::size_t start = 0; start < indices.size(); start += kChunk) {
    auto rows = indices.subspan(start, std::min(kChunk, indices.size() - start));
    Matrix z(static_cast<Eigen::Index>(rows.size()), model.top.input_size());
    Eigen::Index col = 0;
    for (const auto& [p, net] : model.bottom) {
      const Eigen::Index w = net.output_size();
      z.middleCols(col, w) = net.infer(data.gather(p.index, rows));
      col += w;
    }
    out.middleRows(static_cast<Eigen::Index>(start), z.rows()) = model.top.infer(z);
  }
  return out;
}

Matrix predict_all(const VflModel& model, const PartitionedDataset& data) {
  std::vector<Eigen::Index> idx(data.size());
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  return predict(model, data, idx);
}

Matrix representations(const VflModel& model, const PartitionedDataset& data, PartyId party) {
  auto it = model.bottom.find(party);
  if (it == model.bottom.end()) throw ArgumentError(to_string(party) + " has no encoder");
  constexpr Eigen::Index kChunk = 512;
  const Matrix& x = data.party_features(party.index);
  Matrix out(x.rows(), it->second.output_size());
  for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
    const Eigen::Index len = std::min(kChunk, x.rows() - start);
    out.middleRows(start, len) = it->second.infer(x.middleRows(start, len));
  }
  return out;
}

}  // namespace splitvfu
