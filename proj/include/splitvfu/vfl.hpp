#pragma once

#include <compare>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "splitvfu/dataset.hpp"
#include "splitvfu/losses.hpp"
#include "splitvfu/matrix.hpp"
#include "splitvfu/network.hpp"

namespace splitvfu {

// 1-based party number. Feature party k owns slice k of the partition.
struct PartyId {
  int index = 0;
  auto operator<=>(const PartyId&) const = default;
};

std::string to_string(PartyId p);

enum class PartyRole { kPassive, kActive };

// Bottom encoders per feature party plus the active party's top aggregator.
// Flat parameter layout: encoders in ascending party order, then the top.
struct VflModel {
  std::map<PartyId, Network> bottom;
  Network top;
  PartyId active;

  std::vector<PartyId> feature_parties() const;
  PartyRole role(PartyId p) const { return p == active ? PartyRole::kActive : PartyRole::kPassive; }
  Eigen::Index hidden_dim(PartyId p) const;
  Eigen::Index parameter_count() const;
  // Offset and length of one encoder's block in the flat vector.
  std::pair<Eigen::Index, Eigen::Index> block(PartyId p) const;
  std::pair<Eigen::Index, Eigen::Index> top_block() const;

  Vector flatten() const;
  void unflatten(const Vector& params);

  // Top input width must equal the summed encoder widths.
  void validate() const;
};

enum class EncoderKind { kMlp, kConv };

struct ArchitectureSpec {
  EncoderKind encoder = EncoderKind::kMlp;
  std::vector<int> encoder_hidden{32};  // MLP encoders only
  int hidden_dim = 16;                  // MLP encoder output width d_h
  bool encoder_relu_output = false;     // MLP encoders only; conv encoders always end in ReLU + pool
  std::vector<int> conv_channels{32, 64};
  int conv_padding = 1;
  std::vector<int> top_hidden{128};
  int num_classes = 10;
};

// Fresh model over `parties` (slice shapes by party). Party k's encoder is
// drawn from the stream derive_seed(init_seed, "init/encoder/k"), the top from
// "init/top", so dropping a party leaves the other encoders' init unchanged.
VflModel build_model(const ArchitectureSpec& arch, const std::map<PartyId, Shape>& slices,
                     PartyId active, std::uint64_t init_seed);

// Where the label holder sits: label-only (no encoder, index K + 1) or owning
// the last slice (index K).
enum class ActiveTopology { kLabelOnly, kOwnsLastSlice };

PartyId active_party_for(int num_slices, ActiveTopology topology);

enum class MessageKind { kReprUpload, kGradDownload, kParamGradUpload, kModelBroadcast };

std::string to_string(MessageKind kind);

inline constexpr PartyId kBroadcast{0};

struct RoundMessage {
  MessageKind kind = MessageKind::kReprUpload;
  PartyId sender;
  PartyId receiver;
  std::uint64_t round = 0;
  // repr_upload: {h}. grad_download: {dL_task/dh} or {dL_task/dh, dL_forget/dh}.
  std::vector<Matrix> tensors;
  // param_grad_upload: one block per tensor in the matching grad_download.
  std::vector<GradientVector> grads;
  // model_broadcast: the refreshed flat model.
  Vector parameters;
};

// In-process, lossless, totally ordered bus that enforces the round grammar:
// one repr_upload per feature party, aggregation, one grad_download and one
// param_grad_upload per feature party, then a single model_broadcast.
class MessageBus {
 public:
  struct RoundLog {
    std::uint64_t round = 0;
    std::vector<MessageKind> sequence;
    int aggregations = 0;
    bool complete = false;
  };

  void open_round(std::uint64_t round, std::vector<PartyId> feature_parties, PartyId active);
  void post(RoundMessage msg);
  // Aggregation point: returns the uploads ordered by PartyId, or throws
  // ProtocolError naming the first missing party.
  std::vector<RoundMessage> take_uploads();
  RoundMessage take_download(PartyId receiver);
  std::vector<RoundMessage> take_param_grads();
  const RoundMessage& broadcast() const { return broadcast_; }
  std::uint64_t current_round() const { return round_; }
  const std::vector<RoundLog>& log() const { return log_; }
  std::size_t delivered() const { return delivered_; }

 private:
  enum class Phase { kIdle, kUploads, kDownloads, kParamGrads, kBroadcast };

  void expect_phase(Phase phase, const RoundMessage& msg) const;

  Phase phase_ = Phase::kIdle;
  std::uint64_t round_ = 0;
  PartyId active_;
  std::vector<PartyId> parties_;
  std::map<PartyId, RoundMessage> pending_;
  std::map<PartyId, RoundMessage> downloads_;
  std::set<PartyId> downloaded_;
  RoundMessage broadcast_;
  std::vector<RoundLog> log_;
  std::size_t delivered_ = 0;
};

// Feature holder. Never sees labels.
class PassiveParty {
 public:
  PassiveParty(PartyId id, PartyId active, const Matrix& features, Network encoder);

  PartyId id() const { return id_; }
  const Network& encoder() const { return encoder_; }

  RoundMessage local_forward(std::uint64_t round, std::span<const Eigen::Index> batch);
  RoundMessage local_backward(const RoundMessage& grad_download);
  void apply_broadcast(const RoundMessage& broadcast, Eigen::Index offset);

 private:
  PartyId id_;
  PartyId active_;
  const Matrix* features_;
  Network encoder_;
  std::optional<std::uint64_t> cached_round_;
};

// Extra loss on one party's uploaded representation, evaluated by the active
// party (the forgetting loss during unlearning).
struct RepresentationObjective {
  PartyId party;
  std::function<LossResult(const Matrix&)> loss;
};

// Label holder and top-model owner. Never sees raw passive features.
class ActiveParty {
 public:
  ActiveParty(PartyId id, std::vector<int> labels, Network top, std::vector<PartyId> feature_parties,
              std::vector<Eigen::Index> widths);

  PartyId id() const { return id_; }
  const Network& top() const { return top_; }

  Matrix aggregate_and_predict(std::uint64_t round, std::vector<RoundMessage> uploads);

  struct Backprop {
    double loss = 0.0;
    GradientVector top_grads;
    std::map<PartyId, Matrix> repr_grads;
  };
  // Task loss on this round's logits against the labels of `batch`.
  Backprop backprop_round(std::uint64_t round, std::span<const Eigen::Index> batch);
  // Same, from an explicit logit gradient.
  Backprop backprop_upstream(std::uint64_t round, const Matrix& dlogits);

  const Matrix& uploaded(PartyId p) const;
  void install_top(const Vector& params) { top_.unflatten(params); }

 private:
  PartyId id_;
  std::vector<int> labels_;
  Network top_;
  std::vector<PartyId> order_;
  std::vector<Eigen::Index> widths_;
  std::optional<std::uint64_t> round_;
  Matrix logits_;
  std::map<PartyId, Matrix> uploads_;
};

struct RoundGradients {
  double task_loss = 0.0;
  GradientVector task_grad;                 // g_r over the full flat model
  std::optional<double> objective_loss;     // L_f when an objective is set
  std::optional<GradientVector> objective_grad;  // g_f, zero outside the party's block
  Matrix logits;
};

// One simulated deployment: the parties, the bus and the active party's mirror
// of the full model used for centralized updates.
class Federation {
 public:
  Federation(const VflModel& model, const PartitionedDataset& data, int threads = 1);

  RoundGradients compute_round(std::span<const Eigen::Index> batch,
                               const RepresentationObjective* objective = nullptr);
  // Omega <- Omega - lr * delta, then broadcast. Closes the round.
  void apply_update(const GradientVector& delta, double lr);

  VflModel model() const;
  const MessageBus& bus() const { return bus_; }
  std::uint64_t rounds() const { return round_; }

 private:
  template <typename F>
  void for_each_party(F&& f);

  VflModel layout_;  // architecture and block offsets; parameters live in the parties
  std::vector<PassiveParty> parties_;
  ActiveParty active_;
  MessageBus bus_;
  Vector mirror_;
  std::uint64_t round_ = 0;
  int threads_;
};

struct TrainConfig {
  int epochs = 10;
  int batch_size = 64;
  double learning_rate = 0.05;
  std::uint64_t seed = 0;  // shuffle stream
  int threads = 1;
};

// Shared epoch order: a Fisher-Yates shuffle from derive_seed(seed, "epoch/e").
std::vector<Eigen::Index> epoch_order(std::size_t n, std::uint64_t seed, int epoch);

struct TrainResult {
  VflModel model;
  std::vector<double> epoch_losses;
};

std::map<PartyId, Shape> slice_shapes(const PartitionedDataset& data);

TrainResult vfl_pretrain(const PartitionedDataset& data, const TrainConfig& cfg, VflModel initial);

// Gold standard: fresh init without `drop`'s encoder, trained on the same
// data and labels. Dropping the active party is unsupported.
TrainResult retrain_gold(const PartitionedDataset& data, const TrainConfig& cfg,
                         const ArchitectureSpec& arch, PartyId active, PartyId drop,
                         std::uint64_t init_seed);

// Collaborative inference over the model's parties; rows in `indices` order.
Matrix predict(const VflModel& model, const PartitionedDataset& data,
               std::span<const Eigen::Index> indices);
Matrix predict_all(const VflModel& model, const PartitionedDataset& data);

// Representations uploaded by one party for all rows.
Matrix representations(const VflModel& model, const PartitionedDataset& data, PartyId party);

}  // namespace splitvfu
