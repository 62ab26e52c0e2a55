#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "splitvfu/dataset.hpp"
#include "splitvfu/losses.hpp"
#include "splitvfu/matrix.hpp"
#include "splitvfu/rng.hpp"
#include "splitvfu/vfl.hpp"

namespace splitvfu {

// Unit vector u drawn once per run; the collapse target is c * u.
struct Anchor {
  Vector u;
  double c = 1.0;
  std::uint64_t seed = 0;

  Vector point() const { return c * u; }
  // FNV-1a over the raw bytes of u and c; identical across rounds of a run.
  std::uint64_t hash() const;
};

// Normalized standard Gaussian draw, uniform on the sphere S^{d-1}.
Vector sample_unit_sphere(Eigen::Index dim, std::uint64_t seed);

Anchor make_anchor(Eigen::Index dim, double c, std::uint64_t seed);

// Mean over rows of ||h_i - c u||^2 and its gradient with respect to h.
LossResult forgetting_loss(const Matrix& h_f, const Anchor& anchor);

struct RetentionResult {
  double loss = 0.0;
  GradientVector grad;
};

// Task loss through the full collaborative forward path and its gradient over
// the flat model.
RetentionResult retention_loss(const VflModel& model, const PartitionedDataset& data,
                               std::span<const Eigen::Index> batch);

// <a, b> / (|a| |b|); 0 when either norm is zero.
double cosine(const GradientVector& a, const GradientVector& b);

struct Projection {
  GradientVector grad;
  bool projected = false;
};

// Removes the component of g_r along g_f when the two conflict (<g_f, g_r> < 0);
// otherwise returns g_r unchanged.
Projection project_retention(const GradientVector& g_r, const GradientVector& g_f);

enum class UnlearnMode { kCoordinated, kNoGcm, kRandProj };

std::string to_string(UnlearnMode mode);
UnlearnMode unlearn_mode_from_string(const std::string& name);

struct UnlearnConfig {
  double c = 1.0;
  double alpha = 1e-3;
  double learning_rate = 0.05;
  int epochs = 3;
  int batch_size = 64;
  UnlearnMode mode = UnlearnMode::kCoordinated;
  std::uint64_t seed = 0;
  int threads = 1;
};

void validate(const UnlearnConfig& cfg);

struct CoordinatedStep {
  GradientVector delta;
  bool projected = false;
};

// coordinated: g_f + alpha * project(g_r, g_f)
// no_gcm:      g_f + alpha * g_r
// rand_proj:   g_f + alpha * r, r a random direction with |r| = |project(g_r, g_f)|
CoordinatedStep coordinated_update(const GradientVector& g_f, const GradientVector& g_r,
                                   const UnlearnConfig& cfg, Rng* rand_proj_rng = nullptr);

struct TraceRecord {
  std::uint64_t round = 0;
  int epoch = 0;
  double forget_loss = 0.0;
  double retain_loss = 0.0;
  double cosine = 0.0;
  bool projected = false;
  double grad_f_norm = 0.0;
  double grad_r_norm = 0.0;
  std::uint64_t anchor_hash = 0;
};

struct UnlearnResult {
  VflModel model;
  Anchor anchor;
  std::vector<TraceRecord> trace;
};

UnlearnResult unlearn(const VflModel& model, const PartitionedDataset& data, PartyId forget,
                      const UnlearnConfig& cfg);

// Mean ||h_i - c u||^2 over every row of the party's representations.
double mean_anchor_distance(const VflModel& model, const PartitionedDataset& data, PartyId party,
                            const Anchor& anchor);

// One JSON object per line:
// {"round","epoch","forget_loss","retain_loss","cosine","projected","grad_f_norm","grad_r_norm","anchor_hash"}
void write_trace_jsonl(std::ostream& out, std::span<const TraceRecord> trace);

}  // namespace splitvfu
