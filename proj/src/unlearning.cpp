#include "splitvfu/unlearning.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "splitvfu/errors.hpp"

namespace splitvfu {

std::uint64_t Anchor::hash() const {
  std::uint64_t h = fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(u.data()),
                                                          static_cast<std::size_t>(u.size()) * sizeof(double)));
  return fnv1a64(std::span<const unsigned char>(reinterpret_cast<const unsigned char*>(&c), sizeof(double)), h);
}

Vector sample_unit_sphere(Eigen::Index dim, std::uint64_t seed) {
  if (dim < 1) throw ArgumentError("unit sphere dimension must be at least 1, got " + std::to_string(dim));
  Rng rng(seed);
  Vector u(dim);
  double norm = 0.0;
  while (norm == 0.0) {
    for (Eigen::Index i = 0; i < dim; ++i) u[i] = rng.normal();
    norm = u.norm();
  }
  u /= norm;
  return u;
}

Anchor make_anchor(Eigen::Index dim, double c, std::uint64_t seed) {
  if (!(c > 0.0) || !std::isfinite(c)) throw ArgumentError("anchor scale c must be positive");
  return Anchor{sample_unit_sphere(dim, seed), c, seed};
}

LossResult forgetting_loss(const Matrix& h_f, const Anchor& anchor) {
  if (h_f.cols() != anchor.u.size()) {
    throw DimensionError("representation width " + std::to_string(h_f.cols()) + " vs anchor dimension " +
                         std::to_string(anchor.u.size()));
  }
  if (h_f.rows() == 0) throw ArgumentError("forgetting loss on an empty batch");
  Matrix diff = h_f.rowwise() - anchor.point().transpose();
  const double n = static_cast<double>(h_f.rows());
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

RetentionResult retention_loss(const VflModel& model, const PartitionedDataset& data,
                               std::span<const Eigen::Index> batch) {
  Federation fed(model, data);
  RoundGradients g = fed.compute_round(batch);
  return {g.task_loss, std::move(g.task_grad)};
}

double cosine(const GradientVector& a, const GradientVector& b) {
  const double dot = a.dot(b);
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) {
    spdlog::warn("cosine of a zero-norm gradient; using 0");
    return 0.0;
  }
  return std::clamp(dot / (na * nb), -1.0, 1.0);
}

Projection project_retention(const GradientVector& g_r, const GradientVector& g_f) {
  const double dot = g_f.dot(g_r);
  if (!(dot < 0.0)) return {g_r, false};
  const double ff = g_f.squared_norm();
  GradientVector out = g_r;
  out.values() -= (dot / ff) * g_f.values();
  return {std::move(out), true};
}

std::string to_string(UnlearnMode mode) {
  switch (mode) {
    case UnlearnMode::kCoordinated: return "coordinated";
    case UnlearnMode::kNoGcm: return "no_gcm";
    case UnlearnMode::kRandProj: return "rand_proj";
  }
  return "unknown";
}

UnlearnMode unlearn_mode_from_string(const std::string& name) {
  if (name == "coordinated") return UnlearnMode::kCoordinated;
  if (name == "no_gcm") return UnlearnMode::kNoGcm;
  if (name == "rand_proj") return UnlearnMode::kRandProj;
  throw ArgumentError("unknown unlearning mode '" + name + "'");
}

void validate(const UnlearnConfig& cfg) {
  if (!(cfg.c > 0.0)) throw ArgumentError("c must be positive");
  if (!(cfg.alpha >= 0.0)) throw ArgumentError("alpha must be non-negative");
  if (!(cfg.learning_rate > 0.0)) throw ArgumentError("learning_rate must be positive");
  if (cfg.epochs < 0) throw ArgumentError("epochs must be non-negative");
  if (cfg.batch_size < 1) throw ArgumentError("batch_size must be positive");
}

CoordinatedStep coordinated_update(const GradientVector& g_f, const GradientVector& g_r,
                                   const UnlearnConfig& cfg, Rng* rand_proj_rng) {
  if (g_f.size() != g_r.size()) {
    throw DimensionError("g_f has " + std::to_string(g_f.size()) + " entries, g_r has " +
                         std::to_string(g_r.size()));
  }
  switch (cfg.mode) {
    case UnlearnMode::kCoordinated: {
      Projection p = project_retention(g_r, g_f);
      return {g_f + cfg.alpha * p.grad, p.projected};
    }
    case UnlearnMode::kNoGcm:
      return {g_f + cfg.alpha * g_r, false};
    case UnlearnMode::kRandProj: {
      if (rand_proj_rng == nullptr) throw ArgumentError("rand_proj needs a random stream");
      Projection p = project_retention(g_r, g_f);
      GradientVector r(g_r.size());
      double norm = 0.0;
      while (norm == 0.0 && r.size() > 0) {
        for (Eigen::Index i = 0; i < r.size(); ++i) r[i] = rand_proj_rng->normal();
        norm = r.norm();
      }
      if (norm > 0.0) r *= p.grad.norm() / norm;
      return {g_f + cfg.alpha * r, p.projected};
    }
  }
  throw ArgumentError("unknown unlearning mode");
}

UnlearnResult unlearn(const VflModel& model, const PartitionedDataset& data, PartyId forget,
                      const UnlearnConfig& cfg) {
  validate(cfg);
  if (forget == model.active) throw UnsupportedOperation("cannot unlearn the active (label) party");
  if (!model.bottom.contains(forget)) throw ArgumentError(to_string(forget) + " is not a feature party");

  UnlearnResult result;
  result.anchor = make_anchor(model.hidden_dim(forget), cfg.c, derive_seed(cfg.seed, "anchor"));
  const std::uint64_t anchor_hash = result.anchor.hash();
  const Anchor& anchor = result.anchor;
  RepresentationObjective objective{forget, [&anchor](const Matrix& h) { return forgetting_loss(h, anchor); }};

  Federation fed(model, data, cfg.threads);
  Rng rand_proj(derive_seed(cfg.seed, "rand_proj"));
  const std::uint64_t shuffle_seed = derive_seed(cfg.seed, "shuffle");
  const std::size_t n = data.size();
  const auto bs = static_cast<std::size_t>(cfg.batch_size);
  for (int e = 0; e < cfg.epochs; ++e) {
    const std::vector<Eigen::Index> order = epoch_order(n, shuffle_seed, e);
    for (std::size_t start = 0; start < n; start += bs) {
      std::span<const Eigen::Index> batch(order.data() + start, std::min(bs, n - start));
      RoundGradients g = fed.compute_round(batch, &objective);
      const GradientVector& g_f = *g.objective_grad;
      const GradientVector& g_r = g.task_grad;
      if (!std::isfinite(*g.objective_loss) || !std::isfinite(g.task_loss) || !g_f.is_finite() ||
          !g_r.is_finite()) {
        throw NumericError("unlearn", fed.rounds(),
                           "forget loss " + std::to_string(*g.objective_loss) + ", retain loss " +
                               std::to_string(g.task_loss));
      }
      if (anchor.hash() != anchor_hash) throw StateError("anchor changed during unlearning");
      TraceRecord rec;
      rec.round = fed.rounds();
      rec.epoch = e;
      rec.forget_loss = *g.objective_loss;
      rec.retain_loss = g.task_loss;
      rec.grad_f_norm = g_f.norm();
      rec.grad_r_norm = g_r.norm();
      rec.cosine = (rec.grad_f_norm > 0.0 && rec.grad_r_norm > 0.0) ? cosine(g_r, g_f) : 0.0;
      rec.anchor_hash = anchor_hash;
      CoordinatedStep step = coordinated_update(g_f, g_r, cfg, &rand_proj);
      rec.projected = step.projected;
      fed.apply_update(step.delta, cfg.learning_rate);
      result.trace.push_back(rec);
    }
  }
  result.model = fed.model();
  return result;
}

double mean_anchor_distance(const VflModel& model, const PartitionedDataset& data, PartyId party,
                            const Anchor& anchor) {
  const Matrix h = representations(model, data, party);
  if (h.rows() == 0) throw ArgumentError("no samples");
  return forgetting_loss(h, anchor).value;
}

void write_trace_jsonl(std::ostream& out, std::span<const TraceRecord> trace) {
  for (const TraceRecord& r : trace) {
    nlohmann::ordered_json j;
    j["round"] = r.round;
    j["epoch"] = r.epoch;
    j["forget_loss"] = r.forget_loss;
    j["retain_loss"] = r.retain_loss;
    j["cosine"] = r.cosine;
    j["projected"] = r.projected;
    j["grad_f_norm"] = r.grad_f_norm;
    j["grad_r_norm"] = r.grad_r_norm;
    j["anchor_hash"] = r.anchor_hash;
    out << j.dump() << '\n';
  }
}

}  // namespace splitvfu
