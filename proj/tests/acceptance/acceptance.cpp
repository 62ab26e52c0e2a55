// Acceptance suite: one PASS/FAIL line per criterion.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "commands.hpp"
#include "splitvfu/errors.hpp"
#include "splitvfu/experiment.hpp"
#include "splitvfu/losses.hpp"
#include "splitvfu/network.hpp"
#include "splitvfu/unlearning.hpp"
#include "support/finite_difference.hpp"
#include "support/monolith.hpp"

namespace fs = std::filesystem;
using namespace splitvfu;
using testing::as_matrix;
using testing::as_vector;
using testing::central_difference;
using testing::relative_error;

namespace tol {
constexpr double kFdRelative = 1e-4;
constexpr int kFdSeeds = 20;
constexpr double kFdSeconds = 10.0;
constexpr double kMonolithAbs = 1e-10;
constexpr double kMonolithSeconds = 5.0;
constexpr int kProjectionPairs = 100000;
constexpr double kOrthogonalScaled = 1e-10;
constexpr double kNonExpansionSlack = 1e-12;  // relative, for rounding in the norm
constexpr double kProjectionSeconds = 10.0;
constexpr double kUnitNorm = 1e-12;
constexpr int kAnchorMaxDim = 512;
constexpr int kAnchorDraws = 10000;
constexpr double kSigmas = 3.0;
constexpr double kBackdoorOriginalMin = 90.0;
constexpr double kBackdoorErasedMax = 15.0;
constexpr double kMnistBudgetSeconds = 15.0 * 60.0;
constexpr double kUtilityGap = 5.0;
constexpr double kRuntimeRatio = 0.35;
constexpr int kSeeds = 5;
constexpr int kSeedsRequired = 4;
constexpr double kMiaSlack = 0.02;
constexpr double kMiaGoldBand = 0.15;
constexpr double kAblationAccGap = 10.0;
}  // namespace tol

namespace {

int failures = 0;

void report(int id, bool pass, const std::string& name, const std::string& detail) {
  if (!pass) ++failures;
  std::cout << (pass ? "PASS" : "FAIL") << " [" << id << "] " << name << ": " << detail << std::endl;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Values in +-[0.1, 1]: keeps ReLU inputs off the kink.
Matrix off_kink(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = (rng.below(2) ? 1.0 : -1.0) * rng.uniform(0.1, 1.0);
  return m;
}

// Worst relative error of parameter and input gradients under a random probe.
double layer_fd_error(Network net, const Matrix& x, Rng& rng) {
  const Matrix probe = random_matrix(rng, x.rows(), net.output_size());
  net.forward(x);
  const BackwardResult analytic = net.backward(probe);
  double worst = 0.0;
  if (net.parameter_count() > 0) {
    auto of_params = [&](const Vector& p) {
      Network copy = net;
      copy.unflatten(p);
      return copy.infer(x).cwiseProduct(probe).sum();
    };
    worst = relative_error(analytic.parameter_grads.values(), central_difference(of_params, net.flatten()));
  }
  auto of_input = [&](const Vector& v) { return net.infer(as_matrix(v, x.rows(), x.cols())).cwiseProduct(probe).sum(); };
  return std::max(worst, relative_error(as_vector(analytic.input_grad), central_difference(of_input, as_vector(x))));
}

void criterion_gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  for (int s = 0; s < tol::kFdSeeds; ++s) {
    Rng rng(derive_seed(static_cast<std::uint64_t>(s), "acceptance/fd"));
    auto initialized = [&](std::vector<LayerParams> layers) {
      Network net(std::move(layers));
      net.initialize(rng);
      Vector p = net.flatten();
      for (Eigen::Index i = 0; i < p.size(); ++i) p[i] += rng.uniform(-0.1, 0.1);
      net.unflatten(p);
      return net;
    };
    worst = std::max(worst, layer_fd_error(initialized({dense_layer(4, 3)}), random_matrix(rng, 5, 4), rng));
    worst = std::max(worst, layer_fd_error(initialized({conv3x3_layer({1, 5, 5}, 2, 0)}), random_matrix(rng, 2, 25), rng));
    worst = std::max(worst, layer_fd_error(initialized({conv3x3_layer({2, 4, 4}, 3, 1)}), random_matrix(rng, 2, 32), rng));
    worst = std::max(worst, layer_fd_error(Network({maxpool2x2_layer({2, 4, 4})}), random_matrix(rng, 3, 32), rng));
    worst = std::max(worst, layer_fd_error(Network({relu_layer({6, 1, 1})}), off_kink(rng, 4, 6), rng));

    const Matrix logits = random_matrix(rng, 6, 4, -3.0, 3.0);
    std::vector<int> y(6);
    for (int& v : y) v = static_cast<int>(rng.below(4));
    const LossResult ce = loss_softmax_ce(logits, y);
    auto ce_of = [&](const Vector& v) { return loss_softmax_ce(as_matrix(v, 6, 4), y).value; };
    worst = std::max(worst, relative_error(as_vector(ce.grad), central_difference(ce_of, as_vector(logits))));

    const Matrix pred = random_matrix(rng, 5, 3), target = random_matrix(rng, 5, 3);
    const LossResult mse = loss_mse(pred, target);
    auto mse_of = [&](const Vector& v) { return loss_mse(as_matrix(v, 5, 3), target).value; };
    worst = std::max(worst, relative_error(as_vector(mse.grad), central_difference(mse_of, as_vector(pred))));
  }
  const double t = seconds_since(t0);
  report(1, worst <= tol::kFdRelative && t < tol::kFdSeconds, "gradient correctness",
         fmt::format("worst relative error {:.3e} over {} seeds (dense, conv pad 0/1, maxpool, relu, CE, MSE), {:.2f}s",
                     worst, tol::kFdSeeds, t));
}

void criterion_monolith() {
  const auto t0 = std::chrono::steady_clock::now();
  testing::MonolithDiff worst;
  for (std::uint64_t s = 1; s <= 5; ++s) {
    RawDataset raw = synth_dataset({.seed = s, .n = 30, .height = 6, .width = 9, .num_classes = 3});
    PartitionedDataset d = partition(raw, PartitionSpec::equal_slices(9, 3));
    ArchitectureSpec a;
    a.encoder_hidden = {5};
    a.hidden_dim = 4;
    a.top_hidden = {6};
    a.num_classes = 3;
    VflModel m = build_model(a, slice_shapes(d), active_party_for(3, ActiveTopology::kLabelOnly), s);
    std::vector<Eigen::Index> batch(12);
    std::iota(batch.begin(), batch.end(), Eigen::Index{3});
    Federation fed(m, d);
    const RoundGradients g = fed.compute_round(batch);
    const testing::MonolithDiff diff = testing::compare_with_monolith(m, d, batch, g);
    worst.loss = std::max(worst.loss, diff.loss);
    worst.logits = std::max(worst.logits, diff.logits);
    worst.grad = std::max(worst.grad, diff.grad);
  }
  const double t = seconds_since(t0);
  const bool ok = worst.loss <= tol::kMonolithAbs && worst.grad <= tol::kMonolithAbs && t < tol::kMonolithSeconds;
  report(2, ok, "split equals monolithic",
         fmt::format("max |dloss| {:.2e}, max |dgrad| {:.2e}, max |dlogit| {:.2e}, {:.2f}s", worst.loss, worst.grad,
                     worst.logits, t));
}

void criterion_projection() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(derive_seed(7, "acceptance/projection"));
  double worst_orth = 0.0, worst_expansion = 0.0;
  bool identity_bitwise = true;
  int projected = 0;
  for (int i = 0; i < tol::kProjectionPairs; ++i) {
    const Eigen::Index dim = 1 + static_cast<Eigen::Index>(rng.below(64));
    GradientVector gf(dim), gr(dim);
    const double sf = std::exp(rng.uniform(-6.0, 6.0)), sr = std::exp(rng.uniform(-6.0, 6.0));
    for (Eigen::Index j = 0; j < dim; ++j) {
      gf[j] = sf * rng.normal();
      gr[j] = sr * rng.normal();
    }
    if (i % 97 == 0) gf.values() = -gr.values();  // exact anti-parallel
    const Projection p = project_retention(gr, gf);
    if (p.projected) {
      ++projected;
      worst_orth = std::max(worst_orth, std::abs(p.grad.dot(gf)) / (gr.norm() * gf.norm()));
    } else {
      for (Eigen::Index j = 0; j < dim; ++j) {
        if (std::bit_cast<std::uint64_t>(p.grad[j]) != std::bit_cast<std::uint64_t>(gr[j])) identity_bitwise = false;
      }
    }
    worst_expansion = std::max(worst_expansion, p.grad.norm() / gr.norm() - 1.0);
  }
  const double t = seconds_since(t0);
  const bool ok = worst_orth <= tol::kOrthogonalScaled && identity_bitwise &&
                  worst_expansion <= tol::kNonExpansionSlack && t < tol::kProjectionSeconds;
  report(3, ok, "projection algebra",
         fmt::format("{} pairs ({} projected): max |<g~,g_f>|/(|g_r||g_f|) {:.2e}, identity branch bitwise {}, "
                     "max |g~|/|g_r|-1 {:.2e}, {:.2f}s",
                     tol::kProjectionPairs, projected, worst_orth, identity_bitwise ? "yes" : "no", worst_expansion, t));
}

void criterion_anchor() {
  double worst_norm = 0.0;
  for (int d = 1; d <= tol::kAnchorMaxDim; ++d) {
    for (std::uint64_t s = 0; s < 3; ++s) {
      worst_norm = std::max(worst_norm, std::abs(sample_unit_sphere(d, derive_seed(s, "acceptance/anchor")).norm() - 1.0));
    }
  }
  // Constancy: every trace record carries the same anchor hash.
  RawDataset raw = synth_dataset({.seed = 3, .n = 60, .height = 6, .width = 9, .num_classes = 3});
  PartitionedDataset data = partition(raw, PartitionSpec::equal_slices(9, 3));
  ArchitectureSpec a;
  a.encoder_hidden = {6};
  a.hidden_dim = 5;
  a.top_hidden = {8};
  a.num_classes = 3;
  VflModel m = build_model(a, slice_shapes(data), PartyId{4}, 1);
  UnlearnConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 11;
  const UnlearnResult r = unlearn(m, data, PartyId{2}, cfg);
  const std::uint64_t h = r.anchor.hash();
  const bool constant = !r.trace.empty() && std::all_of(r.trace.begin(), r.trace.end(), [&](const TraceRecord& t) {
    return t.anchor_hash == h;
  });
  const bool reproducible = make_anchor(5, cfg.c, derive_seed(cfg.seed, "anchor")).hash() == h;

  Vector mean = Vector::Zero(3);
  for (int i = 0; i < tol::kAnchorDraws; ++i) {
    mean += sample_unit_sphere(3, derive_seed(static_cast<std::uint64_t>(i), "acceptance/mc"));
  }
  mean /= tol::kAnchorDraws;
  const double sigma = std::sqrt(1.0 / 3.0 / tol::kAnchorDraws);
  const double z = mean.cwiseAbs().maxCoeff() / sigma;
  const bool ok = worst_norm <= tol::kUnitNorm && constant && reproducible && z <= tol::kSigmas;
  report(4, ok, "anchor",
         fmt::format("max ||u|-1| {:.2e} for d_h 1..{}, hash constant over {} rounds {}, reproducible {}, "
                     "max |coordinate mean| {:.2f} sigma at d_h=3",
                     worst_norm, tol::kAnchorMaxDim, r.trace.size(), constant ? "yes" : "no",
                     reproducible ? "yes" : "no", z));
}

const MetricsRecord& metrics_of(const RunResult& run, const std::string& name) {
  for (const ModelReport& r : run.models) {
    if (r.name == name) return r.metrics;
  }
  throw std::runtime_error("missing model " + name);
}

void criteria_mnist(const fs::path& config) {
  ExperimentConfig cfg = load_config(config);
  cfg.eval.original_clean = false;
  const auto t0 = std::chrono::steady_clock::now();
  const PreparedData data = prepare_data(cfg);
  const RunResult run = run_experiment(cfg, data);
  const double t = seconds_since(t0);
  const MetricsRecord& orig = metrics_of(run, "original_bkd");
  const MetricsRecord& unl = metrics_of(run, "unlearned");
  const MetricsRecord& gold = metrics_of(run, "gold");

  report(5,
         orig.backdoor_success >= tol::kBackdoorOriginalMin && unl.backdoor_success <= tol::kBackdoorErasedMax &&
             gold.backdoor_success <= tol::kBackdoorErasedMax && t <= tol::kMnistBudgetSeconds,
         "backdoor erasure (MNIST subset)",
         fmt::format("original {:.2f}%, unlearned {:.2f}%, gold {:.2f}%, run {:.0f}s", orig.backdoor_success,
                     unl.backdoor_success, gold.backdoor_success, t));
  report(6, unl.clean_acc >= gold.clean_acc - tol::kUtilityGap, "utility retention",
         fmt::format("unlearned clean {:.2f}%, gold clean {:.2f}% (gap {:.2f} points)", unl.clean_acc, gold.clean_acc,
                     gold.clean_acc - unl.clean_acc));
  const double ratio = run.timings.at("unlearn") / run.timings.at("retrain");
  report(7, ratio <= tol::kRuntimeRatio, "runtime overhead",
         fmt::format("unlearn {:.2f}s over {} epochs, retrain {:.2f}s over {} epochs, ratio {:.3f}",
                     run.timings.at("unlearn"), cfg.unlearn.epochs, run.timings.at("retrain"),
                     cfg.retrain.value_or(cfg.pretrain).epochs, ratio));
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

// Diverged variants count as NaN, which fails every comparison.
MetricsRecord variant(const ExperimentConfig& cfg, const PreparedData& data, const RunResult& run,
                      const std::function<void(ExperimentConfig&)>& edit) {
  ExperimentConfig v = cfg;
  edit(v);
  try {
    return run_unlearn_variant(v, data, run.original, run.gold ? &*run.gold : nullptr, unlearn_config(v)).metrics;
  } catch (const NumericError&) {
    const double nan = std::nan("");
    return {nan, nan, nan, nan, nan, {}};
  }
}

void criteria_synth(const fs::path& config) {
  const ExperimentConfig base = load_config(config);
  int kl_ok = 0, mia_ok = 0;
  std::vector<double> abl_acc, abl_bd, c_diff, a_diff;
  std::ostringstream kl_log, mia_log;
  for (int s = 1; s <= tol::kSeeds; ++s) {
    ExperimentConfig cfg = base;
    cfg.seed = static_cast<std::uint64_t>(s);
    cfg.eval.original_clean = false;
    const PreparedData data = prepare_data(cfg);
    const RunResult run = run_experiment(cfg, data);
    const MetricsRecord& orig = metrics_of(run, "original_bkd");
    const MetricsRecord& unl = metrics_of(run, "unlearned");
    const MetricsRecord& gold = metrics_of(run, "gold");

    kl_ok += unl.kl_to_gold < orig.kl_to_gold;
    kl_log << fmt::format(" {:.3f}<{:.3f}", unl.kl_to_gold, orig.kl_to_gold);
    const double du = std::abs(unl.mia_auc - gold.mia_auc), do_ = std::abs(orig.mia_auc - gold.mia_auc);
    mia_ok += du <= do_ + tol::kMiaSlack && du <= tol::kMiaGoldBand;
    mia_log << fmt::format(" {:.3f}/{:.3f}", du, do_);

    const MetricsRecord coord = variant(cfg, data, run, [](ExperimentConfig& c) { c.unlearn.mode = UnlearnMode::kCoordinated; });
    const MetricsRecord nogcm = variant(cfg, data, run, [](ExperimentConfig& c) { c.unlearn.mode = UnlearnMode::kNoGcm; });
    const MetricsRecord randp = variant(cfg, data, run, [](ExperimentConfig& c) { c.unlearn.mode = UnlearnMode::kRandProj; });
    abl_acc.push_back(coord.clean_acc - randp.clean_acc);
    abl_bd.push_back(nogcm.backdoor_success - coord.backdoor_success);

    auto at = [&](double c, double alpha) {
      return variant(cfg, data, run, [&](ExperimentConfig& v) {
               v.unlearn.c = c;
               v.unlearn.alpha = alpha;
             }).backdoor_success;
    };
    c_diff.push_back(at(8.0, 1e-3) - at(1.0, 1e-3));
    a_diff.push_back(at(1.0, 1e-2) - at(1.0, 1e-3));
  }
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += fmt::format(" {:+.2f}", x);
    return s;
  };
  report(8, kl_ok >= tol::kSeedsRequired, "KL directionality",
         fmt::format("{}/{} seeds with KL(gold||unlearned) < KL(gold||original):{}", kl_ok, tol::kSeeds, kl_log.str()));
  report(9, mia_ok >= tol::kSeedsRequired, "MIA directionality",
         fmt::format("{}/{} seeds; |AUC_u-AUC_g| / |AUC_o-AUC_g|:{}", mia_ok, tol::kSeeds, mia_log.str()));
  const double acc_gap = median(abl_acc), bd_gap = median(abl_bd);
  report(10, acc_gap >= tol::kAblationAccGap && bd_gap >= 0.0, "ablation ordering",
         fmt::format("median clean(coordinated)-clean(rand_proj) {:.2f} [{} ], median bkd(no_gcm)-bkd(coordinated) "
                     "{:.2f} [{} ]",
                     acc_gap, list(abl_acc), bd_gap, list(abl_bd)));
  const double cm = median(c_diff), am = median(a_diff);
  report(11, cm > 0.0 && am > 0.0, "sensitivity directionality",
         fmt::format("median bkd(c=8)-bkd(c=1) {:.2f} [{} ], median bkd(alpha=1e-2)-bkd(alpha=1e-3) {:.2f} [{} ]", cm,
                     list(c_diff), am, list(a_diff)));
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void criterion_determinism(const fs::path& config) {
  const fs::path root = fs::temp_directory_path() / "splitvfu-acceptance";
  fs::remove_all(root);
  ExperimentConfig cfg = load_config(config);
  cfg.save_checkpoints = false;
  cfg.output_dir = (root / "a").string();
  cli::cmd_run(cfg);
  cfg.output_dir = (root / "b").string();
  cli::cmd_run(cfg);
  const std::string a = slurp(root / "a" / "summary.csv"), b = slurp(root / "b" / "summary.csv");
  report(12, !a.empty() && a == b, "determinism",
         fmt::format("summary.csv {} bytes, byte-identical {}", a.size(), a == b ? "yes" : "no"));
  fs::remove_all(root);
}

}  // namespace

int main(int argc, char** argv) {
  spdlog::set_level(spdlog::level::warn);
  const fs::path source = argc > 1 ? fs::path(argv[1]) : fs::path(SPLITVFU_SOURCE_DIR);
  if (std::getenv("SPLITVFU_DATA_ROOT") == nullptr) setenv("SPLITVFU_DATA_ROOT", (source / "data").c_str(), 1);
  const fs::path mnist = source / "configs" / "mnist.json";
  const fs::path synth = source / "configs" / "synth.json";

  const std::vector<std::function<void()>> steps{
      criterion_gradients, criterion_monolith, criterion_projection, criterion_anchor,
      [&] { criteria_mnist(mnist); }, [&] { criteria_synth(synth); }, [&] { criterion_determinism(synth); }};
  for (const auto& step : steps) {
    try {
      step();
    } catch (const std::exception& e) {
      ++failures;
      std::cout << "FAIL error: " << e.what() << std::endl;
    }
  }
  std::cout << (failures == 0 ? "all criteria passed" : fmt::format("{} criteria failed", failures)) << std::endl;
  return failures == 0 ? 0 : 1;
}
