#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "splitvfu/dataset.hpp"
#include "splitvfu/matrix.hpp"
#include "splitvfu/vfl.hpp"

namespace splitvfu {

// Percent of rows whose arg-max matches the label.
double accuracy_from_logits(const Matrix& logits, std::span<const int> labels);
double clean_accuracy(const VflModel& model, const PartitionedDataset& test);

// Percent of triggered samples predicted as target_label, skipping samples
// whose true label already is target_label.
double backdoor_success_from_logits(const Matrix& logits, std::span<const int> labels, int target_label);
double backdoor_success(const VflModel& model, const PartitionedDataset& triggered, int target_label);

// Row-wise softmax of the model's logits.
Matrix predictive_distribution(const VflModel& model, const PartitionedDataset& data);

// Mean over rows of sum_c p log(p / q). Entries are clamped to eps and each
// row renormalized before the logs.
double kl_predictive(const Matrix& p_gold, const Matrix& p_other, double eps = kNumerics.kl_clamp);

// Copy of `data` with one party's slice set to zero.
PartitionedDataset blank_party(const PartitionedDataset& data, int party);

struct MiaDataset {
  Matrix features;
  std::vector<int> membership;  // 1 = member
};

// L2-regularized logistic regression on standardized features, trained by
// full-batch gradient descent.
class LogisticRegression {
 public:
  struct Options {
    double l2 = 1e-3;
    double learning_rate = 0.5;
    int iterations = 500;
  };

  static LogisticRegression fit(const MiaDataset& ds, std::uint64_t seed, const Options& opt);
  static LogisticRegression fit(const MiaDataset& ds, std::uint64_t seed) { return fit(ds, seed, Options{}); }

  Vector score(const Matrix& features) const;  // P(member)
  const Vector& weights() const { return w_; }

 private:
  Vector mean_, scale_, w_;
  double b_ = 0.0;
};

// ROC-AUC via the average-rank statistic (ties get mid-ranks).
double roc_auc(std::span<const double> scores, std::span<const int> labels);
// Same quantity by counting concordant pairs (ties count 1/2).
double roc_auc_pairwise(std::span<const double> scores, std::span<const int> labels);

struct MiaResult {
  double auc = 0.5;
  double acc = 0.5;
};

// Attack features per sample: the model's logits with and without `target`'s
// slice (each sorted descending), plus max logit and softmax entropy of both.
Matrix mia_features(const VflModel& model, const PartitionedDataset& data, int target);

// Balanced member/nonmember pools, a seeded 70/30 split, logistic-regression
// attacker; AUC and accuracy on the held-out fold.
MiaResult mia_attack(const VflModel& model, const PartitionedDataset& members,
                     const PartitionedDataset& nonmembers, int target, std::uint64_t seed);

MiaResult mia_evaluate(const MiaDataset& ds, std::uint64_t seed);

struct MetricsRecord {
  double clean_acc = 0.0;
  double backdoor_success = 0.0;
  double mia_auc = 0.5;
  double mia_acc = 0.5;
  double kl_to_gold = 0.0;
  std::map<std::string, double> wall_clock_s;
};

template <typename F>
auto time_phase(const std::string& label, F&& thunk, std::map<std::string, double>& timings) {
  const auto start = std::chrono::steady_clock::now();
  auto result = thunk();
  timings[label] += std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace splitvfu
