#include "splitvfu/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "splitvfu/errors.hpp"
#include "splitvfu/losses.hpp"
#include "splitvfu/rng.hpp"

namespace splitvfu {

namespace {

Eigen::Index argmax_row(const Matrix& m, Eigen::Index r) {
  Eigen::Index arg = 0;
  m.row(r).maxCoeff(&arg);
  return arg;
}

void check_labels(const Matrix& logits, std::span<const int> labels) {
  if (static_cast<Eigen::Index>(labels.size()) != logits.rows()) {
    throw DimensionError(std::to_string(labels.size()) + " labels for " + std::to_string(logits.rows()) + " rows");
  }
}

}  // namespace

double accuracy_from_logits(const Matrix& logits, std::span<const int> labels) {
  check_labels(logits, labels);
  if (labels.empty()) throw ArgumentError("accuracy on an empty set");
  std::size_t correct = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    correct += argmax_row(logits, r) == labels[static_cast<std::size_t>(r)];
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(labels.size());
}

double clean_accuracy(const VflModel& model, const PartitionedDataset& test) {
  if (test.size() == 0) throw ArgumentError("clean accuracy on an empty test set");
  return accuracy_from_logits(predict_all(model, test), test.labels);
}

double backdoor_success_from_logits(const Matrix& logits, std::span<const int> labels, int target_label) {
  check_labels(logits, labels);
  std::size_t total = 0, hits = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    if (labels[static_cast<std::size_t>(r)] == target_label) continue;
    ++total;
    hits += argmax_row(logits, r) == target_label;
  }
  if (total == 0) throw ArgumentError("no triggered samples left after excluding the target label");
  return 100.0 * static_cast<double>(hits) / static_cast<double>(total);
}

double backdoor_success(const VflModel& model, const PartitionedDataset& triggered, int target_label) {
  return backdoor_success_from_logits(predict_all(model, triggered), triggered.labels, target_label);
}

Matrix predictive_distribution(const VflModel& model, const PartitionedDataset& data) {
  return softmax(predict_all(model, data));
}

double kl_predictive(const Matrix& p_gold, const Matrix& p_other, double eps) {
  if (p_gold.rows() != p_other.rows() || p_gold.cols() != p_other.cols()) {
    throw DimensionError("predictive distributions differ in shape");
  }
  if (p_gold.rows() == 0) throw ArgumentError("KL over an empty batch");
  for (const Matrix* m : {&p_gold, &p_other}) {
    if (!all_finite(*m) || m->minCoeff() < 0.0) throw ArgumentError("probabilities must be finite and non-negative");
    for (Eigen::Index r = 0; r < m->rows(); ++r) {
      if (std::abs(m->row(r).sum() - 1.0) > kNumerics.simplex_tolerance) {
        throw ArgumentError("row " + std::to_string(r) + " is not on the simplex");
      }
    }
  }
  double total = 0.0;
  for (Eigen::Index r = 0; r < p_gold.rows(); ++r) {
    Eigen::RowVectorXd p = p_gold.row(r).cwiseMax(eps);
    Eigen::RowVectorXd q = p_other.row(r).cwiseMax(eps);
    p /= p.sum();
    q /= q.sum();
    double row = 0.0;
    for (Eigen::Index c = 0; c < p.size(); ++c) row += p[c] * std::log(p[c] / q[c]);
    total += std::max(0.0, row);
  }
  return total / static_cast<double>(p_gold.rows());
}

PartitionedDataset blank_party(const PartitionedDataset& data, int party) {
  PartitionedDataset out = data;
  out.party_features(party);  // range check
  out.features.at(static_cast<std::size_t>(party - 1)).setZero();
  return out;
}

LogisticRegression LogisticRegression::fit(const MiaDataset& ds, std::uint64_t seed, const Options& opt) {
  const Matrix& x = ds.features;
  if (static_cast<Eigen::Index>(ds.membership.size()) != x.rows()) {
    throw DimensionError("membership labels do not match feature rows");
  }
  if (!all_finite(x)) throw ArgumentError("attack features must be finite");
  const auto members = std::count(ds.membership.begin(), ds.membership.end(), 1);
  const auto others = static_cast<std::ptrdiff_t>(ds.membership.size()) - members;
  if (members < 2 || others < 2) throw EvaluationError("attack training set needs two samples per class");

  LogisticRegression lr;
  const double n = static_cast<double>(x.rows());
  lr.mean_ = x.colwise().mean().transpose();
  Matrix centered = x.rowwise() - lr.mean_.transpose();
  lr.scale_ = (centered.colwise().squaredNorm() / n).cwiseSqrt().transpose();
  for (Eigen::Index j = 0; j < lr.scale_.size(); ++j) {
    if (lr.scale_[j] < 1e-12) lr.scale_[j] = 1.0;
  }
  const Matrix z = centered * lr.scale_.cwiseInverse().asDiagonal();
  Vector y(x.rows());
  for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = ds.membership[static_cast<std::size_t>(i)] == 1 ? 1.0 : 0.0;

  Rng rng(seed);
  lr.w_ = Vector(z.cols());
  for (Eigen::Index j = 0; j < lr.w_.size(); ++j) lr.w_[j] = rng.uniform(-0.01, 0.01);
  lr.b_ = 0.0;
  for (int it = 0; it < opt.iterations; ++it) {
    Vector logits = (z * lr.w_).array() + lr.b_;
    Vector p = (1.0 / (1.0 + (-logits.array()).exp())).matrix();
    Vector err = p - y;
    lr.w_ -= opt.learning_rate * ((z.transpose() * err) / n + opt.l2 * lr.w_);
    lr.b_ -= opt.learning_rate * err.mean();
  }
  return lr;
}

Vector LogisticRegression::score(const Matrix& features) const {
  if (features.cols() != mean_.size()) throw DimensionError("feature width differs from the fitted model");
  Matrix z = (features.rowwise() - mean_.transpose()) * scale_.cwiseInverse().asDiagonal();
  Vector logits = (z * w_).array() + b_;
  return (1.0 / (1.0 + (-logits.array()).exp())).matrix();
}

namespace {

void check_binary(std::span<const double> scores, std::span<const int> labels, std::size_t& pos, std::size_t& neg) {
  if (scores.size() != labels.size()) throw DimensionError("scores and labels differ in length");
  pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw EvaluationError("AUC needs both classes");
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < idx.size();) {
    std::size_t j = i;
    while (j + 1 < idx.size() && scores[idx[j + 1]] == scores[idx[i]]) ++j;
    const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) {
      if (labels[idx[k]] == 1) rank_sum += mid;
    }
    i = j + 1;
  }
  const double p = static_cast<double>(pos);
  return (rank_sum - p * (p + 1.0) / 2.0) / (p * static_cast<double>(neg));
}

double roc_auc_pairwise(std::span<const double> scores, std::span<const int> labels) {
  std::size_t pos = 0, neg = 0;
  check_binary(scores, labels, pos, neg);
  double u = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] == 1) continue;
      u += scores[i] > scores[j] ? 1.0 : (scores[i] == scores[j] ? 0.5 : 0.0);
    }
  }
  return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

Matrix mia_features(const VflModel& model, const PartitionedDataset& data, int target) {
  const Matrix with = predict_all(model, data);
  const Matrix without = predict_all(model, blank_party(data, target));
  const Eigen::Index c = with.cols();
  Matrix out(with.rows(), 2 * c + 4);
  auto fill = [&](const Matrix& logits, Eigen::Index col, Eigen::Index stats_col) {
    const Matrix p = softmax(logits);
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
      std::vector<double> row(logits.row(r).data(), logits.row(r).data() + c);
      std::sort(row.begin(), row.end(), std::greater<>());
      for (Eigen::Index k = 0; k < c; ++k) out(r, col + k) = row[static_cast<std::size_t>(k)];
      double h = 0.0;
      for (Eigen::Index k = 0; k < c; ++k) {
        if (p(r, k) > 0.0) h -= p(r, k) * std::log(p(r, k));
      }
      out(r, stats_col) = row.front();
      out(r, stats_col + 1) = h;
    }
  };
  fill(with, 0, 2 * c);
  fill(without, c, 2 * c + 2);
  return out;
}

MiaResult mia_evaluate(const MiaDataset& ds, std::uint64_t seed) {
  const auto n = static_cast<std::size_t>(ds.features.rows());
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < n; ++i) (ds.membership[i] == 1 ? pos : neg).push_back(i);
  Rng rng(derive_seed(seed, "mia/split"));
  rng.shuffle(std::span<std::size_t>(pos));
  rng.shuffle(std::span<std::size_t>(neg));
  std::vector<std::size_t> train, test;
  for (const auto* cls : {&pos, &neg}) {
    const auto cut = static_cast<std::size_t>(std::llround(0.7 * static_cast<double>(cls->size())));
    train.insert(train.end(), cls->begin(), cls->begin() + static_cast<std::ptrdiff_t>(cut));
    test.insert(test.end(), cls->begin() + static_cast<std::ptrdiff_t>(cut), cls->end());
  }
  auto subset = [&](const std::vector<std::size_t>& rows) {
    MiaDataset out;
    out.features.resize(static_cast<Eigen::Index>(rows.size()), ds.features.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      out.features.row(static_cast<Eigen::Index>(i)) = ds.features.row(static_cast<Eigen::Index>(rows[i]));
      out.membership.push_back(ds.membership[rows[i]]);
    }
    return out;
  };
  const MiaDataset tr = subset(train);
  const MiaDataset te = subset(test);
  const auto te_pos = std::count(te.membership.begin(), te.membership.end(), 1);
  if (te_pos == 0 || te_pos == static_cast<std::ptrdiff_t>(te.membership.size())) {
    throw EvaluationError("attack evaluation fold has a single class");
  }
  const LogisticRegression clf = LogisticRegression::fit(tr, derive_seed(seed, "mia/init"));
  const Vector s = clf.score(te.features);
  std::span<const double> scores(s.data(), static_cast<std::size_t>(s.size()));
  std::size_t correct = 0;
  for (std::size_t i = 0; i < te.membership.size(); ++i) correct += (s[static_cast<Eigen::Index>(i)] >= 0.5) == (te.membership[i] == 1);
  return {roc_auc(scores, te.membership), static_cast<double>(correct) / static_cast<double>(te.membership.size())};
}

MiaResult mia_attack(const VflModel& model, const PartitionedDataset& members,
                     const PartitionedDataset& nonmembers, int target, std::uint64_t seed) {
  const std::size_t n = std::min(members.size(), nonmembers.size());
  if (n < 4) throw EvaluationError("membership inference needs at least 4 samples per pool");
  const Matrix fm = mia_features(model, members, target);
  const Matrix fn = mia_features(model, nonmembers, target);
  auto pick = [&](std::size_t pool, const char* label) {
    std::vector<std::size_t> idx(pool);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, label));
    rng.shuffle(std::span<std::size_t>(idx));
    idx.resize(n);
    return idx;
  };
  const auto im = pick(members.size(), "mia/members");
  const auto in = pick(nonmembers.size(), "mia/nonmembers");
  MiaDataset ds;
  ds.features.resize(static_cast<Eigen::Index>(2 * n), fm.cols());
  for (std::size_t i = 0; i < n; ++i) {
    ds.features.row(static_cast<Eigen::Index>(i)) = fm.row(static_cast<Eigen::Index>(im[i]));
    ds.features.row(static_cast<Eigen::Index>(n + i)) = fn.row(static_cast<Eigen::Index>(in[i]));
  }
  ds.membership.assign(n, 1);
  ds.membership.resize(2 * n, 0);
  return mia_evaluate(ds, seed);
}

}  // namespace splitvfu
