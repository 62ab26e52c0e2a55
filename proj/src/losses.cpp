#include "splitvfu/losses.hpp"

#include <cmath>
#include <string>

#include "splitvfu/errors.hpp"

namespace splitvfu {

Matrix softmax(const Matrix& logits) {
  Matrix p(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const double m = logits.row(r).maxCoeff();
    p.row(r) = (logits.row(r).array() - m).exp();
    p.row(r) /= p.row(r).sum();
  }
  return p;
}

LossResult loss_softmax_ce(const Matrix& logits, std::span<const int> labels) {
  const Eigen::Index n = logits.rows();
  if (n == 0) throw ArgumentError("cross-entropy on an empty batch");
  if (static_cast<Eigen::Index>(labels.size()) != n) {
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " logit rows");
  }
  LossResult out{0.0, softmax(logits)};
  for (Eigen::Index r = 0; r < n; ++r) {
    const int y = labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= logits.cols()) {
      throw ArgumentError("label " + std::to_string(y) + " out of range for " +
                          std::to_string(logits.cols()) + " classes");
    }
    // log-sum-exp with the arg-max term split off, so log1p keeps precision
    // when the correct class dominates and the loss is far below 1 ulp of 1.
    Eigen::Index arg = 0;
    const double m = logits.row(r).maxCoeff(&arg);
    double rest = 0.0;
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
      if (c != arg) rest += std::exp(logits(r, c) - m);
    }
    out.value += (m - logits(r, y)) + std::log1p(rest);
    out.grad(r, y) -= 1.0;
  }
  out.value /= static_cast<double>(n);
  out.grad /= static_cast<double>(n);
  return out;
}

LossResult loss_mse(const Matrix& pred, const Matrix& target) {
  if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
    throw DimensionError("mse shape mismatch: " + std::to_string(pred.rows()) + "x" +
                         std::to_string(pred.cols()) + " vs " + std::to_string(target.rows()) + "x" +
                         std::to_string(target.cols()));
  }
  if (pred.rows() == 0) throw ArgumentError("mse on an empty batch");
  const double n = static_cast<double>(pred.rows());
  Matrix diff = pred - target;
  return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

}  // namespace splitvfu
