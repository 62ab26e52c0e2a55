#pragma once

#include <span>

#include "splitvfu/matrix.hpp"

namespace splitvfu {

struct LossResult {
  double value = 0.0;
  Matrix grad;  // d(value) / d(input), same shape as the input
};

// Mean softmax cross-entropy over the batch.
LossResult loss_softmax_ce(const Matrix& logits, std::span<const int> labels);

// Mean over the batch of the per-sample squared error summed over features;
// the gradient is 2 (pred - target) / batch_size.
LossResult loss_mse(const Matrix& pred, const Matrix& target);

// Row-wise numerically stable softmax.
Matrix softmax(const Matrix& logits);

}  // namespace splitvfu
