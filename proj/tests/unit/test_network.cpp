#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "splitvfu/errors.hpp"
#include "splitvfu/losses.hpp"
#include "splitvfu/network.hpp"
#include "support/finite_difference.hpp"

namespace splitvfu {
namespace {

using testing::as_matrix;
using testing::as_vector;
using testing::central_difference;
using testing::relative_error;

Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// Zero biases put dead ReLU units exactly on the kink, where a central
// difference straddles two slopes. Nudge them off it.
void jitter_biases(Network& net, Rng& rng) {
  Vector p = net.flatten();
  Eigen::Index offset = 0;
  for (const auto& l : net.layers()) {
    offset += l.weights.size();
    for (Eigen::Index i = 0; i < l.bias.size(); ++i) p[offset + i] = rng.uniform(0.05, 0.2);
    offset += l.bias.size();
  }
  net.unflatten(p);
}

// Scalar probe objective sum(forward(x) .* weights): its analytic gradient is
// backward(weights), which the finite differences check independently.
void expect_gradients_match(Network net, const Matrix& x, Rng& rng) {
  const Matrix probe = random_matrix(rng, x.rows(), net.output_size());
  net.forward(x);
  const BackwardResult analytic = net.backward(probe);

  const Vector params = net.flatten();
  auto loss_of_params = [&](const Vector& p) {
    Network copy = net;
    copy.unflatten(p);
    return copy.infer(x).cwiseProduct(probe).sum();
  };
  const Vector fd_params = central_difference(loss_of_params, params);
  EXPECT_LE(relative_error(analytic.parameter_grads.values(), fd_params), 1e-4);

  auto loss_of_input = [&](const Vector& v) {
    return net.infer(as_matrix(v, x.rows(), x.cols())).cwiseProduct(probe).sum();
  };
  const Vector fd_input = central_difference(loss_of_input, as_vector(x));
  EXPECT_LE(relative_error(as_vector(analytic.input_grad), fd_input), 1e-4);
}

TEST(Forward, IdentityDense) {
  auto l = dense_layer(2, 2);
  l.weights = Matrix::Identity(2, 2);
  Network net({l});
  Matrix x(1, 2);
  x << 1, 2;
  EXPECT_EQ(net.forward(x), x);
}

TEST(Forward, Relu) {
  Network net({relu_layer({2, 1, 1})});
  Matrix x(1, 2);
  x << -3, 5;
  Matrix expected(1, 2);
  expected << 0, 5;
  EXPECT_EQ(net.forward(x), expected);
}

TEST(Forward, ConvAllOnesGivesWindowSums) {
  auto l = conv3x3_layer({1, 4, 4}, 1, 0);
  l.weights.setOnes();
  Network net({l});
  Matrix x(1, 16);
  for (int i = 0; i < 16; ++i) x(0, i) = i + 1;
  // Hand-computed 3x3 window sums over the 4x4 grid 1..16.
  Matrix expected(1, 4);
  expected << 54, 63, 90, 99;
  EXPECT_EQ(net.forward(x), expected);
}

TEST(Forward, MaxPoolPicksWindowMaximum) {
  Network net({maxpool2x2_layer({1, 2, 4})});
  Matrix x(1, 8);
  x << 1, 5, 2, 0, 3, 4, 7, 6;
  Matrix expected(1, 2);
  expected << 5, 7;
  EXPECT_EQ(net.forward(x), expected);
}

TEST(Forward, ShapeMismatchThrows) {
  Network net({dense_layer(3, 2)});
  EXPECT_THROW(net.forward(Matrix::Zero(1, 4)), DimensionError);
}

TEST(Forward, PureAndCacheFree) {
  Rng rng(11);
  const std::vector<int> sizes{5, 7, 3};
  Network net = make_mlp(sizes);
  net.initialize(rng);
  const Matrix x = random_matrix(rng, 4, 5);
  const Matrix a = net.forward(x);
  const Matrix b = net.forward(x);
  const Matrix c = net.infer(x);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a, c);
}

TEST(Backward, DenseSumLossGivesOuterProduct) {
  auto l = dense_layer(3, 2);
  Rng rng(3);
  l.weights = random_matrix(rng, 3, 2);
  Network net({l});
  Matrix x(1, 3);
  x << 0.5, -1.0, 2.0;
  net.forward(x);
  const auto r = net.backward(Matrix::Ones(1, 2));
  const Matrix outer = x.transpose() * Matrix::Ones(1, 2);
  for (Eigen::Index i = 0; i < outer.size(); ++i) {
    EXPECT_DOUBLE_EQ(r.parameter_grads[i], outer.data()[i]);
  }
  EXPECT_DOUBLE_EQ(r.parameter_grads[6], 1.0);
  EXPECT_DOUBLE_EQ(r.parameter_grads[7], 1.0);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  Rng rng(5);
  const std::vector<int> channels{2, 3};
  Network net = make_conv_encoder({1, 8, 6}, channels, 1);
  net.initialize(rng);
  const Matrix x = random_matrix(rng, 2, net.input_size(), 0.0, 1.0);
  net.forward(x);
  const auto r = net.backward(Matrix::Zero(2, net.output_size()));
  EXPECT_EQ(r.parameter_grads.norm(), 0.0);
  EXPECT_EQ(r.input_grad.norm(), 0.0);
}

TEST(Backward, BeforeForwardIsStateError) {
  Network net({dense_layer(2, 2)});
  EXPECT_THROW(net.backward(Matrix::Zero(1, 2)), StateError);
}

TEST(Backward, UpstreamShapeChecked) {
  Network net({dense_layer(2, 3)});
  net.forward(Matrix::Zero(4, 2));
  EXPECT_THROW(net.backward(Matrix::Zero(4, 2)), DimensionError);
}

class GradientCheck : public ::testing::TestWithParam<int> {};

TEST_P(GradientCheck, Dense) {
  Rng rng(derive_seed(GetParam(), "dense"));
  auto l = dense_layer(4, 3);
  l.weights = random_matrix(rng, 4, 3);
  l.bias = random_matrix(rng, 3, 1);
  expect_gradients_match(Network({l}), random_matrix(rng, 3, 4), rng);
}

TEST_P(GradientCheck, ConvValidAndSame) {
  for (int pad : {0, 1}) {
    Rng rng(derive_seed(GetParam(), "conv" + std::to_string(pad)));
    auto l = conv3x3_layer({2, 5, 4}, 3, pad);
    l.weights = random_matrix(rng, l.weights.rows(), l.weights.cols());
    l.bias = random_matrix(rng, 3, 1);
    expect_gradients_match(Network({l}), random_matrix(rng, 2, 40), rng);
  }
}

TEST_P(GradientCheck, MaxPool) {
  Rng rng(derive_seed(GetParam(), "pool"));
  expect_gradients_match(Network({maxpool2x2_layer({2, 4, 5})}), random_matrix(rng, 3, 40), rng);
}

TEST_P(GradientCheck, Relu) {
  Rng rng(derive_seed(GetParam(), "relu"));
  expect_gradients_match(Network({relu_layer({6, 1, 1})}), random_matrix(rng, 3, 6), rng);
}

TEST_P(GradientCheck, TwoLayerMlp) {
  Rng rng(derive_seed(GetParam(), "mlp"));
  const std::vector<int> sizes{6, 8, 4};
  Network net = make_mlp(sizes);
  net.initialize(rng);
  jitter_biases(net, rng);
  expect_gradients_match(net, random_matrix(rng, 5, 6), rng);
}

TEST_P(GradientCheck, ConvEncoder) {
  Rng rng(derive_seed(GetParam(), "encoder"));
  const std::vector<int> channels{2, 3};
  Network net = make_conv_encoder({1, 8, 6}, channels, 1);
  net.initialize(rng);
  jitter_biases(net, rng);
  expect_gradients_match(net, random_matrix(rng, 2, net.input_size(), 0.0, 1.0), rng);
}

TEST_P(GradientCheck, SoftmaxCrossEntropy) {
  Rng rng(derive_seed(GetParam(), "ce"));
  const Matrix logits = random_matrix(rng, 4, 5, -3.0, 3.0);
  const std::vector<int> labels{0, 4, 2, 2};
  const auto r = loss_softmax_ce(logits, labels);
  auto f = [&](const Vector& v) { return loss_softmax_ce(as_matrix(v, 4, 5), labels).value; };
  EXPECT_LE(relative_error(as_vector(r.grad), central_difference(f, as_vector(logits))), 1e-4);
}

TEST_P(GradientCheck, Mse) {
  Rng rng(derive_seed(GetParam(), "mse"));
  const Matrix pred = random_matrix(rng, 3, 4);
  const Matrix target = random_matrix(rng, 3, 4);
  const auto r = loss_mse(pred, target);
  auto f = [&](const Vector& v) { return loss_mse(as_matrix(v, 3, 4), target).value; };
  EXPECT_LE(relative_error(as_vector(r.grad), central_difference(f, as_vector(pred))), 1e-4);
}

INSTANTIATE_TEST_SUITE_P(Seeds, GradientCheck, ::testing::Range(0, 20));

TEST(SoftmaxCe, UniformLogitsGiveLogC) {
  for (int c : {2, 3, 10}) {
    const std::vector<int> labels{0, c - 1};
    EXPECT_NEAR(loss_softmax_ce(Matrix::Zero(2, c), labels).value, std::log(c), 1e-15);
  }
}

TEST(SoftmaxCe, LossShrinksMonotonicallyWithMargin) {
  const std::vector<int> labels{1};
  double prev = INFINITY;
  for (double margin = 0.0; margin <= 40.0; margin += 2.0) {
    Matrix logits = Matrix::Zero(1, 3);
    logits(0, 1) = margin;
    const double loss = loss_softmax_ce(logits, labels).value;
    EXPECT_LT(loss, prev);
    EXPECT_GE(loss, 0.0);
    prev = loss;
  }
  EXPECT_LT(prev, 1e-16);
}

TEST(SoftmaxCe, GradientRowsSumToZero) {
  Rng rng(8);
  const Matrix logits = random_matrix(rng, 6, 7, -5, 5);
  const std::vector<int> labels{0, 1, 2, 3, 4, 5};
  const auto r = loss_softmax_ce(logits, labels);
  for (Eigen::Index i = 0; i < r.grad.rows(); ++i) EXPECT_NEAR(r.grad.row(i).sum(), 0.0, 1e-15);
}

TEST(SoftmaxCe, Errors) {
  const std::vector<int> none;
  EXPECT_THROW(loss_softmax_ce(Matrix::Zero(0, 3), none), ArgumentError);
  const std::vector<int> bad{3};
  EXPECT_THROW(loss_softmax_ce(Matrix::Zero(1, 3), bad), ArgumentError);
}

TEST(Mse, Examples) {
  Matrix a(1, 2);
  a << 1, 0;
  EXPECT_DOUBLE_EQ(loss_mse(a, a).value, 0.0);
  EXPECT_DOUBLE_EQ(loss_mse(a, Matrix::Zero(1, 2)).value, 1.0);
  EXPECT_THROW(loss_mse(a, Matrix::Zero(2, 2)), DimensionError);
}

TEST(Sgd, ZeroLearningRateKeepsParameters) {
  Rng rng(2);
  const std::vector<int> sizes{3, 4, 2};
  Network net = make_mlp(sizes);
  net.initialize(rng);
  GradientVector g(net.parameter_count());
  g.values().setOnes();
  EXPECT_EQ(sgd_step(net, g, 0.0).flatten(), net.flatten());
}

TEST(Sgd, ScalarStep) {
  auto l = dense_layer(1, 1);
  l.weights(0, 0) = 1.0;
  GradientVector g(2);
  g[0] = 2.0;
  const Network stepped = sgd_step(Network({l}), g, 0.1);
  EXPECT_DOUBLE_EQ(stepped.layers()[0].weights(0, 0), 0.8);
}

TEST(Sgd, TwoStepsEqualOneDoubledStep) {
  Rng rng(4);
  const std::vector<int> sizes{3, 2};
  Network net = make_mlp(sizes);
  net.initialize(rng);
  GradientVector g(net.parameter_count());
  g.values() = Vector::LinSpaced(g.size(), -1.0, 1.0);
  const Vector twice = sgd_step(sgd_step(net, g, 0.25), g, 0.25).flatten();
  const Vector once = sgd_step(net, g, 0.5).flatten();
  EXPECT_LE((twice - once).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Sgd, LengthMismatchThrows) {
  Network net({dense_layer(2, 2)});
  EXPECT_THROW(net.apply_sgd(GradientVector(3), 0.1), DimensionError);
}

TEST(ShapeChaining, ImageSliceEncoderReachesDeclaredWidth) {
  const std::vector<int> channels{32, 64};
  // 28 x 28 images split (10, 9, 9); same padding keeps both slice widths valid.
  for (int w : {10, 9}) {
    const Network enc = make_conv_encoder({1, 28, w}, channels, 1);
    EXPECT_EQ(enc.output_size(), 64 * 7 * 2);
    const std::vector<int> top{3 * 896, 128, 10};
    EXPECT_EQ(make_mlp(top).input_size(), 3 * enc.output_size());
  }
  // Valid padding collapses a 9-wide slice to nothing before the second pool.
  EXPECT_THROW(make_conv_encoder({1, 28, 9}, channels, 0), DimensionError);
}

}  // namespace
}  // namespace splitvfu
