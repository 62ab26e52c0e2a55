#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "splitvfu/matrix.hpp"
#include "splitvfu/rng.hpp"

namespace splitvfu {

// Activation shape of one sample. Dense activations use {features, 1, 1};
// image activations are stored channel-major (c, y, x) in a batch row.
struct Shape {
  int channels = 1;
  int height = 1;
  int width = 1;

  Eigen::Index size() const {
    return static_cast<Eigen::Index>(channels) * height * width;
  }
  friend bool operator==(const Shape&, const Shape&) = default;
};

std::string to_string(const Shape& s);

enum class LayerKind { kDense, kConv3x3, kMaxPool2x2, kReLU };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& name);

struct LayerParams {
  LayerKind kind = LayerKind::kReLU;
  // dense: in_dim x out_dim. conv3x3: out_channels x (in_channels * 9).
  Matrix weights;
  Vector bias;
  Shape in_shape;
  Shape out_shape;
  int padding = 0;  // conv3x3 only; stride is always 1

  Eigen::Index parameter_count() const { return weights.size() + bias.size(); }
};

LayerParams dense_layer(int in_dim, int out_dim);
LayerParams conv3x3_layer(Shape in, int out_channels, int padding);
// 2x2 window, stride 2, floor on odd sizes.
LayerParams maxpool2x2_layer(Shape in);
LayerParams relu_layer(Shape in);

struct BackwardResult {
  GradientVector parameter_grads;
  Matrix input_grad;  // empty when not requested
};

// A feedforward stack with exact manual backpropagation. forward() caches the
// activations of its last call; backward() reads them without consuming, so
// several upstream gradients can be pushed through the same forward pass.
class Network {
 public:
  Network() = default;
  explicit Network(std::vector<LayerParams> layers);

  const std::vector<LayerParams>& layers() const { return layers_; }
  Shape input_shape() const;
  Shape output_shape() const;
  Eigen::Index input_size() const { return input_shape().size(); }
  Eigen::Index output_size() const { return output_shape().size(); }
  Eigen::Index parameter_count() const;
  bool empty() const { return layers_.empty(); }

  // Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
  void initialize(Rng& rng);

  Matrix forward(const Matrix& batch);
  // Same arithmetic as forward() but leaves the cache untouched.
  Matrix infer(const Matrix& batch) const;
  BackwardResult backward(const Matrix& upstream_grad, bool need_input_grad = true) const;
  bool has_cache() const { return cache_.has_value(); }
  void clear_cache() { cache_.reset(); }

  Vector flatten() const;
  void unflatten(const Vector& params);
  void apply_sgd(const GradientVector& grads, double lr);

 private:
  struct LayerCache {
    Matrix input;                        // dense, relu
    Eigen::MatrixXd cols;                // conv3x3 im2col buffer
    std::vector<Eigen::Index> argmax;    // maxpool2x2
  };
  struct Cache {
    Eigen::Index batch = 0;
    std::vector<LayerCache> layers;
  };

  Matrix run(const Matrix& batch, Cache* cache) const;

  std::vector<LayerParams> layers_;
  std::optional<Cache> cache_;
};

Network sgd_step(Network net, const GradientVector& grads, double lr);

// Builders for the architectures used in experiments.

// Dense layers with ReLU between them; the output layer is linear unless
// relu_output is set.
Network make_mlp(std::span<const int> sizes, bool relu_output = false);

// [conv3x3 -> relu -> maxpool2x2] per entry of `channels`; the output is the
// flattened channel-major feature map.
Network make_conv_encoder(Shape input, std::span<const int> channels, int padding);

}  // namespace splitvfu
