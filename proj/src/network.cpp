#include "splitvfu/network.hpp"

#include <cmath>

#include "splitvfu/errors.hpp"

namespace splitvfu {

namespace {

using Index = Eigen::Index;

void forward_dense(const LayerParams& l, const Matrix& x, Matrix& y) {
  y.noalias() = x * l.weights;
  y.rowwise() += l.bias.transpose();
}

// Fills the im2col buffer: column b * P + p holds the 3x3xCin window that
// produces output position p of sample b.
void im2col(const LayerParams& l, const Matrix& x, Eigen::MatrixXd& cols) {
  const auto [cin, h, w] = l.in_shape;
  const int ho = l.out_shape.height;
  const int wo = l.out_shape.width;
  const int pad = l.padding;
  const Index positions = static_cast<Index>(ho) * wo;
  const Index k = static_cast<Index>(cin) * 9;
  cols.resize(k, x.rows() * positions);
  for (Index b = 0; b < x.rows(); ++b) {
    const double* in = x.row(b).data();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        double* col = cols.col(b * positions + oy * wo + ox).data();
        for (int c = 0; c < cin; ++c) {
          const double* plane = in + static_cast<Index>(c) * h * w;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - pad;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - pad;
              const bool inside = iy >= 0 && iy < h && ix >= 0 && ix < w;
              col[c * 9 + ky * 3 + kx] = inside ? plane[iy * w + ix] : 0.0;
            }
          }
        }
      }
    }
  }
}

void col2im(const LayerParams& l, const Eigen::MatrixXd& dcols, Matrix& dx) {
  const auto [cin, h, w] = l.in_shape;
  const int ho = l.out_shape.height;
  const int wo = l.out_shape.width;
  const int pad = l.padding;
  const Index positions = static_cast<Index>(ho) * wo;
  for (Index b = 0; b < dx.rows(); ++b) {
    double* out = dx.row(b).data();
    for (int oy = 0; oy < ho; ++oy) {
      for (int ox = 0; ox < wo; ++ox) {
        const double* col = dcols.col(b * positions + oy * wo + ox).data();
        for (int c = 0; c < cin; ++c) {
          double* plane = out + static_cast<Index>(c) * h * w;
          for (int ky = 0; ky < 3; ++ky) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < 3; ++kx) {
              const int ix = ox + kx - pad;
              if (ix < 0 || ix >= w) continue;
              plane[iy * w + ix] += col[c * 9 + ky * 3 + kx];
            }
          }
        }
      }
    }
  }
}

void forward_conv(const LayerParams& l, const Matrix& x, Eigen::MatrixXd& cols, Matrix& y) {
  im2col(l, x, cols);
  const Index positions = static_cast<Index>(l.out_shape.height) * l.out_shape.width;
  const int cout = l.out_shape.channels;
  Eigen::MatrixXd res = l.weights * cols;  // cout x (B * P)
  y.resize(x.rows(), l.out_shape.size());
  for (Index b = 0; b < x.rows(); ++b) {
    for (int co = 0; co < cout; ++co) {
      Eigen::Map<Vector>(y.row(b).data() + co * positions, positions) =
          res.row(co).segment(b * positions, positions).transpose().array() + l.bias[co];
    }
  }
}

void forward_pool(const LayerParams& l, const Matrix& x, std::vector<Index>* argmax, Matrix& y) {
  const auto [c, h, w] = l.in_shape;
  const int ho = l.out_shape.height;
  const int wo = l.out_shape.width;
  const Index out_size = l.out_shape.size();
  y.resize(x.rows(), out_size);
  if (argmax) argmax->assign(static_cast<std::size_t>(x.rows() * out_size), 0);
  for (Index b = 0; b < x.rows(); ++b) {
    const double* in = x.row(b).data();
    for (int ch = 0; ch < c; ++ch) {
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          Index best = static_cast<Index>(ch) * h * w + (2 * oy) * w + 2 * ox;
          for (int dy = 0; dy < 2; ++dy) {
            for (int dx = 0; dx < 2; ++dx) {
              const Index idx = static_cast<Index>(ch) * h * w + (2 * oy + dy) * w + 2 * ox + dx;
              if (in[idx] > in[best]) best = idx;
            }
          }
          const Index o = static_cast<Index>(ch) * ho * wo + oy * wo + ox;
          y(b, o) = in[best];
          if (argmax) (*argmax)[static_cast<std::size_t>(b * out_size + o)] = best;
        }
      }
    }
  }
}

void check_finite_init(const LayerParams& l) {
  if (!l.weights.allFinite() || !l.bias.allFinite()) {
    throw ArgumentError("layer " + to_string(l.kind) + " has non-finite parameters");
  }
}

}  // namespace

std::string to_string(const Shape& s) {
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.height) + "," +
         std::to_string(s.width) + ")";
}

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense:
      return "dense";
    case LayerKind::kConv3x3:
      return "conv3x3";
    case LayerKind::kMaxPool2x2:
      return "maxpool2x2";
    case LayerKind::kReLU:
      return "relu";
  }
  return "unknown";
}

LayerKind layer_kind_from_string(const std::string& name) {
  if (name == "dense") return LayerKind::kDense;
  if (name == "conv3x3") return LayerKind::kConv3x3;
  if (name == "maxpool2x2") return LayerKind::kMaxPool2x2;
  if (name == "relu") return LayerKind::kReLU;
  throw ArgumentError("unknown layer kind '" + name + "'");
}

LayerParams dense_layer(int in_dim, int out_dim) {
  if (in_dim <= 0 || out_dim <= 0) throw ArgumentError("dense layer dimensions must be positive");
  LayerParams l;
  l.kind = LayerKind::kDense;
  l.weights = Matrix::Zero(in_dim, out_dim);
  l.bias = Vector::Zero(out_dim);
  l.in_shape = {in_dim, 1, 1};
  l.out_shape = {out_dim, 1, 1};
  return l;
}

LayerParams conv3x3_layer(Shape in, int out_channels, int padding) {
  if (padding < 0 || padding > 1) throw ArgumentError("conv3x3 padding must be 0 or 1");
  const int ho = in.height + 2 * padding - 2;
  const int wo = in.width + 2 * padding - 2;
  if (in.channels <= 0 || out_channels <= 0 || ho <= 0 || wo <= 0) {
    throw DimensionError("conv3x3 cannot produce an output from input " + to_string(in) +
                         " with padding " + std::to_string(padding));
  }
  LayerParams l;
  l.kind = LayerKind::kConv3x3;
  l.weights = Matrix::Zero(out_channels, in.channels * 9);
  l.bias = Vector::Zero(out_channels);
  l.in_shape = in;
  l.out_shape = {out_channels, ho, wo};
  l.padding = padding;
  return l;
}

LayerParams maxpool2x2_layer(Shape in) {
  if (in.height / 2 <= 0 || in.width / 2 <= 0) {
    throw DimensionError("maxpool2x2 needs at least a 2x2 map, got " + to_string(in));
  }
  LayerParams l;
  l.kind = LayerKind::kMaxPool2x2;
  l.in_shape = in;
  l.out_shape = {in.channels, in.height / 2, in.width / 2};
  return l;
}

LayerParams relu_layer(Shape in) {
  LayerParams l;
  l.kind = LayerKind::kReLU;
  l.in_shape = in;
  l.out_shape = in;
  return l;
}

Network::Network(std::vector<LayerParams> layers) : layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    if (i > 0 && layers_[i - 1].out_shape.size() != l.in_shape.size()) {
      throw DimensionError("layer " + std::to_string(i) + " (" + to_string(l.kind) +
                           ") expects input " + to_string(l.in_shape) + " but previous layer emits " +
                           to_string(layers_[i - 1].out_shape));
    }
    switch (l.kind) {
      case LayerKind::kDense:
        if (l.weights.rows() != l.in_shape.size() || l.weights.cols() != l.out_shape.size() ||
            l.bias.size() != l.out_shape.size()) {
          throw DimensionError("dense layer " + std::to_string(i) + " weight shape mismatch");
        }
        break;
      case LayerKind::kConv3x3:
        if (l.weights.rows() != l.out_shape.channels || l.weights.cols() != l.in_shape.channels * 9 ||
            l.bias.size() != l.out_shape.channels) {
          throw DimensionError("conv3x3 layer " + std::to_string(i) + " weight shape mismatch");
        }
        break;
      case LayerKind::kMaxPool2x2:
      case LayerKind::kReLU:
        if (l.weights.size() != 0 || l.bias.size() != 0) {
          throw DimensionError("parameter-free layer " + std::to_string(i) + " carries weights");
        }
        break;
    }
    check_finite_init(l);
  }
}

Shape Network::input_shape() const {
  if (layers_.empty()) throw StateError("empty network has no input shape");
  return layers_.front().in_shape;
}

Shape Network::output_shape() const {
  if (layers_.empty()) throw StateError("empty network has no output shape");
  return layers_.back().out_shape;
}

Eigen::Index Network::parameter_count() const {
  Index n = 0;
  for (const auto& l : layers_) n += l.parameter_count();
  return n;
}

void Network::initialize(Rng& rng) {
  for (auto& l : layers_) {
    Index fan_in = 0;
    Index fan_out = 0;
    if (l.kind == LayerKind::kDense) {
      fan_in = l.weights.rows();
      fan_out = l.weights.cols();
    } else if (l.kind == LayerKind::kConv3x3) {
      fan_in = static_cast<Index>(l.in_shape.channels) * 9;
      fan_out = static_cast<Index>(l.out_shape.channels) * 9;
    } else {
      continue;
    }
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    for (Index r = 0; r < l.weights.rows(); ++r) {
      for (Index c = 0; c < l.weights.cols(); ++c) l.weights(r, c) = rng.uniform(-limit, limit);
    }
    l.bias.setZero();
  }
  cache_.reset();
}

Matrix Network::run(const Matrix& batch, Cache* cache) const {
  if (layers_.empty()) throw StateError("forward on an empty network");
  if (batch.cols() != input_size()) {
    throw DimensionError("batch has " + std::to_string(batch.cols()) + " columns, network expects " +
                         std::to_string(input_size()));
  }
  if (cache) {
    cache->batch = batch.rows();
    cache->layers.assign(layers_.size(), LayerCache{});
  }
  Matrix x = batch;
  Matrix y;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& l = layers_[i];
    switch (l.kind) {
      case LayerKind::kDense:
        forward_dense(l, x, y);
        if (cache) cache->layers[i].input = std::move(x);
        break;
      case LayerKind::kConv3x3: {
        Eigen::MatrixXd cols;
        forward_conv(l, x, cols, y);
        if (cache) cache->layers[i].cols = std::move(cols);
        break;
      }
      case LayerKind::kMaxPool2x2:
        forward_pool(l, x, cache ? &cache->layers[i].argmax : nullptr, y);
        break;
      case LayerKind::kReLU:
        y = x.cwiseMax(0.0);
        if (cache) cache->layers[i].input = std::move(x);
        break;
    }
    x = std::move(y);
  }
  return x;
}

Matrix Network::forward(const Matrix& batch) {
  Cache cache;
  Matrix out = run(batch, &cache);
  cache_ = std::move(cache);
  return out;
}

Matrix Network::infer(const Matrix& batch) const { return run(batch, nullptr); }

BackwardResult Network::backward(const Matrix& upstream_grad, bool need_input_grad) const {
  if (!cache_) throw StateError("backward called before forward");
  const Index batch = cache_->batch;
  if (upstream_grad.rows() != batch || upstream_grad.cols() != output_size()) {
    throw DimensionError("upstream gradient is " + std::to_string(upstream_grad.rows()) + "x" +
                         std::to_string(upstream_grad.cols()) + ", expected " + std::to_string(batch) +
                         "x" + std::to_string(output_size()));
  }
  BackwardResult result{GradientVector(parameter_count()), Matrix()};
  Vector& flat = result.parameter_grads.values();

  // Offsets of each layer's parameter block in the flat vector.
  std::vector<Index> offsets(layers_.size(), 0);
  for (std::size_t i = 1; i < layers_.size(); ++i) {
    offsets[i] = offsets[i - 1] + layers_[i - 1].parameter_count();
  }

  Matrix dy = upstream_grad;
  Matrix dx;
  for (std::size_t ri = layers_.size(); ri-- > 0;) {
    const auto& l = layers_[ri];
    const auto& c = cache_->layers[ri];
    const bool want_dx = need_input_grad || ri > 0;
    switch (l.kind) {
      case LayerKind::kDense: {
        Eigen::Map<Matrix> dw(flat.data() + offsets[ri], l.weights.rows(), l.weights.cols());
        dw.noalias() = c.input.transpose() * dy;
        flat.segment(offsets[ri] + l.weights.size(), l.bias.size()) = dy.colwise().sum().transpose();
        if (want_dx) dx.noalias() = dy * l.weights.transpose();
        break;
      }
      case LayerKind::kConv3x3: {
        const Index positions = static_cast<Index>(l.out_shape.height) * l.out_shape.width;
        const int cout = l.out_shape.channels;
        Eigen::MatrixXd dres(cout, batch * positions);
        for (Index b = 0; b < batch; ++b) {
          for (int co = 0; co < cout; ++co) {
            dres.row(co).segment(b * positions, positions) =
                dy.row(b).segment(co * positions, positions);
          }
        }
        Eigen::Map<Matrix> dw(flat.data() + offsets[ri], l.weights.rows(), l.weights.cols());
        dw.noalias() = dres * c.cols.transpose();
        flat.segment(offsets[ri] + l.weights.size(), l.bias.size()) = dres.rowwise().sum();
        if (want_dx) {
          Eigen::MatrixXd dcols = l.weights.transpose() * dres;
          dx = Matrix::Zero(batch, l.in_shape.size());
          col2im(l, dcols, dx);
        }
        break;
      }
      case LayerKind::kMaxPool2x2: {
        if (want_dx) {
          const Index out_size = l.out_shape.size();
          dx = Matrix::Zero(batch, l.in_shape.size());
          for (Index b = 0; b < batch; ++b) {
            for (Index o = 0; o < out_size; ++o) {
              dx(b, c.argmax[static_cast<std::size_t>(b * out_size + o)]) += dy(b, o);
            }
          }
        }
        break;
      }
      case LayerKind::kReLU:
        if (want_dx) dx = (c.input.array() > 0.0).select(dy, 0.0);
        break;
    }
    if (want_dx) dy = std::move(dx);
  }
  if (need_input_grad) result.input_grad = std::move(dy);
  return result;
}

Vector Network::flatten() const {
  Vector out(parameter_count());
  Index offset = 0;
  for (const auto& l : layers_) {
    out.segment(offset, l.weights.size()) =
        Eigen::Map<const Vector>(l.weights.data(), l.weights.size());
    offset += l.weights.size();
    out.segment(offset, l.bias.size()) = l.bias;
    offset += l.bias.size();
  }
  return out;
}

void Network::unflatten(const Vector& params) {
  if (params.size() != parameter_count()) {
    throw DimensionError("parameter vector has " + std::to_string(params.size()) +
                         " entries, network has " + std::to_string(parameter_count()));
  }
  Index offset = 0;
  for (auto& l : layers_) {
    Eigen::Map<Vector>(l.weights.data(), l.weights.size()) = params.segment(offset, l.weights.size());
    offset += l.weights.size();
    l.bias = params.segment(offset, l.bias.size());
    offset += l.bias.size();
  }
}

void Network::apply_sgd(const GradientVector& grads, double lr) {
  if (grads.size() != parameter_count()) {
    throw DimensionError("gradient has " + std::to_string(grads.size()) + " entries, network has " +
                         std::to_string(parameter_count()));
  }
  Index offset = 0;
  for (auto& l : layers_) {
    Eigen::Map<Vector>(l.weights.data(), l.weights.size()) -=
        lr * grads.values().segment(offset, l.weights.size());
    offset += l.weights.size();
    l.bias -= lr * grads.values().segment(offset, l.bias.size());
    offset += l.bias.size();
  }
}

Network sgd_step(Network net, const GradientVector& grads, double lr) {
  net.apply_sgd(grads, lr);
  return net;
}

Network make_mlp(std::span<const int> sizes, bool relu_output) {
  if (sizes.size() < 2) throw ArgumentError("an MLP needs at least input and output sizes");
  std::vector<LayerParams> layers;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    layers.push_back(dense_layer(sizes[i], sizes[i + 1]));
    const bool last = i + 2 == sizes.size();
    if (!last || relu_output) layers.push_back(relu_layer({sizes[i + 1], 1, 1}));
  }
  return Network(std::move(layers));
}

Network make_conv_encoder(Shape input, std::span<const int> channels, int padding) {
  if (channels.empty()) throw ArgumentError("conv encoder needs at least one conv block");
  std::vector<LayerParams> layers;
  Shape s = input;
  for (int ch : channels) {
    layers.push_back(conv3x3_layer(s, ch, padding));
    s = layers.back().out_shape;
    layers.push_back(relu_layer(s));
    layers.push_back(maxpool2x2_layer(s));
    s = layers.back().out_shape;
  }
  return Network(std::move(layers));
}

}  // namespace splitvfu
