#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <vector>

#include "rnica/error.hpp"
#include "rnica/matrix.hpp"
#include "rnica/random.hpp"

namespace rnica {

enum class Activation { maxout2, abs, identity, leaky_relu };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::maxout2: return "maxout2";
    case Activation::abs: return "abs";
    case Activation::identity: return "identity";
    case Activation::leaky_relu: return "leaky_relu";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "maxout2") return Activation::maxout2;
  if (s == "abs") return Activation::abs;
  if (s == "identity") return Activation::identity;
  if (s == "leaky_relu") return Activation::leaky_relu;
  throw InputError("unknown activation '" + s + "'");
}

/// One affine map followed by an activation.
///
/// For maxout2 the weight stacks two affine groups of equal width: rows
/// [0, w) are the first group and rows [w, 2w) the second, and the unit
/// output is the larger of the two (ties go to the first group).
struct Layer {
  Activation activation = Activation::identity;
  double slope = 0.2;  // leaky_relu negative slope
  Matrix weight;       // (units * groups) x input_dim
  Vector bias;         // units * groups

  Eigen::Index input_dim() const { return weight.cols(); }
  Eigen::Index output_dim() const {
    return activation == Activation::maxout2 ? weight.rows() / 2 : weight.rows();
  }
};

/// Feedforward feature extractor h(x). Value type; copying copies parameters.
struct FeatureNetwork {
  std::vector<Layer> layers;

  Eigen::Index input_dim() const { return layers.empty() ? 0 : layers.front().input_dim(); }
  Eigen::Index output_dim() const { return layers.empty() ? 0 : layers.back().output_dim(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }

  /// Throws ShapeError/InputError if the layer list breaks a structural invariant.
  void validate() const {
    if (layers.empty()) throw ShapeError("network has no layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const Layer& l = layers[i];
      const std::string where = "layer " + std::to_string(i);
      if (l.bias.size() != l.weight.rows()) throw ShapeError(where + ": bias/weight row mismatch");
      if (l.activation == Activation::maxout2 && l.weight.rows() % 2 != 0)
        throw ShapeError(where + ": maxout2 needs an even number of rows");
      if ((l.activation == Activation::abs || l.activation == Activation::identity) &&
          i + 1 != layers.size())
        throw InputError(where + ": " + to_string(l.activation) + " is only allowed as the final activation");
      if (i > 0 && layers[i - 1].output_dim() != l.input_dim())
        throw ShapeError(where + ": input dim does not chain with previous layer");
    }
  }

  /// Hash of structure and parameter bits. Tapes remember it to detect stale replays.
  std::uint64_t fingerprint() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::uint64_t w) { h = (h ^ w) * 0x100000001b3ULL; h ^= h >> 29; };
    for (const auto& l : layers) {
      mix(static_cast<std::uint64_t>(l.activation));
      mix(static_cast<std::uint64_t>(l.weight.rows()));
      mix(static_cast<std::uint64_t>(l.weight.cols()));
      std::uint64_t bits;
      std::memcpy(&bits, &l.slope, sizeof bits);
      mix(bits);
      for (Eigen::Index k = 0; k < l.weight.size(); ++k) {
        std::memcpy(&bits, l.weight.data() + k, sizeof bits);
        mix(bits);
      }
      for (Eigen::Index k = 0; k < l.bias.size(); ++k) {
        std::memcpy(&bits, l.bias.data() + k, sizeof bits);
        mix(bits);
      }
    }
    return h;
  }
};

/// Activation record from forward(); sufficient for backward().
struct Tape {
  std::uint64_t fingerprint = 0;
  std::vector<Matrix> inputs;          // input to each layer
  std::vector<Matrix> preactivations;  // affine output of each layer
};

struct ForwardResult {
  Matrix output;
  Tape tape;
};

/// Gradients laid out like the network, plus the gradient w.r.t. the input batch.
struct GradientBundle {
  std::vector<Matrix> weight;
  std::vector<Vector> bias;
  Matrix input;

  double squared_norm() const {
    double s = 0.0;
    for (const auto& w : weight) s += w.squaredNorm();
    for (const auto& b : bias) s += b.squaredNorm();
    return s;
  }
};

namespace detail {

inline Matrix activate(const Layer& layer, const Matrix& z) {
  switch (layer.activation) {
    case Activation::identity:
      return z;
    case Activation::abs:
      return z.cwiseAbs();
    case Activation::leaky_relu:
      return z.unaryExpr([s = layer.slope](double v) { return v > 0.0 ? v : s * v; });
    case Activation::maxout2: {
      const Eigen::Index w = z.cols() / 2;
      return z.leftCols(w).cwiseMax(z.rightCols(w));
    }
  }
  return z;
}

}  // namespace detail

/// Batched forward pass. `batch` is N x input_dim; the output is N x output_dim.
inline ForwardResult forward(const FeatureNetwork& net, const Matrix& batch) {
  if (net.layers.empty()) throw ShapeError("forward: empty network");
  if (batch.cols() != net.input_dim())
    throw ShapeError("forward: batch has " + std::to_string(batch.cols()) +
                     " columns, network expects " + std::to_string(net.input_dim()));
  require_finite(batch, "forward");

  ForwardResult out;
  out.tape.fingerprint = net.fingerprint();
  out.tape.inputs.reserve(net.layers.size());
  out.tape.preactivations.reserve(net.layers.size());
  Matrix a = batch;
  for (const Layer& layer : net.layers) {
    Matrix z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    Matrix next = detail::activate(layer, z);
    out.tape.inputs.push_back(std::move(a));
    out.tape.preactivations.push_back(std::move(z));
    a = std::move(next);
  }
  out.output = std::move(a);
  return out;
}

/// Forward pass without recording a tape.
inline Matrix predict(const FeatureNetwork& net, const Matrix& batch) {
  if (batch.cols() != net.input_dim()) throw ShapeError("predict: input dimension mismatch");
  Matrix a = batch;
  for (const Layer& layer : net.layers) {
    Matrix z = a * layer.weight.transpose();
    z.rowwise() += layer.bias.transpose();
    a = detail::activate(layer, z);
  }
  return a;
}

/// Reverse-mode pass. `upstream` is dLoss/dOutput (N x output_dim).
///
/// Subgradient conventions: abs'(0) = 0, maxout ties route to the first group,
/// leaky_relu'(0) = slope.
inline GradientBundle backward(const FeatureNetwork& net, const Tape& tape, const Matrix& upstream) {
  if (tape.fingerprint != net.fingerprint() || tape.inputs.size() != net.layers.size())
    throw StateError("backward: tape was not produced by this network state");
  const Eigen::Index n = tape.inputs.front().rows();
  require_shape(upstream, n, net.output_dim(), "backward upstream");

  GradientBundle g;
  g.weight.resize(net.layers.size());
  g.bias.resize(net.layers.size());
  Matrix delta = upstream;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const Matrix& z = tape.preactivations[li];
    Matrix dz(z.rows(), z.cols());
    switch (layer.activation) {
      case Activation::identity:
        dz = delta;
        break;
      case Activation::abs:
        dz = delta.cwiseProduct(z.unaryExpr([](double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }));
        break;
      case Activation::leaky_relu:
        dz = delta.cwiseProduct(z.unaryExpr([s = layer.slope](double v) { return v > 0.0 ? 1.0 : s; }));
        break;
      case Activation::maxout2: {
        const Eigen::Index w = z.cols() / 2;
        for (Eigen::Index r = 0; r < z.rows(); ++r) {
          for (Eigen::Index c = 0; c < w; ++c) {
            const bool first = z(r, c) >= z(r, c + w);
            dz(r, c) = first ? delta(r, c) : 0.0;
            dz(r, c + w) = first ? 0.0 : delta(r, c);
          }
        }
        break;
      }
    }
    g.weight[li] = dz.transpose() * tape.inputs[li];
    g.bias[li] = dz.colwise().sum().transpose();
    delta = dz * layer.weight;
  }
  g.input = std::move(delta);
  return g;
}

/// Layer description used by make_network.
struct LayerSpec {
  Eigen::Index units = 0;
  Activation activation = Activation::maxout2;
  double slope = 0.2;
};

/// Glorot-uniform weights on [-a, a], a = sqrt(6 / (fan_in + fan_out)); zero biases.
inline FeatureNetwork make_network(Eigen::Index input_dim, const std::vector<LayerSpec>& specs,
                                   Xoshiro256& rng) {
  FeatureNetwork net;
  Eigen::Index fan_in = input_dim;
  for (const auto& s : specs) {
    const Eigen::Index groups = s.activation == Activation::maxout2 ? 2 : 1;
    Layer l;
    l.activation = s.activation;
    l.slope = s.slope;
    l.weight.resize(s.units * groups, fan_in);
    const double a = std::sqrt(6.0 / static_cast<double>(fan_in + s.units));
    for (Eigen::Index k = 0; k < l.weight.size(); ++k) l.weight.data()[k] = rng.uniform(-a, a);
    l.bias = Vector::Zero(s.units * groups);
    net.layers.push_back(std::move(l));
    fan_in = s.units;
  }
  net.validate();
  return net;
}

/// Mutable views over every parameter block, in a fixed order (per layer: weight, bias).
struct ParameterBlock {
  std::span<double> values;
  bool is_weight = true;
};

inline std::vector<ParameterBlock> parameter_blocks(FeatureNetwork& net) {
  std::vector<ParameterBlock> blocks;
  for (auto& l : net.layers) {
    blocks.push_back({{l.weight.data(), static_cast<std::size_t>(l.weight.size())}, true});
    blocks.push_back({{l.bias.data(), static_cast<std::size_t>(l.bias.size())}, false});
  }
  return blocks;
}

/// Gradient blocks in the same order as parameter_blocks().
inline std::vector<std::span<const double>> gradient_blocks(const GradientBundle& g) {
  std::vector<std::span<const double>> blocks;
  for (std::size_t i = 0; i < g.weight.size(); ++i) {
    blocks.push_back({g.weight[i].data(), static_cast<std::size_t>(g.weight[i].size())});
    blocks.push_back({g.bias[i].data(), static_cast<std::size_t>(g.bias[i].size())});
  }
  return blocks;
}

}  // namespace rnica
