#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "refeednet/layers.hpp"
#include "refeednet/rng.hpp"
#include "refeednet/types.hpp"

namespace refeednet {

/// Layered CNN split into a convolutional base (layers before
/// `base_boundary`) and a classifier head. The last layer is always Softmax.
struct MicroCnn {
  Shape input_shape;
  std::vector<Layer> layers;
  std::size_t base_boundary = 0;
  std::size_t class_count = kClassCount;
  std::uint64_t seed = 0;

  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers) out.push_back(l.spec);
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  friend bool operator==(const MicroCnn&, const MicroCnn&) = default;
};

struct Architecture {
  Shape input_shape;
  std::vector<LayerSpec> layers;
  std::size_t base_boundary = 0;
};

// Conv 3x3x8 -> ReLU -> MaxPool 2x2 -> Conv 3x3x16 -> ReLU -> MaxPool 2x2 ->
// Flatten -> Dense 4 -> Softmax on 32x32 grayscale.
inline Architecture default_architecture() {
  return {{32, 32, 1},
          {LayerSpec::conv2d(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv2d(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::flatten(), LayerSpec::dense(kClassCount), LayerSpec::softmax()},
          6};
}

// A deeper variant with a third convolution, used as the second backbone in
// the experiment groups.
inline Architecture deep_architecture() {
  return {{32, 32, 1},
          {LayerSpec::conv2d(8, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv2d(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2),
           LayerSpec::conv2d(16, 3, 1, 1), LayerSpec::relu(), LayerSpec::flatten(),
           LayerSpec::dense(kClassCount), LayerSpec::softmax()},
          8};
}

/// Builds a model with resolved shapes but zero parameters. Throws
/// InvalidConfig when shapes fail to chain or the output is not a
/// class_count-way softmax.
inline MicroCnn assemble(const Architecture& arch, std::uint64_t seed = 0) {
  if (arch.layers.empty() || arch.layers.back().kind != LayerKind::Softmax)
    throw Error(ErrorKind::InvalidConfig, "model must end with a softmax layer");
  if (arch.base_boundary >= arch.layers.size())
    throw Error(ErrorKind::InvalidConfig, "base_boundary must leave a non-empty head");
  MicroCnn m;
  m.input_shape = arch.input_shape;
  m.base_boundary = arch.base_boundary;
  m.seed = seed;
  Shape shape = arch.input_shape;
  for (std::size_t i = 0; i < arch.layers.size(); ++i) {
    if (i >= arch.base_boundary && arch.layers[i].frozen)
      throw Error(ErrorKind::InvalidConfig, "head layers cannot be frozen");
    m.layers.push_back(make_layer(arch.layers[i], shape));
    shape = m.layers.back().output_shape;
  }
  if (shape != Shape{kClassCount})
    throw Error(ErrorKind::InvalidConfig, "model output must be a " + std::to_string(kClassCount) +
                                              "-vector, got " + shape_string(shape));
  return m;
}

/// Builds and Glorot-initializes every parameterized layer from `seed`.
inline MicroCnn build_model(const Architecture& arch, std::uint64_t seed) {
  MicroCnn m = assemble(arch, seed);
  Rng rng(mix_seed(seed, 0x1417));
  for (auto& l : m.layers) init_glorot(l, rng);
  return m;
}

inline MicroCnn build_model(std::uint64_t seed) { return build_model(default_architecture(), seed); }

/// Fresh random classifier head (layers from base_boundary on).
inline MicroCnn reinit_head(MicroCnn m, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x4ead));
  for (std::size_t i = m.base_boundary; i < m.layers.size(); ++i) init_glorot(m.layers[i], rng);
  return m;
}

inline MicroCnn zero_head(MicroCnn m) {
  for (std::size_t i = m.base_boundary; i < m.layers.size(); ++i) {
    m.layers[i].weights.fill(0.0);
    m.layers[i].bias.fill(0.0);
  }
  return m;
}

inline MicroCnn freeze_base(MicroCnn m) {
  for (std::size_t i = 0; i < m.base_boundary; ++i)
    if (m.layers[i].spec.parameterized()) m.layers[i].spec.frozen = true;
  return m;
}

inline MicroCnn unfreeze_all(MicroCnn m) {
  for (auto& l : m.layers) l.spec.frozen = false;
  return m;
}

inline void check_input(const MicroCnn& m, const Tensor& image) {
  if (image.shape() != m.input_shape)
    throw Error(ErrorKind::InputShape, "image shape " + shape_string(image.shape()) +
                                           " does not match model input " + shape_string(m.input_shape));
}

/// Activations of every layer: trace[0] is the input, trace[k+1] the output of layer k.
inline std::vector<Tensor> forward_trace(const MicroCnn& m, const Tensor& image) {
  check_input(m, image);
  std::vector<Tensor> trace;
  trace.reserve(m.layers.size() + 1);
  trace.push_back(image);
  for (const auto& l : m.layers) trace.push_back(layer_forward(l, trace.back()));
  return trace;
}

/// Class probabilities for one image.
inline std::vector<double> forward(const MicroCnn& m, const Tensor& image) {
  check_input(m, image);
  Tensor x = image;
  for (const auto& l : m.layers) x = layer_forward(l, x);
  return x.values();
}

/// Index of the largest probability; ties go to the lowest class index.
inline int argmax(std::span<const double> probs) {
  int best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[static_cast<std::size_t>(best)]) best = static_cast<int>(i);
  return best;
}

inline TrafficClass predict_class(const MicroCnn& m, const Tensor& image) {
  return class_from_index(argmax(forward(m, image)));
}

/// One entry per layer. Parameterized layers always get tensors shaped like
/// their parameters; frozen layers' entries stay zero-filled.
struct Gradients {
  std::vector<LayerGrad> layers;
};

inline Gradients zero_gradients(const MicroCnn& m) {
  Gradients g;
  for (const auto& l : m.layers) {
    if (l.spec.parameterized())
      g.layers.push_back({Tensor(l.weights.shape()), Tensor(l.bias.shape())});
    else
      g.layers.push_back({});
  }
  return g;
}

struct LossAndGradients {
  double loss = 0.0;
  Gradients gradients;
};

namespace detail {

// Lowest layer index whose parameters (or anything below which) need a
// gradient. Back-propagation stops there.
inline std::size_t first_trainable(const MicroCnn& m) {
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].spec.parameterized() && !m.layers[i].spec.frozen) return i;
  return m.layers.size();
}

}  // namespace detail

/// Mean cross-entropy over the batch and its gradient for every non-frozen
/// parameter. Cross-entropy is computed from the logits feeding the final
/// softmax for numerical stability.
inline LossAndGradients loss_and_gradients(const MicroCnn& m, std::span<const LabeledImage> batch) {
  if (batch.empty()) throw Error(ErrorKind::EmptyBatch, "loss requested for an empty batch");
  LossAndGradients out{0.0, zero_gradients(m)};
  const std::size_t stop = detail::first_trainable(m);
  const std::size_t n_layers = m.layers.size();
  const double scale = 1.0 / static_cast<double>(batch.size());

  for (const auto& sample : batch) {
    const int y = index_of(sample.label);
    const auto trace = forward_trace(m, sample.pixels);
    const Tensor& logits = trace[n_layers - 1];
    const Tensor& probs = trace[n_layers];

    double mx = logits[0];
    for (std::size_t i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
    double z = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) z += std::exp(logits[i] - mx);
    out.loss += (std::log(z) + mx - logits[static_cast<std::size_t>(y)]) * scale;

    if (stop >= n_layers) continue;
    Tensor grad(logits.shape());
    for (std::size_t i = 0; i < grad.size(); ++i)
      grad[i] = (probs[i] - (static_cast<int>(i) == y ? 1.0 : 0.0)) * scale;

    for (std::size_t k = n_layers - 1; k-- > stop;) {
      const Layer& layer = m.layers[k];
      LayerGrad* lg = (layer.spec.parameterized() && !layer.spec.frozen) ? &out.gradients.layers[k] : nullptr;
      grad = layer_backward(layer, trace[k], trace[k + 1], grad, lg, k > stop);
    }
  }
  return out;
}

/// p := p - learning_rate * grad(p) for every non-frozen parameter.
inline void apply_sgd(MicroCnn& m, const Gradients& g, double learning_rate) {
  if (g.layers.size() != m.layers.size())
    throw Error(ErrorKind::GradientShape, "gradient layer count does not match model");
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    Layer& l = m.layers[k];
    if (!l.spec.parameterized()) continue;
    const LayerGrad& lg = g.layers[k];
    if (lg.weights.shape() != l.weights.shape() || lg.bias.shape() != l.bias.shape())
      throw Error(ErrorKind::GradientShape, "gradient shape mismatch at layer " + std::to_string(k));
  }
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    Layer& l = m.layers[k];
    if (!l.spec.parameterized() || l.spec.frozen) continue;
    const LayerGrad& lg = g.layers[k];
    for (std::size_t i = 0; i < l.weights.size(); ++i) l.weights[i] -= learning_rate * lg.weights[i];
    for (std::size_t i = 0; i < l.bias.size(); ++i) l.bias[i] -= learning_rate * lg.bias[i];
  }
}

inline MicroCnn sgd_step(MicroCnn m, const Gradients& g, double learning_rate) {
  apply_sgd(m, g, learning_rate);
  return m;
}

}  // namespace refeednet
