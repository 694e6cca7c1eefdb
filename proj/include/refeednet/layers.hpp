#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <string>

#include "refeednet/error.hpp"
#include "refeednet/rng.hpp"
#include "refeednet/tensor.hpp"

namespace refeednet {

enum class LayerKind { Conv2D, ReLU, MaxPool2D, Flatten, Dense, Softmax };

inline const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv2D: return "conv2d";
    case LayerKind::ReLU: return "relu";
    case LayerKind::MaxPool2D: return "maxpool2d";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::Dense: return "dense";
    case LayerKind::Softmax: return "softmax";
  }
  return "unknown";
}

inline LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv2D, LayerKind::ReLU, LayerKind::MaxPool2D, LayerKind::Flatten,
                      LayerKind::Dense, LayerKind::Softmax})
    if (s == to_string(k)) return k;
  throw Error(ErrorKind::InvalidConfig, "unknown layer kind '" + s + "'");
}

struct LayerSpec {
  LayerKind kind = LayerKind::ReLU;
  // Conv2D
  std::size_t out_channels = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t padding = 0;
  // Conv2D and MaxPool2D
  std::size_t stride = 1;
  // MaxPool2D
  std::size_t window = 0;
  // Dense
  std::size_t out_features = 0;
  bool frozen = false;

  static LayerSpec conv2d(std::size_t out_channels, std::size_t kernel, std::size_t stride = 1,
                          std::size_t padding = 0) {
    LayerSpec s;
    s.kind = LayerKind::Conv2D;
    s.out_channels = out_channels;
    s.kernel_h = s.kernel_w = kernel;
    s.stride = stride;
    s.padding = padding;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec maxpool(std::size_t window, std::size_t stride) {
    LayerSpec s;
    s.kind = LayerKind::MaxPool2D;
    s.window = window;
    s.stride = stride;
    return s;
  }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
  }
  static LayerSpec dense(std::size_t out_features) {
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.out_features = out_features;
    return s;
  }
  static LayerSpec softmax() {
    LayerSpec s;
    s.kind = LayerKind::Softmax;
    return s;
  }

  bool parameterized() const { return kind == LayerKind::Conv2D || kind == LayerKind::Dense; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

/// A layer with resolved shapes and its parameters. Conv2D weights are laid
/// out [out_channels, kernel_h, kernel_w, in_channels]; Dense weights are
/// [out_features, in_features].
struct Layer {
  LayerSpec spec;
  Shape input_shape;
  Shape output_shape;
  Tensor weights;
  Tensor bias;

  friend bool operator==(const Layer&, const Layer&) = default;
};

struct LayerGrad {
  Tensor weights;
  Tensor bias;
};

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw Error(ErrorKind::InvalidConfig, msg);
}

}  // namespace detail

/// Validates `spec` against `input_shape` and returns the layer with zeroed
/// parameters and the resolved output shape.
inline Layer make_layer(const LayerSpec& spec, const Shape& input_shape) {
  using detail::require;
  Layer layer{spec, input_shape, {}, {}, {}};
  require(!spec.frozen || spec.parameterized(), std::string("layer kind ") + to_string(spec.kind) +
                                                    " has no parameters and cannot be frozen");
  switch (spec.kind) {
    case LayerKind::Conv2D: {
      require(input_shape.size() == 3, "conv2d expects an HxWxC input");
      require(spec.out_channels >= 1 && spec.kernel_h >= 1 && spec.kernel_w >= 1 && spec.stride >= 1,
              "conv2d needs out_channels, kernel and stride >= 1");
      const std::size_t h = input_shape[0] + 2 * spec.padding;
      const std::size_t w = input_shape[1] + 2 * spec.padding;
      require(h >= spec.kernel_h && w >= spec.kernel_w, "conv2d kernel larger than padded input");
      layer.output_shape = {(h - spec.kernel_h) / spec.stride + 1, (w - spec.kernel_w) / spec.stride + 1,
                            spec.out_channels};
      layer.weights = Tensor({spec.out_channels, spec.kernel_h, spec.kernel_w, input_shape[2]});
      layer.bias = Tensor({spec.out_channels});
      break;
    }
    case LayerKind::MaxPool2D: {
      require(input_shape.size() == 3, "maxpool2d expects an HxWxC input");
      require(spec.window >= 1 && spec.stride >= 1, "maxpool2d needs window and stride >= 1");
      require(input_shape[0] >= spec.window && input_shape[1] >= spec.window,
              "maxpool2d window larger than input");
      layer.output_shape = {(input_shape[0] - spec.window) / spec.stride + 1,
                            (input_shape[1] - spec.window) / spec.stride + 1, input_shape[2]};
      break;
    }
    case LayerKind::Flatten:
      layer.output_shape = {element_count(input_shape)};
      break;
    case LayerKind::Dense:
      require(input_shape.size() == 1, "dense expects a flat input");
      require(spec.out_features >= 1, "dense needs out_features >= 1");
      layer.output_shape = {spec.out_features};
      layer.weights = Tensor({spec.out_features, input_shape[0]});
      layer.bias = Tensor({spec.out_features});
      break;
    case LayerKind::Softmax:
      require(input_shape.size() == 1, "softmax expects a flat input");
      layer.output_shape = input_shape;
      break;
    case LayerKind::ReLU:
      layer.output_shape = input_shape;
      break;
  }
  return layer;
}

/// Glorot-uniform weights, zero bias.
inline void init_glorot(Layer& layer, Rng& rng) {
  if (!layer.spec.parameterized()) return;
  std::size_t fan_in = 0, fan_out = 0;
  if (layer.spec.kind == LayerKind::Conv2D) {
    const std::size_t k = layer.spec.kernel_h * layer.spec.kernel_w;
    fan_in = k * layer.input_shape[2];
    fan_out = k * layer.spec.out_channels;
  } else {
    fan_in = layer.input_shape[0];
    fan_out = layer.spec.out_features;
  }
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& w : layer.weights.data()) w = rng.uniform(-limit, limit);
  layer.bias.fill(0.0);
}

inline void softmax_inplace(std::span<double> v) {
  const double m = *std::max_element(v.begin(), v.end());
  double s = 0.0;
  for (double& x : v) {
    x = std::exp(x - m);
    s += x;
  }
  for (double& x : v) x /= s;
}

inline Tensor layer_forward(const Layer& layer, const Tensor& in) {
  const LayerSpec& s = layer.spec;
  Tensor out(layer.output_shape);
  switch (s.kind) {
    case LayerKind::Conv2D: {
      const std::size_t ih = in.shape()[0], iw = in.shape()[1], ic = in.shape()[2];
      const std::size_t oh = out.shape()[0], ow = out.shape()[1], oc = out.shape()[2];
      const auto pad = static_cast<std::ptrdiff_t>(s.padding);
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t o = 0; o < oc; ++o) {
            double acc = layer.bias[o];
            const double* wk = &layer.weights[o * s.kernel_h * s.kernel_w * ic];
            for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
              const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - pad;
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(ih)) continue;
              for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - pad;
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(iw)) continue;
                const double* px = &in[(static_cast<std::size_t>(y) * iw + static_cast<std::size_t>(x)) * ic];
                const double* pw = wk + (ky * s.kernel_w + kx) * ic;
                for (std::size_t c = 0; c < ic; ++c) acc += pw[c] * px[c];
              }
            }
            out.at(oy, ox, o) = acc;
          }
      break;
    }
    case LayerKind::ReLU:
      for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      break;
    case LayerKind::MaxPool2D: {
      const std::size_t oh = out.shape()[0], ow = out.shape()[1], ch = out.shape()[2];
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t c = 0; c < ch; ++c) {
            double m = -std::numeric_limits<double>::infinity();
            for (std::size_t ky = 0; ky < s.window; ++ky)
              for (std::size_t kx = 0; kx < s.window; ++kx)
                m = std::max(m, in.at(oy * s.stride + ky, ox * s.stride + kx, c));
            out.at(oy, ox, c) = m;
          }
      break;
    }
    case LayerKind::Flatten:
      out.values() = in.values();
      break;
    case LayerKind::Dense: {
      const std::size_t n_in = in.size();
      for (std::size_t o = 0; o < s.out_features; ++o) {
        double acc = layer.bias[o];
        const double* w = &layer.weights[o * n_in];
        for (std::size_t i = 0; i < n_in; ++i) acc += w[i] * in[i];
        out[o] = acc;
      }
      break;
    }
    case LayerKind::Softmax:
      out.values() = in.values();
      softmax_inplace(out.data());
      break;
  }
  return out;
}

/// Back-propagates `grad_out` through one layer. Parameter gradients are
/// accumulated into `grad` when it is non-null; the input gradient is
/// returned when `need_input_grad` is set (an empty tensor otherwise).
inline Tensor layer_backward(const Layer& layer, const Tensor& in, const Tensor& out,
                             const Tensor& grad_out, LayerGrad* grad, bool need_input_grad) {
  const LayerSpec& s = layer.spec;
  Tensor grad_in;
  if (need_input_grad) grad_in = Tensor(layer.input_shape);
  switch (s.kind) {
    case LayerKind::Conv2D: {
      const std::size_t ih = in.shape()[0], iw = in.shape()[1], ic = in.shape()[2];
      const std::size_t oh = out.shape()[0], ow = out.shape()[1], oc = out.shape()[2];
      const auto pad = static_cast<std::ptrdiff_t>(s.padding);
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t o = 0; o < oc; ++o) {
            const double g = grad_out.at(oy, ox, o);
            if (g == 0.0) continue;
            if (grad) grad->bias[o] += g;
            const std::size_t wbase = o * s.kernel_h * s.kernel_w * ic;
            for (std::size_t ky = 0; ky < s.kernel_h; ++ky) {
              const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * s.stride + ky) - pad;
              if (y < 0 || y >= static_cast<std::ptrdiff_t>(ih)) continue;
              for (std::size_t kx = 0; kx < s.kernel_w; ++kx) {
                const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * s.stride + kx) - pad;
                if (x < 0 || x >= static_cast<std::ptrdiff_t>(iw)) continue;
                const std::size_t ibase = (static_cast<std::size_t>(y) * iw + static_cast<std::size_t>(x)) * ic;
                const std::size_t wk = wbase + (ky * s.kernel_w + kx) * ic;
                for (std::size_t c = 0; c < ic; ++c) {
                  if (grad) grad->weights[wk + c] += g * in[ibase + c];
                  if (need_input_grad) grad_in[ibase + c] += g * layer.weights[wk + c];
                }
              }
            }
          }
      break;
    }
    case LayerKind::ReLU:
      if (need_input_grad)
        for (std::size_t i = 0; i < in.size(); ++i) grad_in[i] = in[i] > 0.0 ? grad_out[i] : 0.0;
      break;
    case LayerKind::MaxPool2D: {
      if (!need_input_grad) break;
      const std::size_t oh = out.shape()[0], ow = out.shape()[1], ch = out.shape()[2];
      for (std::size_t oy = 0; oy < oh; ++oy)
        for (std::size_t ox = 0; ox < ow; ++ox)
          for (std::size_t c = 0; c < ch; ++c) {
            // First maximum in scan order receives the gradient.
            std::size_t by = oy * s.stride, bx = ox * s.stride;
            double m = in.at(by, bx, c);
            for (std::size_t ky = 0; ky < s.window; ++ky)
              for (std::size_t kx = 0; kx < s.window; ++kx) {
                const double v = in.at(oy * s.stride + ky, ox * s.stride + kx, c);
                if (v > m) {
                  m = v;
                  by = oy * s.stride + ky;
                  bx = ox * s.stride + kx;
                }
              }
            grad_in.at(by, bx, c) += grad_out.at(oy, ox, c);
          }
      break;
    }
    case LayerKind::Flatten:
      if (need_input_grad) grad_in.values() = grad_out.values();
      break;
    case LayerKind::Dense: {
      const std::size_t n_in = in.size();
      for (std::size_t o = 0; o < s.out_features; ++o) {
        const double g = grad_out[o];
        if (grad) {
          grad->bias[o] += g;
          double* gw = &grad->weights[o * n_in];
          for (std::size_t i = 0; i < n_in; ++i) gw[i] += g * in[i];
        }
        if (need_input_grad) {
          const double* w = &layer.weights[o * n_in];
          for (std::size_t i = 0; i < n_in; ++i) grad_in[i] += g * w[i];
        }
      }
      break;
    }
    case LayerKind::Softmax: {
      if (!need_input_grad) break;
      double dot = 0.0;
      for (std::size_t i = 0; i < out.size(); ++i) dot += grad_out[i] * out[i];
      for (std::size_t i = 0; i < out.size(); ++i) grad_in[i] = out[i] * (grad_out[i] - dot);
      break;
    }
  }
  return grad_in;
}

}  // namespace refeednet
