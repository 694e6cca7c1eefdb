#pragma once

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "refeednet/model.hpp"
#include "refeednet/rng.hpp"

namespace testing_support {

using namespace refeednet;

class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("refeednet_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

inline Tensor random_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, so ReLU kinks stay outside the
// finite-difference stencil.
inline Tensor kink_free_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (std::size_t i = 0; i < t.size(); ++i) {
    double v = 0.0;
    do v = rng.uniform(-1.0, 1.0);
    while (std::fabs(v) < 1e-2);
    t[i] = v;
  }
  return t;
}

// Distinct values spaced at least 1e-2 apart, so max-pool winners do not
// change under a 1e-5 perturbation.
inline Tensor spaced_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  std::vector<double> vals(t.size());
  for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = 0.02 * static_cast<double>(i) - 0.01 * static_cast<double>(vals.size());
  rng.shuffle(std::span(vals));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = vals[i];
  return t;
}

inline double relative_error(double analytic, double numeric) {
  return std::fabs(analytic - numeric) / std::max(std::fabs(analytic) + std::fabs(numeric), 1e-6);
}

// Central difference of f with respect to x, step h; x is restored afterwards.
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double keep = x;
  x = keep + h;
  const double up = f();
  x = keep - h;
  const double down = f();
  x = keep;
  return (up - down) / (2.0 * h);
}

// Independent loss oracle: mean of -log(softmax output at the true class),
// taken from the model's forward pass.
inline double reference_loss(const MicroCnn& m, const std::vector<LabeledImage>& batch) {
  double s = 0.0;
  for (const auto& it : batch) s -= std::log(forward(m, it.pixels)[static_cast<std::size_t>(index_of(it.label))]);
  return s / static_cast<double>(batch.size());
}

// Worst relative error between loss_and_gradients and central differences
// over every trainable parameter.
inline double model_gradient_error(MicroCnn m, const std::vector<LabeledImage>& batch) {
  const auto lg = loss_and_gradients(m, batch);
  double worst = 0.0;
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    Layer& l = m.layers[k];
    if (!l.spec.parameterized() || l.spec.frozen) continue;
    for (std::size_t i = 0; i < l.weights.size(); ++i) {
      const double num = central_difference([&] { return reference_loss(m, batch); }, l.weights[i]);
      worst = std::max(worst, relative_error(lg.gradients.layers[k].weights[i], num));
    }
    for (std::size_t i = 0; i < l.bias.size(); ++i) {
      const double num = central_difference([&] { return reference_loss(m, batch); }, l.bias[i]);
      worst = std::max(worst, relative_error(lg.gradients.layers[k].bias[i], num));
    }
  }
  return worst;
}

// Worst relative error of one layer's backward pass (parameters and input)
// against central differences of the scalar sum(upstream * forward(in)).
inline double layer_gradient_error(Layer layer, Tensor in, const Tensor& upstream) {
  auto objective = [&] {
    const Tensor out = layer_forward(layer, in);
    double s = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) s += out[i] * upstream[i];
    return s;
  };
  const Tensor out = layer_forward(layer, in);
  LayerGrad g;
  if (layer.spec.parameterized()) g = {Tensor(layer.weights.shape()), Tensor(layer.bias.shape())};
  const Tensor gin = layer_backward(layer, in, out, upstream, layer.spec.parameterized() ? &g : nullptr, true);
  double worst = 0.0;
  for (std::size_t i = 0; i < in.size(); ++i)
    worst = std::max(worst, relative_error(gin[i], central_difference(objective, in[i])));
  if (layer.spec.parameterized()) {
    for (std::size_t i = 0; i < layer.weights.size(); ++i)
      worst = std::max(worst, relative_error(g.weights[i], central_difference(objective, layer.weights[i])));
    for (std::size_t i = 0; i < layer.bias.size(); ++i)
      worst = std::max(worst, relative_error(g.bias[i], central_difference(objective, layer.bias[i])));
  }
  return worst;
}

// A small model that exercises padding, stride 2, pooling and both dense
// and conv parameters.
inline Architecture tiny_architecture() {
  return {{8, 8, 2},
          {LayerSpec::conv2d(3, 3, 1, 1), LayerSpec::relu(), LayerSpec::maxpool(2, 2), LayerSpec::conv2d(4, 2, 2, 0),
           LayerSpec::relu(), LayerSpec::flatten(), LayerSpec::dense(kClassCount), LayerSpec::softmax()},
          5};
}

inline std::vector<LabeledImage> random_batch(const Shape& shape, std::size_t n, Rng& rng) {
  std::vector<LabeledImage> b;
  for (std::size_t i = 0; i < n; ++i)
    b.push_back({random_tensor(shape, rng, 0.0, 1.0), class_from_index(static_cast<int>(rng.below(kClassCount))),
                 "rand:" + std::to_string(i)});
  return b;
}

// Distance of the forward pass from any non-differentiable point: the
// smallest |ReLU input| and the smallest gap between a nonzero max-pool
// winner and its runner-up, over every layer.
inline double smooth_margin(const MicroCnn& m, const Tensor& image) {
  const auto trace = forward_trace(m, image);
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < m.layers.size(); ++k) {
    const Layer& l = m.layers[k];
    const Tensor& in = trace[k];
    if (l.spec.kind == LayerKind::ReLU) {
      for (std::size_t i = 0; i < in.size(); ++i) margin = std::min(margin, std::fabs(in[i]));
    } else if (l.spec.kind == LayerKind::MaxPool2D) {
      const std::size_t w = in.shape()[1], c = in.shape()[2];
      for (std::size_t oy = 0; oy < l.output_shape[0]; ++oy)
        for (std::size_t ox = 0; ox < l.output_shape[1]; ++ox)
          for (std::size_t ch = 0; ch < c; ++ch) {
            double best = -std::numeric_limits<double>::infinity(), second = best;
            for (std::size_t dy = 0; dy < l.spec.window; ++dy)
              for (std::size_t dx = 0; dx < l.spec.window; ++dx) {
                const double v = in[((oy * l.spec.stride + dy) * w + ox * l.spec.stride + dx) * c + ch];
                if (v > best) {
                  second = best;
                  best = v;
                } else if (v > second) {
                  second = v;
                }
              }
            // All-zero windows come from dead ReLUs, which stay dead under
            // perturbation.
            if (best != 0.0) margin = std::min(margin, best - second);
          }
    }
  }
  return margin;
}

// random_batch restricted to images whose forward pass stays at least
// `margin` away from ReLU kinks and max-pool ties.
inline std::vector<LabeledImage> smooth_batch(const MicroCnn& m, std::size_t n, Rng& rng, double margin = 1e-3) {
  std::vector<LabeledImage> b;
  while (b.size() < n) {
    auto one = random_batch(m.input_shape, 1, rng);
    if (smooth_margin(m, one[0].pixels) < margin) continue;
    one[0].source_id = "smooth:" + std::to_string(b.size());
    b.push_back(std::move(one[0]));
  }
  return b;
}

// Bitwise fingerprint of every parameter before base_boundary.
inline std::vector<double> base_parameters(const MicroCnn& m) {
  std::vector<double> out;
  for (std::size_t k = 0; k < m.base_boundary; ++k) {
    out.insert(out.end(), m.layers[k].weights.values().begin(), m.layers[k].weights.values().end());
    out.insert(out.end(), m.layers[k].bias.values().begin(), m.layers[k].bias.values().end());
  }
  return out;
}

inline bool bitwise_equal(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

}  // namespace testing_support
