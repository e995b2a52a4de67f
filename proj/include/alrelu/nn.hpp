#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "activations.hpp"
#include "dataset.hpp"
#include "errors.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace alrelu {

namespace layer {

struct Dense {
  std::size_t units = 1;
  friend bool operator==(const Dense&, const Dense&) = default;
};

/// 'valid' padding, stride 1. Kernel is kernel_size x kernel_size.
struct Conv2D {
  std::size_t filters = 1;
  std::size_t kernel_size = 3;
  friend bool operator==(const Conv2D&, const Conv2D&) = default;
};

/// Non-overlapping window x window pooling (stride = window).
struct MaxPool2D {
  std::size_t window = 2;
  friend bool operator==(const MaxPool2D&, const MaxPool2D&) = default;
};

struct GlobalAvgPool {
  friend bool operator==(const GlobalAvgPool&, const GlobalAvgPool&) = default;
};

/// Normalizes over every axis but the last (per feature, or per channel for
/// conv maps).
struct BatchNorm {
  static constexpr float kMomentum = 0.99f;
  static constexpr float kEpsilon = 1e-3f;
  friend bool operator==(const BatchNorm&, const BatchNorm&) = default;
};

/// Inverted dropout; identity at inference.
struct Dropout {
  float rate = 0.0f;
  friend bool operator==(const Dropout&, const Dropout&) = default;
};

struct Activation {
  ActivationKind kind;
  friend bool operator==(const Activation&, const Activation&) = default;
};

/// Must be the last layer; fused with cross-entropy in backward().
struct Softmax {
  friend bool operator==(const Softmax&, const Softmax&) = default;
};

}  // namespace layer

using LayerSpec = std::variant<layer::Dense, layer::Conv2D, layer::MaxPool2D, layer::GlobalAvgPool,
                               layer::BatchNorm, layer::Dropout, layer::Activation, layer::Softmax>;

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
overloaded(Ts...) -> overloaded<Ts...>;

inline std::string layer_type_name(const LayerSpec& spec) {
  return std::visit(overloaded{
                        [](const layer::Dense&) { return "dense"; },
                        [](const layer::Conv2D&) { return "conv2d"; },
                        [](const layer::MaxPool2D&) { return "maxpool2d"; },
                        [](const layer::GlobalAvgPool&) { return "global_avg_pool"; },
                        [](const layer::BatchNorm&) { return "batch_norm"; },
                        [](const layer::Dropout&) { return "dropout"; },
                        [](const layer::Activation&) { return "activation"; },
                        [](const layer::Softmax&) { return "softmax"; },
                    },
                    spec);
}

/// Copy of specs with every Activation layer switched to `kind`.
inline std::vector<LayerSpec> with_activation(std::vector<LayerSpec> specs, const ActivationKind& kind) {
  for (auto& s : specs)
    if (auto* a = std::get_if<layer::Activation>(&s)) a->kind = kind;
  return specs;
}

struct Sgd {
  friend bool operator==(const Sgd&, const Sgd&) = default;
};

struct Adam {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  friend bool operator==(const Adam&, const Adam&) = default;
};

using Optimizer = std::variant<Sgd, Adam>;

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  Optimizer optimizer = Adam{};
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs == 0) throw ValidationError("train config: epochs must be positive");
    if (batch_size == 0) throw ValidationError("train config: batch_size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
      throw ValidationError("train config: learning_rate must be a finite positive number");
    }
    if (const auto* adam = std::get_if<Adam>(&optimizer)) {
      if (!(adam->beta1 > 0.0 && adam->beta1 < 1.0) || !(adam->beta2 > 0.0 && adam->beta2 < 1.0)) {
        throw ValidationError("train config: adam betas must lie in (0, 1)");
      }
      if (!(adam->epsilon > 0.0)) throw ValidationError("train config: adam epsilon must be positive");
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// Layer stack plus learned parameters, gradients and training state.
///
/// params[i], grads[i] and state[i] belong to layers[i]. Dense and Conv2D
/// hold {weight, bias}; BatchNorm holds {gamma, beta} with running
/// {mean, variance} in state. Weights are [fan_in, units] for Dense and
/// [k, k, in_channels, filters] for Conv2D.
struct Model {
  std::vector<LayerSpec> layers;
  Shape input_shape;
  std::size_t n_classes = 0;
  std::vector<Shape> output_shapes;
  std::vector<std::vector<Tensor>> params;
  std::vector<std::vector<Tensor>> grads;
  std::vector<std::vector<Tensor>> state;
  std::uint64_t rng_seed = 0;

  // Dropout mask stream, seeded from rng_seed.
  Rng rng;
  // Adam moments (same layout as params) and counters.
  std::vector<std::vector<Tensor>> moment1;
  std::vector<std::vector<Tensor>> moment2;
  std::uint64_t optimizer_steps = 0;
  std::uint64_t epochs_trained = 0;

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& layer : params)
      for (const auto& p : layer) n += p.size();
    return n;
  }

  friend bool operator==(const Model&, const Model&) = default;
};

namespace detail {

[[noreturn]] inline void layer_shape_error(std::size_t index, const LayerSpec& spec, const Shape& in,
                                           const std::string& why) {
  throw ShapeError("layer " + std::to_string(index) + " (" + layer_type_name(spec) + "): " + why +
                   "; input shape " + shape_string(in));
}

inline Shape infer_output_shape(std::size_t index, const LayerSpec& spec, const Shape& in, bool last,
                                std::size_t n_classes) {
  return std::visit(
      overloaded{
          [&](const layer::Dense& d) -> Shape {
            if (d.units == 0) layer_shape_error(index, spec, in, "units must be >= 1");
            if (in.size() != 1) layer_shape_error(index, spec, in, "dense expects a flat feature vector");
            return {d.units};
          },
          [&](const layer::Conv2D& c) -> Shape {
            if (c.filters == 0) layer_shape_error(index, spec, in, "filters must be >= 1");
            if (c.kernel_size != 1 && c.kernel_size != 3 && c.kernel_size != 5) {
              layer_shape_error(index, spec, in, "kernel_size must be 1, 3 or 5");
            }
            if (in.size() != 3) layer_shape_error(index, spec, in, "conv2d expects [h, w, channels]");
            if (in[0] < c.kernel_size || in[1] < c.kernel_size) {
              layer_shape_error(index, spec, in, "spatial extent smaller than kernel");
            }
            return {in[0] - c.kernel_size + 1, in[1] - c.kernel_size + 1, c.filters};
          },
          [&](const layer::MaxPool2D& p) -> Shape {
            if (p.window == 0) layer_shape_error(index, spec, in, "window must be >= 1");
            if (in.size() != 3) layer_shape_error(index, spec, in, "maxpool2d expects [h, w, channels]");
            if (in[0] < p.window || in[1] < p.window) {
              layer_shape_error(index, spec, in, "spatial extent smaller than pool window");
            }
            return {in[0] / p.window, in[1] / p.window, in[2]};
          },
          [&](const layer::GlobalAvgPool&) -> Shape {
            if (in.size() != 3) layer_shape_error(index, spec, in, "global_avg_pool expects [h, w, channels]");
            return {in[2]};
          },
          [&](const layer::BatchNorm&) -> Shape { return in; },
          [&](const layer::Dropout& d) -> Shape {
            if (!(d.rate >= 0.0f && d.rate < 1.0f)) layer_shape_error(index, spec, in, "rate must lie in [0, 1)");
            return in;
          },
          [&](const layer::Activation&) -> Shape { return in; },
          [&](const layer::Softmax&) -> Shape {
            if (!last) layer_shape_error(index, spec, in, "softmax must be the final layer");
            if (in.size() != 1 || in[0] != n_classes) {
              layer_shape_error(index, spec, in, "softmax width must equal n_classes = " + std::to_string(n_classes));
            }
            return in;
          },
      },
      spec);
}

inline Tensor he_normal(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (auto& v : t.data()) v = static_cast<float>(rng.normal(0.0, stddev));
  return t;
}

inline std::size_t batch_of(const Tensor& t) { return t.extent(0); }

}  // namespace detail

/// Validates the stack and initializes parameters (He-normal weights, zero
/// biases, unit BatchNorm scale). Deterministic in `seed`.
inline Model build_model(std::vector<LayerSpec> specs, Shape input_shape, std::size_t n_classes,
                         std::uint64_t seed) {
  if (input_shape.empty() || std::find(input_shape.begin(), input_shape.end(), 0) != input_shape.end()) {
    throw ShapeError("model input shape " + shape_string(input_shape) + " is invalid");
  }
  if (n_classes < 2) throw ValidationError("model needs at least 2 classes");
  if (specs.empty() || !std::holds_alternative<layer::Softmax>(specs.back())) {
    throw ShapeError("layer " + std::to_string(specs.empty() ? 0 : specs.size() - 1) +
                     ": model must end with a softmax layer");
  }

  Model m;
  m.layers = std::move(specs);
  m.input_shape = input_shape;
  m.n_classes = n_classes;
  m.rng_seed = seed;

  Rng init(seed);
  Shape in = input_shape;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    const LayerSpec& spec = m.layers[i];
    Shape out = detail::infer_output_shape(i, spec, in, i + 1 == m.layers.size(), n_classes);
    std::vector<Tensor> p, s;
    if (const auto* d = std::get_if<layer::Dense>(&spec)) {
      p.push_back(detail::he_normal({in[0], d->units}, in[0], init));
      p.emplace_back(Shape{d->units});
    } else if (const auto* c = std::get_if<layer::Conv2D>(&spec)) {
      const std::size_t fan_in = c->kernel_size * c->kernel_size * in[2];
      p.push_back(detail::he_normal({c->kernel_size, c->kernel_size, in[2], c->filters}, fan_in, init));
      p.emplace_back(Shape{c->filters});
    } else if (std::holds_alternative<layer::BatchNorm>(spec)) {
      const std::size_t channels = in.back();
      p.emplace_back(Shape{channels}, 1.0f);
      p.emplace_back(Shape{channels}, 0.0f);
      s.emplace_back(Shape{channels}, 0.0f);
      s.emplace_back(Shape{channels}, 1.0f);
    }
    std::vector<Tensor> g;
    for (const auto& t : p) g.emplace_back(t.shape());
    m.moment1.push_back(g);
    m.moment2.push_back(g);
    m.grads.push_back(std::move(g));
    m.params.push_back(std::move(p));
    m.state.push_back(std::move(s));
    m.output_shapes.push_back(out);
    in = std::move(out);
  }
  m.rng = Rng(derive_seed(seed, 0x64726f70ULL));
  return m;
}

/// Sets every Dense/Conv2D bias to `value` (used for the hostile-init stress).
inline void set_biases(Model& model, float value) {
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (std::holds_alternative<layer::Dense>(model.layers[i]) ||
        std::holds_alternative<layer::Conv2D>(model.layers[i])) {
      model.params[i][1].fill(value);
    }
  }
}

struct LayerCache {
  Tensor input;
  Tensor aux;                         // BatchNorm x-hat, dropout mask
  Tensor aux2;                        // BatchNorm 1/sqrt(var + eps)
  std::vector<std::uint32_t> argmax;  // MaxPool2D source positions
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  Tensor probabilities;
  bool training = false;
};

struct ForwardResult {
  Tensor probabilities;
  ForwardCache cache;
};

namespace detail {

inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  Tensor y = matmul(x, w);
  const std::size_t n = y.extent(0), units = y.extent(1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < units; ++j) y[i * units + j] += b[j];
  return y;
}

inline Tensor conv_forward(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::size_t ks = k.extent(0), f = k.extent(3);
  const std::size_t oh = h - ks + 1, ow = w - ks + 1;
  Tensor y(Shape{n, oh, ow, f});
  const float* xd = x.data().data();
  const float* kd = k.data().data();
  float* yd = y.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        float* out = yd + ((s * oh + i) * ow + j) * f;
        for (std::size_t o = 0; o < f; ++o) out[o] = b[o];
        for (std::size_t di = 0; di < ks; ++di)
          for (std::size_t dj = 0; dj < ks; ++dj) {
            const float* in = xd + ((s * h + i + di) * w + j + dj) * c;
            const float* kk = kd + (di * ks + dj) * c * f;
            for (std::size_t ci = 0; ci < c; ++ci) {
              const float xv = in[ci];
              const float* krow = kk + ci * f;
              for (std::size_t o = 0; o < f; ++o) out[o] += xv * krow[o];
            }
          }
      }
  return y;
}

inline Tensor conv_backward(const Tensor& x, const Tensor& k, const Tensor& dy, Tensor& dk, Tensor& db) {
  const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::size_t ks = k.extent(0), f = k.extent(3);
  const std::size_t oh = dy.extent(1), ow = dy.extent(2);
  Tensor dx(x.shape());
  const float* xd = x.data().data();
  const float* kd = k.data().data();
  const float* gd = dy.data().data();
  float* dxd = dx.data().data();
  float* dkd = dk.data().data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j) {
        const float* g = gd + ((s * oh + i) * ow + j) * f;
        for (std::size_t o = 0; o < f; ++o) db[o] += g[o];
        for (std::size_t di = 0; di < ks; ++di)
          for (std::size_t dj = 0; dj < ks; ++dj) {
            const std::size_t pos = ((s * h + i + di) * w + j + dj) * c;
            const std::size_t kpos = (di * ks + dj) * c * f;
            for (std::size_t ci = 0; ci < c; ++ci) {
              const float xv = xd[pos + ci];
              const float* krow = kd + kpos + ci * f;
              float* dkrow = dkd + kpos + ci * f;
              float acc = 0.0f;
              for (std::size_t o = 0; o < f; ++o) {
                dkrow[o] += xv * g[o];
                acc += krow[o] * g[o];
              }
              dxd[pos + ci] += acc;
            }
          }
      }
  return dx;
}

inline Tensor maxpool_forward(const Tensor& x, std::size_t win, std::vector<std::uint32_t>& argmax) {
  const std::size_t n = x.extent(0), h = x.extent(1), w = x.extent(2), c = x.extent(3);
  const std::size_t oh = h / win, ow = w / win;
  Tensor y(Shape{n, oh, ow, c});
  argmax.assign(y.size(), 0);
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < oh; ++i)
      for (std::size_t j = 0; j < ow; ++j)
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = ((s * h + i * win) * w + j * win) * c + ch;
          for (std::size_t di = 0; di < win; ++di)
            for (std::size_t dj = 0; dj < win; ++dj) {
              const std::size_t idx = ((s * h + i * win + di) * w + j * win + dj) * c + ch;
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = ((s * oh + i) * ow + j) * c + ch;
          y[o] = x[best];
          argmax[o] = static_cast<std::uint32_t>(best);
        }
  return y;
}

inline Tensor global_avg_forward(const Tensor& x) {
  const std::size_t n = x.extent(0), hw = x.extent(1) * x.extent(2), c = x.extent(3);
  Tensor y(Shape{n, c});
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch) {
      double acc = 0.0;
      for (std::size_t p = 0; p < hw; ++p) acc += x[(s * hw + p) * c + ch];
      y[s * c + ch] = static_cast<float>(acc / static_cast<double>(hw));
    }
  return y;
}

inline Tensor softmax_rows(const Tensor& z) {
  const std::size_t n = z.extent(0), k = z.extent(1);
  Tensor p(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = z.data().data() + i * k;
    const float mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) total += std::exp(static_cast<double>(row[j] - mx));
    for (std::size_t j = 0; j < k; ++j) {
      p[i * k + j] = static_cast<float>(std::exp(static_cast<double>(row[j] - mx)) / total);
    }
  }
  return p;
}

struct BatchNormOut {
  Tensor y, xhat, inv_std;
};

inline BatchNormOut batchnorm_forward(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                                      Tensor& running_mean, Tensor& running_var, bool training) {
  const std::size_t c = x.shape().back();
  const std::size_t m = x.size() / c;
  std::vector<double> mean(c, 0.0), var(c, 0.0);
  if (training) {
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) mean[ch] += x[r * c + ch];
    for (auto& v : mean) v /= static_cast<double>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double d = x[r * c + ch] - mean[ch];
        var[ch] += d * d;
      }
    for (auto& v : var) v /= static_cast<double>(m);
    const float mom = layer::BatchNorm::kMomentum;
    for (std::size_t ch = 0; ch < c; ++ch) {
      running_mean[ch] = mom * running_mean[ch] + (1.0f - mom) * static_cast<float>(mean[ch]);
      running_var[ch] = mom * running_var[ch] + (1.0f - mom) * static_cast<float>(var[ch]);
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean[ch];
      var[ch] = running_var[ch];
    }
  }
  BatchNormOut out{Tensor(x.shape()), Tensor(x.shape()), Tensor(Shape{c})};
  for (std::size_t ch = 0; ch < c; ++ch) {
    out.inv_std[ch] = static_cast<float>(1.0 / std::sqrt(var[ch] + layer::BatchNorm::kEpsilon));
  }
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      const float xh = static_cast<float>((x[i] - mean[ch]) * out.inv_std[ch]);
      out.xhat[i] = xh;
      out.y[i] = gamma[ch] * xh + beta[ch];
    }
  return out;
}

inline Tensor batchnorm_backward(const Tensor& dy, const Tensor& xhat, const Tensor& inv_std, const Tensor& gamma,
                                 Tensor& dgamma, Tensor& dbeta) {
  const std::size_t c = dy.shape().back();
  const std::size_t m = dy.size() / c;
  std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      sum_dy[ch] += dy[i];
      sum_dy_xhat[ch] += static_cast<double>(dy[i]) * xhat[i];
    }
  for (std::size_t ch = 0; ch < c; ++ch) {
    dgamma[ch] += static_cast<float>(sum_dy_xhat[ch]);
    dbeta[ch] += static_cast<float>(sum_dy[ch]);
  }
  Tensor dx(dy.shape());
  const double md = static_cast<double>(m);
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t i = r * c + ch;
      const double scale = static_cast<double>(gamma[ch]) * inv_std[ch] / md;
      dx[i] = static_cast<float>(scale * (md * dy[i] - sum_dy[ch] - xhat[i] * sum_dy_xhat[ch]));
    }
  return dx;
}

inline void check_input(const Model& model, const Tensor& batch) {
  Shape want{batch.extent(0)};
  want.insert(want.end(), model.input_shape.begin(), model.input_shape.end());
  if (batch.shape() != want) {
    throw ShapeError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                     shape_string(model.input_shape));
  }
}

// Shared by forward() and predict_proba(); `rng` and `running` are only
// touched in training mode.
inline Tensor run_layers(const Model& model, std::vector<std::vector<Tensor>>& running, Rng& rng,
                         const Tensor& batch, bool training, ForwardCache* cache) {
  check_input(model, batch);
  Tensor x = batch;
  const std::size_t n = batch.extent(0);
  if (cache) {
    cache->layers.assign(model.layers.size(), LayerCache{});
    cache->training = training;
  }
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const auto& p = model.params[i];
    LayerCache* lc = cache ? &cache->layers[i] : nullptr;
    if (lc) lc->input = x;
    Tensor y = std::visit(
        overloaded{
            [&](const layer::Dense&) { return dense_forward(x, p[0], p[1]); },
            [&](const layer::Conv2D&) { return conv_forward(x, p[0], p[1]); },
            [&](const layer::MaxPool2D& mp) {
              std::vector<std::uint32_t> idx;
              Tensor out = maxpool_forward(x, mp.window, idx);
              if (lc) lc->argmax = std::move(idx);
              return out;
            },
            [&](const layer::GlobalAvgPool&) { return global_avg_forward(x); },
            [&](const layer::BatchNorm&) {
              auto out = batchnorm_forward(x, p[0], p[1], running[i][0], running[i][1], training);
              if (lc) {
                lc->aux = std::move(out.xhat);
                lc->aux2 = std::move(out.inv_std);
              }
              return std::move(out.y);
            },
            [&](const layer::Dropout& d) {
              if (!training || d.rate == 0.0f) return x;
              Tensor mask(x.shape());
              const float keep_scale = 1.0f / (1.0f - d.rate);
              for (auto& v : mask.data()) v = rng.uniform() >= d.rate ? keep_scale : 0.0f;
              Tensor out(x.shape());
              for (std::size_t e = 0; e < x.size(); ++e) out[e] = x[e] * mask[e];
              if (lc) lc->aux = std::move(mask);
              return out;
            },
            [&](const layer::Activation& a) { return activate(a.kind, x); },
            [&](const layer::Softmax&) { return softmax_rows(x); },
        },
        model.layers[i]);
    Shape want{n};
    want.insert(want.end(), model.output_shapes[i].begin(), model.output_shapes[i].end());
    if (y.shape() != want) {
      throw ShapeError("layer " + std::to_string(i) + " produced " + shape_string(y.shape()) + ", expected " +
                       shape_string(want));
    }
    x = std::move(y);
  }
  if (cache) cache->probabilities = x;
  return x;
}

}  // namespace detail

/// Runs the stack. Training mode samples dropout masks from model.rng and
/// updates BatchNorm running statistics; inference mode does neither.
inline ForwardResult forward(Model& model, const Tensor& batch, bool training) {
  ForwardResult r;
  r.probabilities = detail::run_layers(model, model.state, model.rng, batch, training, &r.cache);
  return r;
}

/// Mean softmax cross-entropy with probabilities clamped to [1e-7, 1 - 1e-7].
inline double cross_entropy(const Tensor& probabilities, const Tensor& one_hot_labels) {
  if (probabilities.shape() != one_hot_labels.shape() || probabilities.rank() != 2) {
    throw ShapeError("cross_entropy shape mismatch: " + shape_string(probabilities.shape()) + " vs " +
                     shape_string(one_hot_labels.shape()));
  }
  double total = 0.0;
  for (std::size_t i = 0; i < probabilities.size(); ++i) {
    if (one_hot_labels[i] == 0.0f) continue;
    const double p = std::clamp(static_cast<double>(probabilities[i]), 1e-7, 1.0 - 1e-7);
    total -= one_hot_labels[i] * std::log(p);
  }
  return total / static_cast<double>(probabilities.extent(0));
}

/// Fills model.grads (overwriting) from a training-mode cache and returns the
/// mean cross-entropy of the batch.
inline double backward(Model& model, const ForwardCache& cache, const Tensor& labels) {
  const Tensor& probs = cache.probabilities;
  if (cache.layers.size() != model.layers.size()) throw ShapeError("forward cache does not belong to this model");
  if (labels.shape() != probs.shape()) {
    throw ShapeError("label shape " + shape_string(labels.shape()) + " does not match predictions " +
                     shape_string(probs.shape()));
  }
  for (auto& layer : model.grads)
    for (auto& g : layer) g.fill(0.0f);

  const double loss = cross_entropy(probs, labels);
  const float inv_n = 1.0f / static_cast<float>(probs.extent(0));
  Tensor dy(probs.shape());
  for (std::size_t i = 0; i < probs.size(); ++i) dy[i] = (probs[i] - labels[i]) * inv_n;

  // The final Softmax is folded into dy above.
  for (std::size_t li = model.layers.size() - 1; li-- > 0;) {
    const LayerCache& lc = cache.layers[li];
    const auto& p = model.params[li];
    auto& g = model.grads[li];
    dy = std::visit(
        overloaded{
            [&](const layer::Dense&) {
              Tensor dw = matmul(transpose(lc.input), dy);
              const std::size_t n = dy.extent(0), units = dy.extent(1);
              for (std::size_t r = 0; r < n; ++r)
                for (std::size_t j = 0; j < units; ++j) g[1][j] += dy[r * units + j];
              g[0] = std::move(dw);
              return matmul(dy, transpose(p[0]));
            },
            [&](const layer::Conv2D&) { return detail::conv_backward(lc.input, p[0], dy, g[0], g[1]); },
            [&](const layer::MaxPool2D&) {
              Tensor dx(lc.input.shape());
              for (std::size_t o = 0; o < dy.size(); ++o) dx[lc.argmax[o]] += dy[o];
              return dx;
            },
            [&](const layer::GlobalAvgPool&) {
              const Shape& s = lc.input.shape();
              const std::size_t n = s[0], hw = s[1] * s[2], c = s[3];
              const float scale = 1.0f / static_cast<float>(hw);
              Tensor dx(s);
              for (std::size_t r = 0; r < n; ++r)
                for (std::size_t q = 0; q < hw; ++q)
                  for (std::size_t ch = 0; ch < c; ++ch) dx[(r * hw + q) * c + ch] = dy[r * c + ch] * scale;
              return dx;
            },
            [&](const layer::BatchNorm&) {
              if (!cache.training) throw ValidationError("backward requires a training-mode forward pass");
              return detail::batchnorm_backward(dy, lc.aux, lc.aux2, p[0], g[0], g[1]);
            },
            [&](const layer::Dropout& d) {
              if (!cache.training || d.rate == 0.0f) return dy;
              Tensor dx(dy.shape());
              for (std::size_t e = 0; e < dy.size(); ++e) dx[e] = dy[e] * lc.aux[e];
              return dx;
            },
            [&](const layer::Activation& a) {
              Tensor dx(dy.shape());
              for (std::size_t e = 0; e < dy.size(); ++e) dx[e] = dy[e] * activate_grad(a.kind, lc.input[e]);
              return dx;
            },
            [&](const layer::Softmax&) -> Tensor { throw ShapeError("softmax must be the final layer"); },
        },
        model.layers[li]);
  }
  return loss;
}

/// One optimizer update from model.grads.
inline void apply_gradients(Model& model, const TrainConfig& config) {
  ++model.optimizer_steps;
  const double lr = config.learning_rate;
  if (const auto* adam = std::get_if<Adam>(&config.optimizer)) {
    const double t = static_cast<double>(model.optimizer_steps);
    const double c1 = 1.0 - std::pow(adam->beta1, t);
    const double c2 = 1.0 - std::pow(adam->beta2, t);
    for (std::size_t li = 0; li < model.params.size(); ++li)
      for (std::size_t pi = 0; pi < model.params[li].size(); ++pi) {
        auto& p = model.params[li][pi];
        const auto& g = model.grads[li][pi];
        auto& m1 = model.moment1[li][pi];
        auto& m2 = model.moment2[li][pi];
        for (std::size_t e = 0; e < p.size(); ++e) {
          const double ge = g[e];
          const double mv = adam->beta1 * m1[e] + (1.0 - adam->beta1) * ge;
          const double vv = adam->beta2 * m2[e] + (1.0 - adam->beta2) * ge * ge;
          m1[e] = static_cast<float>(mv);
          m2[e] = static_cast<float>(vv);
          const double step = lr * (mv / c1) / (std::sqrt(vv / c2) + adam->epsilon);
          p[e] = static_cast<float>(p[e] - step);
        }
      }
  } else {
    for (std::size_t li = 0; li < model.params.size(); ++li)
      for (std::size_t pi = 0; pi < model.params[li].size(); ++pi) {
        auto& p = model.params[li][pi];
        const auto& g = model.grads[li][pi];
        for (std::size_t e = 0; e < p.size(); ++e) p[e] = static_cast<float>(p[e] - lr * g[e]);
      }
  }
}

struct EpochStats {
  double mean_loss = 0.0;
  std::size_t dead_unit_count = 0;
  friend bool operator==(const EpochStats&, const EpochStats&) = default;
};

/// Number of hidden activation units in the model (per sample).
inline std::size_t activation_unit_count(const Model& model) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (std::holds_alternative<layer::Activation>(model.layers[i])) n += shape_size(model.output_shapes[i]);
  return n;
}

/// One pass over the dataset in a shuffled order derived from
/// (config.seed, epochs already trained).
///
/// A hidden unit is counted dead when the derivative of its activation was
/// exactly zero for every sample of every batch in the epoch.
inline EpochStats train_epoch(Model& model, const Dataset& data, const TrainConfig& config) {
  config.validate();
  if (data.size() == 0) throw ValidationError("train_epoch: dataset is empty");
  if (data.n_classes() != model.n_classes) {
    throw ValidationError("train_epoch: dataset has " + std::to_string(data.n_classes()) + " classes, model " +
                          std::to_string(model.n_classes));
  }
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng shuffler(derive_seed(config.seed, model.epochs_trained));
  shuffler.shuffle(std::span<std::size_t>(order));

  std::vector<std::vector<char>> alive(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i)
    if (std::holds_alternative<layer::Activation>(model.layers[i]))
      alive[i].assign(shape_size(model.output_shapes[i]), 0);

  double loss_sum = 0.0;
  for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
    const std::size_t end = std::min(order.size(), start + config.batch_size);
    std::span<const std::size_t> rows(order.data() + start, end - start);
    const Tensor batch = gather_rows(data.features, rows);
    std::vector<std::size_t> batch_labels;
    for (std::size_t r : rows) batch_labels.push_back(data.labels[r]);

    ForwardResult fr = forward(model, batch, true);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
      if (alive[i].empty()) continue;
      const auto& kind = std::get<layer::Activation>(model.layers[i]).kind;
      const Tensor& z = fr.cache.layers[i].input;
      const std::size_t units = alive[i].size();
      for (std::size_t e = 0; e < z.size(); ++e)
        if (activate_grad(kind, z[e]) != 0.0f) alive[i][e % units] = 1;
    }
    const double loss = backward(model, fr.cache, one_hot(batch_labels, model.n_classes));
    apply_gradients(model, config);
    loss_sum += loss * static_cast<double>(rows.size());
  }
  ++model.epochs_trained;

  EpochStats stats;
  stats.mean_loss = loss_sum / static_cast<double>(data.size());
  for (const auto& layer_alive : alive) stats.dead_unit_count += std::count(layer_alive.begin(), layer_alive.end(), 0);
  return stats;
}

/// config.epochs calls to train_epoch.
inline std::vector<EpochStats> fit(Model& model, const Dataset& data, const TrainConfig& config) {
  std::vector<EpochStats> history;
  for (std::size_t e = 0; e < config.epochs; ++e) history.push_back(train_epoch(model, data, config));
  return history;
}

/// Inference-mode forward in chunks; no model state is touched.
inline Tensor predict_proba(const Model& model, const Tensor& features, std::size_t chunk = 256) {
  detail::check_input(model, features);
  const std::size_t n = features.extent(0);
  std::vector<float> out;
  out.reserve(n * model.n_classes);
  auto running = model.state;
  Rng unused;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t end = std::min(n, start + chunk);
    std::vector<std::size_t> rows(end - start);
    std::iota(rows.begin(), rows.end(), start);
    Tensor p = detail::run_layers(model, running, unused, gather_rows(features, rows), false, nullptr);
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  return Tensor(Shape{n, model.n_classes}, std::move(out));
}

inline std::vector<std::size_t> argmax_rows(const Tensor& probabilities) {
  const std::size_t n = probabilities.extent(0), k = probabilities.extent(1);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const float* row = probabilities.data().data() + i * k;
    out[i] = static_cast<std::size_t>(std::max_element(row, row + k) - row);
  }
  return out;
}

}  // namespace alrelu
