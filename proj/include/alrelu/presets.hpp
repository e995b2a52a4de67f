#pragma once

#include <string>
#include <vector>

#include "activations.hpp"
#include "errors.hpp"
#include "nn.hpp"

namespace alrelu::presets {

/// Two Dense(100) blocks, each followed by dropout 0.4, batch norm and the
/// activation, then a softmax head. Expects flat features.
inline std::vector<LayerSpec> shallow_dense(std::size_t n_classes, const ActivationKind& kind = {}) {
  std::vector<LayerSpec> s;
  for (int block = 0; block < 2; ++block) {
    s.emplace_back(layer::Dense{100});
    s.emplace_back(layer::Dropout{0.4f});
    s.emplace_back(layer::BatchNorm{});
    s.emplace_back(layer::Activation{kind});
  }
  s.emplace_back(layer::Dense{n_classes});
  s.emplace_back(layer::Softmax{});
  return s;
}

/// Conv -> activation -> batch norm -> max pool -> dropout blocks with
/// 8, 16, 32 filters (5x5 first, then 3x3; as many blocks as the input
/// allows, at least one), then global average pooling -> activation ->
/// batch norm -> dropout 0.3, Dense(32) -> activation -> batch norm ->
/// dropout 0.4, softmax head. Expects [h, w, channels] input.
inline std::vector<LayerSpec> small_cnn(const Shape& input_shape, std::size_t n_classes, const ActivationKind& kind = {}) {
  if (input_shape.size() != 3) {
    throw ValidationError("small_cnn expects image input [h, w, channels], got " + shape_string(input_shape));
  }
  constexpr std::size_t filters[] = {8, 16, 32};
  constexpr float rates[] = {0.1f, 0.2f, 0.3f};
  std::vector<LayerSpec> s;
  std::size_t h = input_shape[0], w = input_shape[1];
  for (std::size_t b = 0; b < 3; ++b) {
    const std::size_t ks = b == 0 ? 5 : 3;
    if (h < ks + 1 || w < ks + 1) break;
    s.emplace_back(layer::Conv2D{filters[b], ks});
    s.emplace_back(layer::Activation{kind});
    s.emplace_back(layer::BatchNorm{});
    s.emplace_back(layer::MaxPool2D{2});
    s.emplace_back(layer::Dropout{rates[b]});
    h = (h - ks + 1) / 2;
    w = (w - ks + 1) / 2;
  }
  if (s.empty()) throw ValidationError("small_cnn needs images of at least 6x6, got " + shape_string(input_shape));
  s.emplace_back(layer::GlobalAvgPool{});
  s.emplace_back(layer::Activation{kind});
  s.emplace_back(layer::BatchNorm{});
  s.emplace_back(layer::Dropout{0.3f});
  s.emplace_back(layer::Dense{32});
  s.emplace_back(layer::Activation{kind});
  s.emplace_back(layer::BatchNorm{});
  s.emplace_back(layer::Dropout{0.4f});
  s.emplace_back(layer::Dense{n_classes});
  s.emplace_back(layer::Softmax{});
  return s;
}

/// Plain rectifier MLP without normalization, so that bias shifts reach the
/// activations unchanged. Used by the dying-unit stress protocol.
inline std::vector<LayerSpec> stress_dense(std::size_t n_classes, std::size_t hidden, const ActivationKind& kind = {}) {
  return {layer::Dense{hidden}, layer::Activation{kind}, layer::Dense{hidden},
          layer::Activation{kind}, layer::Dense{n_classes}, layer::Softmax{}};
}

inline std::vector<LayerSpec> by_name(const std::string& name, const Shape& input_shape, std::size_t n_classes,
                                      const ActivationKind& kind = {}) {
  if (name == "shallow_dense") {
    if (input_shape.size() != 1) throw ValidationError("shallow_dense expects tabular input");
    return shallow_dense(n_classes, kind);
  }
  if (name == "small_cnn") return small_cnn(input_shape, n_classes, kind);
  throw ValidationError("unknown model preset \"" + name + "\" (expected shallow_dense or small_cnn)");
}

}  // namespace alrelu::presets
