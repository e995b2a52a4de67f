#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "base64.hpp"
#include "errors.hpp"
#include "nn.hpp"
#include "util.hpp"

namespace alrelu {

using json = nlohmann::json;

inline json layer_to_json(const LayerSpec& spec) {
  json j{{"type", layer_type_name(spec)}};
  std::visit(overloaded{
                 [&](const layer::Dense& d) { j["units"] = d.units; },
                 [&](const layer::Conv2D& c) {
                   j["filters"] = c.filters;
                   j["kernel_size"] = c.kernel_size;
                 },
                 [&](const layer::MaxPool2D& p) { j["window"] = p.window; },
                 [&](const layer::Dropout& d) { j["rate"] = d.rate; },
                 [&](const layer::Activation& a) {
                   j["kind"] = activation_name(a.kind);
                   j["alpha"] = a.kind.alpha();
                 },
                 [](const auto&) {},
             },
             spec);
  return j;
}

inline LayerSpec layer_from_json(const json& j) {
  const std::string type = j.at("type").get<std::string>();
  if (type == "dense") return layer::Dense{j.at("units").get<std::size_t>()};
  if (type == "conv2d") return layer::Conv2D{j.at("filters").get<std::size_t>(), j.at("kernel_size").get<std::size_t>()};
  if (type == "maxpool2d") return layer::MaxPool2D{j.at("window").get<std::size_t>()};
  if (type == "global_avg_pool") return layer::GlobalAvgPool{};
  if (type == "batch_norm") return layer::BatchNorm{};
  if (type == "dropout") return layer::Dropout{j.at("rate").get<float>()};
  if (type == "activation") {
    return layer::Activation{parse_activation(j.at("kind").get<std::string>(), j.at("alpha").get<float>())};
  }
  if (type == "softmax") return layer::Softmax{};
  throw ParseError("unknown layer type \"" + type + "\"");
}

namespace detail {

inline std::string encode_floats(std::span<const float> values) {
  std::vector<std::uint8_t> bytes(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int b = 0; b < 4; ++b) bytes[i * 4 + b] = static_cast<std::uint8_t>(bits >> (8 * b));
  }
  return base64::encode(bytes);
}

inline std::vector<float> decode_floats(const std::string& text) {
  const auto bytes = base64::decode(text);
  if (bytes.size() % 4 != 0) throw ParseError("parameter blob is not a whole number of float32 values");
  std::vector<float> out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    std::uint32_t bits = 0;
    for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(bytes[i * 4 + b]) << (8 * b);
    out[i] = std::bit_cast<float>(bits);
  }
  return out;
}

inline json tensors_to_json(const std::vector<Tensor>& ts) {
  json arr = json::array();
  for (const auto& t : ts) arr.push_back({{"shape", t.shape()}, {"data", encode_floats(t.data())}});
  return arr;
}

inline std::vector<Tensor> tensors_from_json(const json& arr, const std::vector<Tensor>& expected, std::size_t layer) {
  if (!arr.is_array() || arr.size() != expected.size()) {
    throw ParseError("layer " + std::to_string(layer) + ": unexpected number of tensors");
  }
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Shape shape = arr[i].at("shape").get<Shape>();
    if (shape != expected[i].shape()) {
      throw ParseError("layer " + std::to_string(layer) + ": tensor shape " + shape_string(shape) +
                       " does not match " + shape_string(expected[i].shape()));
    }
    auto values = decode_floats(arr[i].at("data").get<std::string>());
    if (values.size() != shape_size(shape)) {
      throw ParseError("layer " + std::to_string(layer) + ": blob holds " + std::to_string(values.size()) +
                       " values, shape " + shape_string(shape) + " needs " + std::to_string(shape_size(shape)));
    }
    out.emplace_back(std::move(shape), std::move(values));
  }
  return out;
}

}  // namespace detail

/// Version-1 model document: layer specs, shapes, rng_seed, and
/// base64-encoded little-endian float32 parameters and BatchNorm statistics.
inline json model_to_json(const Model& model) {
  json layers = json::array();
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    json l = layer_to_json(model.layers[i]);
    l["output_shape"] = model.output_shapes[i];
    l["params"] = detail::tensors_to_json(model.params[i]);
    l["state"] = detail::tensors_to_json(model.state[i]);
    layers.push_back(std::move(l));
  }
  return json{{"format", 1},
              {"rng_seed", model.rng_seed},
              {"input_shape", model.input_shape},
              {"n_classes", model.n_classes},
              {"layers", std::move(layers)}};
}

/// Rebuilds the model and restores stored tensors. Optimizer state starts fresh.
inline Model model_from_json(const json& j) {
  try {
    if (j.at("format").get<int>() != 1) throw ParseError("unsupported model format " + j.at("format").dump());
    std::vector<LayerSpec> specs;
    for (const auto& l : j.at("layers")) specs.push_back(layer_from_json(l));
    Model m = build_model(specs, j.at("input_shape").get<Shape>(), j.at("n_classes").get<std::size_t>(),
                          j.at("rng_seed").get<std::uint64_t>());
    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < specs.size(); ++i) {
      m.params[i] = detail::tensors_from_json(layers[i].at("params"), m.params[i], i);
      m.state[i] = detail::tensors_from_json(layers[i].at("state"), m.state[i], i);
    }
    return m;
  } catch (const json::exception& e) {
    throw ParseError(std::string("model json: ") + e.what());
  }
}

inline void save_model(const Model& model, const std::filesystem::path& path) {
  write_file_atomic(path, model_to_json(model).dump(2) + "\n");
}

inline Model load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open model file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return model_from_json(j);
}

}  // namespace alrelu
