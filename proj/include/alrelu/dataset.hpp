#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "tensor.hpp"

namespace alrelu {

enum class FeatureKind { Tabular, Image };

/// Features plus integer class ids. Tabular features are [n, d]; image
/// features are [n, h, w, channels].
struct Dataset {
  Tensor features;
  std::vector<std::size_t> labels;
  std::vector<std::string> class_names;
  FeatureKind feature_kind = FeatureKind::Tabular;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t n_classes() const noexcept { return class_names.size(); }

  /// Per-sample feature shape.
  Shape sample_shape() const { return Shape(features.shape().begin() + 1, features.shape().end()); }

  /// Throws ValidationError when the invariants do not hold.
  void validate() const {
    if (labels.empty()) throw ValidationError("dataset is empty");
    if (features.extent(0) != labels.size()) {
      throw ValidationError("dataset has " + std::to_string(features.extent(0)) + " feature rows but " +
                            std::to_string(labels.size()) + " labels");
    }
    const std::size_t want_rank = feature_kind == FeatureKind::Image ? 4 : 2;
    if (features.rank() != want_rank) {
      throw ValidationError("dataset features have shape " + shape_string(features.shape()) +
                            ", expected rank " + std::to_string(want_rank));
    }
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= class_names.size()) {
        throw ValidationError("label " + std::to_string(labels[i]) + " at row " + std::to_string(i) +
                              " is outside [0, " + std::to_string(class_names.size()) + ")");
      }
    }
  }

  Dataset subset(std::span<const std::size_t> rows) const {
    Dataset out;
    out.features = gather_rows(features, rows);
    out.labels.reserve(rows.size());
    for (std::size_t r : rows) out.labels.push_back(labels.at(r));
    out.class_names = class_names;
    out.feature_kind = feature_kind;
    return out;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

/// [n, n_classes] one-hot rows.
inline Tensor one_hot(std::span<const std::size_t> labels, std::size_t n_classes) {
  Tensor t(Shape{labels.size(), n_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= n_classes) throw ValidationError("label out of range for one-hot encoding");
    t[i * n_classes + labels[i]] = 1.0f;
  }
  return t;
}

}  // namespace alrelu
