#pragma once

#include <algorithm>
#include <cstddef>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "errors.hpp"

namespace alrelu {

using Shape = std::vector<std::size_t>;

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major array of 32-bit floats.
///
/// The shape is never empty and every extent is at least one; a scalar is a
/// tensor of shape [1]. The flat data length always equals the product of
/// the extents.
class Tensor {
 public:
  Tensor() : shape_{1}, data_(1, 0.0f) {}

  explicit Tensor(Shape shape, float fill = 0.0f) : shape_(std::move(shape)) {
    validate_shape(shape_);
    data_.assign(shape_size(shape_), fill);
  }

  Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape(shape_);
    if (data_.size() != shape_size(shape_)) {
      throw ShapeError("tensor data length " + std::to_string(data_.size()) +
                       " does not match shape " + shape_string(shape_));
    }
  }

  static Tensor scalar(float v) { return Tensor(Shape{1}, std::vector<float>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
  std::size_t size() const noexcept { return data_.size(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  float& at(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float at(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  /// Same data, new shape with the same element count.
  Tensor reshaped(Shape shape) const {
    if (shape_size(shape) != data_.size()) {
      throw ShapeError("cannot reshape " + shape_string(shape_) + " to " + shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
  }

  void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  static void validate_shape(const Shape& shape) {
    if (shape.empty()) throw ShapeError("tensor shape must have at least one extent");
    for (std::size_t e : shape) {
      if (e == 0) throw ShapeError("tensor extent must be >= 1, got " + shape_string(shape));
    }
  }

  Shape shape_;
  std::vector<float> data_;
};

/// Elementwise application; the input is left untouched.
template <typename F>
Tensor map(const Tensor& t, F&& f) {
  std::vector<float> out(t.size());
  std::transform(t.data().begin(), t.data().end(), out.begin(), std::forward<F>(f));
  return Tensor(t.shape(), std::move(out));
}

/// [m,k] x [k,n] -> [m,n]. Each output element is accumulated in float
/// over k in ascending order.
inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.extent(1) != b.extent(0)) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.extent(0), k = a.extent(1), n = b.extent(1);
  Tensor c(Shape{m, n});
  auto cd = c.data();
  auto ad = a.data();
  auto bd = b.data();
  for (std::size_t i = 0; i < m; ++i) {
    float* crow = cd.data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const float aip = ad[i * k + p];
      const float* brow = bd.data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
  return c;
}

inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose needs rank 2, got " + shape_string(a.shape()));
  const std::size_t m = a.extent(0), n = a.extent(1);
  Tensor t(Shape{n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) t[j * m + i] = a[i * n + j];
  return t;
}

enum class ReduceOp { Sum, Max, Mean };

/// Reduces over one axis (removing it) or over everything (axis = nullopt,
/// result has shape [1]). Removing the only axis of a rank-1 tensor also
/// yields shape [1]. Sums and means accumulate in double.
inline Tensor reduce(const Tensor& t, ReduceOp op, std::optional<std::size_t> axis = std::nullopt) {
  auto finish = [op](double acc, std::size_t count) {
    return op == ReduceOp::Mean ? static_cast<float>(acc / static_cast<double>(count))
                                : static_cast<float>(acc);
  };
  if (!axis) {
    auto d = t.data();
    if (op == ReduceOp::Max) return Tensor::scalar(*std::max_element(d.begin(), d.end()));
    double acc = 0.0;
    for (float v : d) acc += v;
    return Tensor::scalar(finish(acc, d.size()));
  }
  if (*axis >= t.rank()) {
    throw ShapeError("reduce axis " + std::to_string(*axis) + " out of range for shape " +
                     shape_string(t.shape()));
  }
  const Shape& s = t.shape();
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < *axis; ++i) outer *= s[i];
  for (std::size_t i = *axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t len = s[*axis];

  Shape out_shape;
  for (std::size_t i = 0; i < s.size(); ++i)
    if (i != *axis) out_shape.push_back(s[i]);
  if (out_shape.empty()) out_shape.push_back(1);

  Tensor out(out_shape);
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t in = 0; in < inner; ++in) {
      const float* base = t.data().data() + o * len * inner + in;
      if (op == ReduceOp::Max) {
        float m = base[0];
        for (std::size_t l = 1; l < len; ++l) m = std::max(m, base[l * inner]);
        out[o * inner + in] = m;
      } else {
        double acc = 0.0;
        for (std::size_t l = 0; l < len; ++l) acc += base[l * inner];
        out[o * inner + in] = finish(acc, len);
      }
    }
  }
  return out;
}

/// Rows (first-axis slices) at the given indices, in order.
inline Tensor gather_rows(const Tensor& t, std::span<const std::size_t> rows) {
  if (rows.empty()) throw ShapeError("gather_rows needs at least one row");
  Shape s = t.shape();
  const std::size_t stride = t.size() / s[0];
  const std::size_t n = s[0];
  s[0] = rows.size();
  std::vector<float> out;
  out.reserve(rows.size() * stride);
  for (std::size_t r : rows) {
    if (r >= n) throw ShapeError("row index " + std::to_string(r) + " out of range");
    auto first = t.data().begin() + static_cast<std::ptrdiff_t>(r * stride);
    out.insert(out.end(), first, first + static_cast<std::ptrdiff_t>(stride));
  }
  return Tensor(std::move(s), std::move(out));
}

}  // namespace alrelu
