#pragma once

#include <cmath>
#include <concepts>
#include <string>
#include <string_view>

#include "errors.hpp"
#include "tensor.hpp"

namespace alrelu {

enum class Rectifier { ReLU, LReLU, ALReLU };

/// One of the three rectifiers plus its negative-side slope.
///
/// alpha is fixed at construction and must lie in (0, 1); ReLU carries it
/// but ignores it.
class ActivationKind {
 public:
  static constexpr float kDefaultAlpha = 0.01f;

  constexpr ActivationKind() = default;

  explicit ActivationKind(Rectifier variant, float alpha = kDefaultAlpha)
      : variant_(variant), alpha_(alpha) {
    if (!(alpha > 0.0f && alpha < 1.0f)) {
      throw ValidationError("activation alpha must lie in (0, 1), got " + std::to_string(alpha));
    }
  }

  static ActivationKind relu() { return ActivationKind(Rectifier::ReLU); }
  static ActivationKind lrelu(float alpha = kDefaultAlpha) { return ActivationKind(Rectifier::LReLU, alpha); }
  static ActivationKind alrelu(float alpha = kDefaultAlpha) { return ActivationKind(Rectifier::ALReLU, alpha); }

  constexpr Rectifier variant() const noexcept { return variant_; }
  constexpr float alpha() const noexcept { return alpha_; }

  friend constexpr bool operator==(const ActivationKind&, const ActivationKind&) = default;

 private:
  Rectifier variant_ = Rectifier::ALReLU;
  float alpha_ = kDefaultAlpha;
};

/// Config name: "relu", "lrelu" or "alrelu".
inline std::string_view activation_name(Rectifier a) {
  switch (a) {
    case Rectifier::ReLU: return "relu";
    case Rectifier::LReLU: return "lrelu";
    case Rectifier::ALReLU: return "alrelu";
  }
  return "?";
}

inline std::string_view activation_name(const ActivationKind& k) { return activation_name(k.variant()); }

inline ActivationKind parse_activation(std::string_view name, float alpha = ActivationKind::kDefaultAlpha) {
  if (name == "relu") return ActivationKind(Rectifier::ReLU, alpha);
  if (name == "lrelu") return ActivationKind(Rectifier::LReLU, alpha);
  if (name == "alrelu") return ActivationKind(Rectifier::ALReLU, alpha);
  throw ValidationError("unknown activation \"" + std::string(name) +
                        "\" (expected relu, lrelu or alrelu)");
}

// Zero belongs to the negative branch for all three functions, both forward
// and in the derivative: ReLU'(0) = 0, LReLU'(0) = alpha, ALReLU'(0) = -alpha.

template <std::floating_point T>
T activate(const ActivationKind& kind, T x) {
  const T alpha = static_cast<T>(kind.alpha());
  switch (kind.variant()) {
    case Rectifier::ReLU: return x > T(0) ? x : T(0);
    case Rectifier::LReLU: return x > T(0) ? x : alpha * x;
    case Rectifier::ALReLU: return x > T(0) ? x : std::abs(alpha * x);
  }
  return x;
}

template <std::floating_point T>
T activate_grad(const ActivationKind& kind, T x) {
  const T alpha = static_cast<T>(kind.alpha());
  if (x > T(0)) return T(1);
  switch (kind.variant()) {
    case Rectifier::ReLU: return T(0);
    case Rectifier::LReLU: return alpha;
    case Rectifier::ALReLU: return -alpha;
  }
  return T(0);
}

inline Tensor activate(const ActivationKind& kind, const Tensor& x) {
  return map(x, [&kind](float v) { return activate(kind, v); });
}

inline Tensor activate_grad(const ActivationKind& kind, const Tensor& x) {
  return map(x, [&kind](float v) { return activate_grad(kind, v); });
}

/// Relative error between the analytic derivative and a central difference
/// evaluated in double precision. Points within 10*step of the kink at zero
/// are rejected.
inline double grad_check(const ActivationKind& kind, double x, double step) {
  if (!(step > 0.0)) throw ValidationError("grad_check step must be positive");
  if (!(std::abs(x) > 10.0 * step)) {
    throw ValidationError("grad_check: x = " + std::to_string(x) +
                          " lies in a nondifferentiable neighborhood of 0");
  }
  const double central = (activate(kind, x + step) - activate(kind, x - step)) / (2.0 * step);
  const double analytic = activate_grad(kind, x);
  return std::abs(central - analytic) / std::max(std::abs(analytic), 1e-12);
}

}  // namespace alrelu
