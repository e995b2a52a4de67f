#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "alrelu/activations.hpp"
#include "alrelu/rng.hpp"

namespace alrelu {
namespace {

const ActivationKind kRelu = ActivationKind::relu();
const ActivationKind kLrelu = ActivationKind::lrelu();
const ActivationKind kAlrelu = ActivationKind::alrelu();

float act(const ActivationKind& k, float x) { return activate(k, x); }
float grad(const ActivationKind& k, float x) { return activate_grad(k, x); }

TEST(ActivationKind, DefaultAlphaAndValidation) {
  EXPECT_EQ(ActivationKind::kDefaultAlpha, 0.01f);
  EXPECT_EQ(ActivationKind{}.alpha(), 0.01f);
  EXPECT_THROW(ActivationKind(Rectifier::LReLU, 0.0f), ValidationError);
  EXPECT_THROW(ActivationKind(Rectifier::ALReLU, 1.0f), ValidationError);
  EXPECT_THROW(ActivationKind(Rectifier::ALReLU, -0.5f), ValidationError);
  EXPECT_NO_THROW(ActivationKind(Rectifier::ALReLU, 0.3f));
}

TEST(ActivationKind, ConfigNames) {
  EXPECT_EQ(activation_name(kRelu), "relu");
  EXPECT_EQ(activation_name(kLrelu), "lrelu");
  EXPECT_EQ(activation_name(kAlrelu), "alrelu");
  EXPECT_EQ(parse_activation("alrelu", 0.2f), ActivationKind::alrelu(0.2f));
  EXPECT_THROW(parse_activation("ALReLU"), ValidationError);
  EXPECT_THROW(parse_activation("gelu"), ValidationError);
}

TEST(Activate, Examples) {
  EXPECT_EQ(act(kRelu, -2.0f), 0.0f);
  EXPECT_FLOAT_EQ(act(kLrelu, -2.0f), -0.02f);
  EXPECT_FLOAT_EQ(act(kAlrelu, -3.0f), 0.03f);
  EXPECT_EQ(act(kAlrelu, 5.0f), 5.0f);
  for (const auto& k : {kRelu, kLrelu, kAlrelu}) EXPECT_EQ(act(k, 0.0f), 0.0f);
}

TEST(Activate, TensorShapePreservedInputUntouched) {
  const Tensor x(Shape{2, 3}, {-3, -1, 0, 1, 2, -0.5f});
  const Tensor before = x;
  const Tensor y = activate(kAlrelu, x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_EQ(x, before);
  EXPECT_FLOAT_EQ(y[0], 0.03f);
  EXPECT_EQ(y[4], 2.0f);
}

TEST(ActivateGrad, Examples) {
  EXPECT_EQ(grad(kAlrelu, -1.0f), -0.01f);
  EXPECT_EQ(grad(kAlrelu, 4.0f), 1.0f);
  EXPECT_EQ(grad(kRelu, -7.0f), 0.0f);
  EXPECT_EQ(grad(kAlrelu, 0.0f), -0.01f);
  EXPECT_EQ(grad(kLrelu, 0.0f), 0.01f);
  EXPECT_EQ(grad(kRelu, 0.0f), 0.0f);
  EXPECT_EQ(grad(kLrelu, -1.0f), 0.01f);
}

TEST(GradCheck, Examples) {
  EXPECT_LE(grad_check(kAlrelu, 1.7, 1e-4), 1e-5);
  EXPECT_LE(grad_check(kAlrelu, -0.5, 1e-4), 1e-5);
  try {
    grad_check(kRelu, 1e-9, 1e-4);
    FAIL() << "expected rejection";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("nondifferentiable neighborhood"), std::string::npos);
  }
}

class ActivationProperties : public ::testing::TestWithParam<float> {};

TEST_P(ActivationProperties, AlreluIdentities) {
  const float alpha = GetParam();
  const auto relu = ActivationKind::relu();
  const auto alrelu = ActivationKind::alrelu(alpha);
  Rng rng(11);
  for (int i = 0; i < 100000; ++i) {
    const float x = static_cast<float>(rng.uniform(-100.0, 100.0));
    const float y = act(alrelu, x);
    EXPECT_GE(y, 0.0f);
    ASSERT_EQ(y, std::max(std::abs(alpha * x), x)) << x;
    ASSERT_EQ(y, act(relu, x) + alpha * act(relu, -x)) << x;
  }
}

TEST_P(ActivationProperties, ContinuityAtZero) {
  const float alpha = GetParam();
  for (const auto& k : {ActivationKind::relu(), ActivationKind::lrelu(alpha), ActivationKind::alrelu(alpha)}) {
    for (double eps : {1e-1, 1e-3, 1e-6, 1e-12}) {
      const double right = activate(k, eps), left = activate(k, -eps);
      EXPECT_LE(std::abs(right - left), (1.0 + alpha) * eps * (1 + 1e-12));
      EXPECT_LE(std::abs(left), alpha * eps * (1 + 1e-12));
    }
  }
}

TEST_P(ActivationProperties, AgreeOnPositives) {
  const float alpha = GetParam();
  Rng rng(12);
  for (int i = 0; i < 10000; ++i) {
    const float x = static_cast<float>(rng.uniform(1e-6, 100.0));
    const float r = act(ActivationKind::relu(), x);
    EXPECT_EQ(act(ActivationKind::lrelu(alpha), x), r);
    EXPECT_EQ(act(ActivationKind::alrelu(alpha), x), r);
    EXPECT_EQ(grad(ActivationKind::relu(), x), 1.0f);
    EXPECT_EQ(grad(ActivationKind::lrelu(alpha), x), 1.0f);
    EXPECT_EQ(grad(ActivationKind::alrelu(alpha), x), 1.0f);
  }
}

TEST_P(ActivationProperties, NegativeSideGradientNeverVanishes) {
  const float alpha = GetParam();
  Rng rng(13);
  for (int i = 0; i < 10000; ++i) {
    const float x = -static_cast<float>(rng.uniform(1e-6, 100.0));
    EXPECT_EQ(std::abs(grad(ActivationKind::alrelu(alpha), x)), alpha);
    EXPECT_EQ(grad(ActivationKind::alrelu(alpha), x), -alpha);
  }
}

TEST_P(ActivationProperties, CentralDifferencesAgree) {
  const float alpha = GetParam();
  Rng rng(14);
  const double step = 1e-4;
  for (const auto& k : {ActivationKind::relu(), ActivationKind::lrelu(alpha), ActivationKind::alrelu(alpha)}) {
    for (int i = 0; i < 1000; ++i) {
      double x;
      do {
        x = rng.uniform(-10.0, 10.0);
      } while (std::abs(x) <= 10 * step);
      EXPECT_LE(grad_check(k, x, step), 1e-5) << activation_name(k) << " at " << x;
    }
  }
}

INSTANTIATE_TEST_SUITE_P(Alphas, ActivationProperties, ::testing::Values(0.01f, 0.1f, 0.3f, 0.9f));

}  // namespace
}  // namespace alrelu
