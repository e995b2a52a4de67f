#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "alrelu/data.hpp"
#include "alrelu/experiment.hpp"
#include "alrelu/nn.hpp"
#include "alrelu/presets.hpp"

namespace alrelu {
namespace {

const ActivationKind kKinds[] = {ActivationKind::relu(), ActivationKind::lrelu(), ActivationKind::alrelu()};

Tensor random_batch(Shape shape, std::uint64_t seed) {
  Tensor t(std::move(shape));
  Rng rng(seed);
  for (auto& v : t.data()) v = static_cast<float>(rng.normal());
  return t;
}

double row_sum(const Tensor& p, std::size_t r) {
  double s = 0.0;
  for (std::size_t c = 0; c < p.extent(1); ++c) s += p[r * p.extent(1) + c];
  return s;
}

double train_accuracy(const Model& m, const Dataset& d) {
  const auto pred = argmax_rows(predict_proba(m, d.features));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == d.labels[i];
  return static_cast<double>(hit) / static_cast<double>(pred.size());
}

TEST(BuildModel, ShallowDenseStack) {
  std::vector<LayerSpec> specs;
  for (int i = 0; i < 2; ++i) {
    specs.emplace_back(layer::Dense{100});
    specs.emplace_back(layer::BatchNorm{});
    specs.emplace_back(layer::Activation{ActivationKind::alrelu()});
    specs.emplace_back(layer::Dropout{0.4f});
  }
  specs.emplace_back(layer::Dense{2});
  specs.emplace_back(layer::Softmax{});
  const Model m = build_model(specs, {8}, 2, 1);
  EXPECT_EQ(m.output_shapes.front(), (Shape{100}));
  EXPECT_EQ(m.output_shapes.back(), (Shape{2}));
  // 8*100+100, 2*100, 100*100+100, 2*100, 100*2+2
  EXPECT_EQ(m.parameter_count(), 11602u);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    ASSERT_EQ(m.params[i].size(), m.grads[i].size());
    for (std::size_t j = 0; j < m.params[i].size(); ++j) EXPECT_EQ(m.params[i][j].shape(), m.grads[i][j].shape());
  }
}

TEST(BuildModel, ValidConvShape) {
  const Model m = build_model({layer::Conv2D{32, 5}, layer::GlobalAvgPool{}, layer::Dense{2}, layer::Softmax{}},
                              {16, 16, 1}, 2, 3);
  EXPECT_EQ(m.output_shapes[0], (Shape{12, 12, 32}));
}

TEST(BuildModel, SameSeedSameParameters) {
  const auto specs = presets::small_cnn({16, 16, 1}, 3, ActivationKind::alrelu());
  EXPECT_EQ(build_model(specs, {16, 16, 1}, 3, 77).params, build_model(specs, {16, 16, 1}, 3, 77).params);
  EXPECT_NE(build_model(specs, {16, 16, 1}, 3, 77).params, build_model(specs, {16, 16, 1}, 3, 78).params);
}

TEST(BuildModel, HeInitStatistics) {
  const Model m = build_model({layer::Dense{400}, layer::Dense{2}, layer::Softmax{}}, {200}, 2, 5);
  const Tensor& w = m.params[0][0];
  double sum = 0.0, sq = 0.0;
  for (float v : w.data()) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(w.size());
  EXPECT_NEAR(sum / n, 0.0, 0.01);
  EXPECT_NEAR(std::sqrt(sq / n), std::sqrt(2.0 / 200.0), 0.002);
  for (float b : m.params[0][1].data()) EXPECT_EQ(b, 0.0f);
}

TEST(BuildModel, ShapeErrorNamesLayerIndex) {
  try {
    build_model({layer::Dense{4}, layer::Conv2D{2, 3}, layer::GlobalAvgPool{}, layer::Dense{2}, layer::Softmax{}},
                {8}, 2, 0);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("layer 1"), std::string::npos) << e.what();
  }
}

TEST(BuildModel, RejectsInvalidSpecs) {
  EXPECT_THROW(build_model({layer::Dense{3}, layer::Softmax{}}, {4}, 2, 0), ShapeError);
  EXPECT_THROW(build_model({layer::Dense{2}}, {4}, 2, 0), ShapeError);
  EXPECT_THROW(build_model({layer::Softmax{}, layer::Dense{2}, layer::Softmax{}}, {2}, 2, 0), ShapeError);
  EXPECT_THROW(build_model({layer::Dropout{1.0f}, layer::Dense{2}, layer::Softmax{}}, {4}, 2, 0), ShapeError);
  EXPECT_THROW(build_model({layer::Conv2D{2, 4}, layer::GlobalAvgPool{}, layer::Dense{2}, layer::Softmax{}},
                           {8, 8, 1}, 2, 0),
               ShapeError);
  EXPECT_THROW(build_model({layer::Conv2D{0, 3}, layer::GlobalAvgPool{}, layer::Dense{2}, layer::Softmax{}},
                           {8, 8, 1}, 2, 0),
               ShapeError);
  EXPECT_THROW(build_model({layer::Dense{1}, layer::Softmax{}}, {4}, 1, 0), ValidationError);
}

TEST(Forward, ProbabilityRowsSumToOne) {
  for (const auto& kind : kKinds) {
    Model m = build_model(presets::small_cnn({12, 12, 2}, 4, kind), {12, 12, 2}, 4, 9);
    const Tensor x = random_batch({7, 12, 12, 2}, 10);
    for (bool training : {true, false}) {
      const Tensor p = forward(m, x, training).probabilities;
      ASSERT_EQ(p.shape(), (Shape{7, 4}));
      for (std::size_t r = 0; r < 7; ++r) EXPECT_NEAR(row_sum(p, r), 1.0, 1e-5);
      for (float v : p.data()) EXPECT_GE(v, 0.0f);
    }
  }
}

TEST(Forward, ZeroRateDropoutMatchesInference) {
  const std::vector<LayerSpec> specs = {layer::Dense{6}, layer::Dropout{0.0f}, layer::Activation{ActivationKind::alrelu()},
                                        layer::Dense{3}, layer::Softmax{}};
  Model m = build_model(specs, {5}, 3, 4);
  const Tensor x = random_batch({4, 5}, 2);
  EXPECT_EQ(forward(m, x, true).probabilities, forward(m, x, false).probabilities);
}

TEST(Forward, AllOnesConvolution) {
  Model m = build_model({layer::Conv2D{1, 3}, layer::GlobalAvgPool{}, layer::Dense{2}, layer::Softmax{}}, {5, 5, 1},
                        2, 0);
  m.params[0][0].fill(1.0f);
  const ForwardResult r = forward(m, Tensor(Shape{1, 5, 5, 1}, 1.0f), false);
  const Tensor& conv_out = r.cache.layers[1].input;
  EXPECT_EQ(conv_out.shape(), (Shape{1, 3, 3, 1}));
  for (float v : conv_out.data()) EXPECT_EQ(v, 9.0f);
}

TEST(Forward, InputShapeMismatch) {
  Model m = build_model({layer::Dense{2}, layer::Softmax{}}, {4}, 2, 0);
  EXPECT_THROW(forward(m, Tensor(Shape{3, 5}), false), ShapeError);
  EXPECT_THROW(predict_proba(m, Tensor(Shape{3, 5})), ShapeError);
}

TEST(Backward, MatchesFiniteDifferencesOnRandomTinyModels) {
  for (std::uint64_t seed = 100; seed < 104; ++seed) {
    for (const auto& kind : kKinds) {
      const auto cnn = tiny_cnn_problem(kind, seed);
      ASSERT_LE(cnn.model.parameter_count(), 500u);
      const auto c = check_model_gradients("cnn", cnn.model, cnn.batch, cnn.labels, 1e-2, 1e-4);
      EXPECT_TRUE(c.passed) << activation_name(kind) << " seed " << seed << " rel " << c.max_error << " abs "
                            << c.max_abs_error;
      EXPECT_GT(c.checked, c.skipped);
      const auto mlp = tiny_dense_problem(kind, seed);
      const auto d = check_model_gradients("mlp", mlp.model, mlp.batch, mlp.labels, 1e-2, 1e-4);
      EXPECT_TRUE(d.passed) << activation_name(kind) << " seed " << seed << " rel " << d.max_error << " abs "
                            << d.max_abs_error;
    }
  }
}

TEST(Backward, ConfidentCorrectPredictionHasTinyLoss) {
  const Tensor p(Shape{2, 2}, {1.0f, 0.0f, 0.0f, 1.0f});
  EXPECT_LE(cross_entropy(p, p), 1e-6);
}

TEST(Backward, UniformPredictionLossIsLn2) {
  Model m = build_model({layer::Dense{2}, layer::Softmax{}}, {3}, 2, 0);
  m.params[0][0].fill(0.0f);
  const Tensor x = random_batch({4, 3}, 1);
  const std::vector<std::size_t> labels{0, 1, 1, 0};
  const ForwardResult r = forward(m, x, true);
  EXPECT_NEAR(backward(m, r.cache, one_hot(labels, 2)), std::numbers::ln2, 1e-6);
}

TEST(Backward, LabelShapeMismatch) {
  Model m = build_model({layer::Dense{2}, layer::Softmax{}}, {3}, 2, 0);
  const ForwardResult r = forward(m, random_batch({4, 3}, 1), true);
  EXPECT_THROW(backward(m, r.cache, Tensor(Shape{4, 3})), ShapeError);
  EXPECT_THROW(backward(m, r.cache, Tensor(Shape{3, 2})), ShapeError);
}

TEST(Optimizer, ZeroLearningRateLeavesParametersBitIdentical) {
  for (Optimizer opt : {Optimizer{Sgd{}}, Optimizer{Adam{}}}) {
    Model m = build_model(presets::shallow_dense(2, ActivationKind::alrelu()), {4}, 2, 3);
    const auto before = m.params;
    std::vector<std::size_t> labels{0, 1, 0, 1, 1};
    for (int step = 0; step < 3; ++step) {
      const ForwardResult r = forward(m, random_batch({5, 4}, step), true);
      backward(m, r.cache, one_hot(labels, 2));
      TrainConfig cfg;
      cfg.learning_rate = 0.0;
      cfg.optimizer = opt;
      apply_gradients(m, cfg);
    }
    EXPECT_EQ(m.params, before);
  }
  TrainConfig bad;
  bad.learning_rate = 0.0;
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(BatchNorm, TrainingModeNormalizesEachFeature) {
  Model m = build_model({layer::Dense{5}, layer::BatchNorm{}, layer::Dense{2}, layer::Softmax{}}, {3}, 2, 8);
  Tensor x = random_batch({64, 3}, 21);
  for (auto& v : x.data()) v = 4.0f * v + 7.0f;
  const ForwardResult r = forward(m, x, true);
  const Tensor& xhat = r.cache.layers[1].aux;
  for (std::size_t f = 0; f < 5; ++f) {
    double mean = 0.0, var = 0.0;
    for (std::size_t i = 0; i < 64; ++i) mean += xhat[i * 5 + f];
    mean /= 64;
    for (std::size_t i = 0; i < 64; ++i) var += (xhat[i * 5 + f] - mean) * (xhat[i * 5 + f] - mean);
    var /= 64;
    EXPECT_NEAR(mean, 0.0, 1e-3);
    EXPECT_NEAR(var, 1.0, 1e-2);
  }
}

class BlobTraining : public ::testing::Test {
 protected:
  static constexpr std::uint64_t kSeed = 42;
  Dataset train_ = make_blobs(100, 2, 2, 10.0, 1);
  TrainConfig cfg_ = [] {
    TrainConfig c;
    c.seed = kSeed;
    return c;
  }();
};

TEST_F(BlobTraining, ShallowDenseConvergesForEveryKind) {
  const Dataset held_out = make_blobs(50, 2, 2, 10.0, 2);
  for (const auto& kind : kKinds) {
    Model m = build_model(presets::shallow_dense(2, kind), {2}, 2, kSeed);
    fit(m, train_, cfg_);
    EXPECT_GE(train_accuracy(m, train_), 0.99) << activation_name(kind);
    EXPECT_GE(train_accuracy(m, held_out), 0.95) << activation_name(kind);
  }
}

TEST_F(BlobTraining, RerunsAreBitIdentical) {
  Model a = build_model(presets::shallow_dense(2, ActivationKind::alrelu()), {2}, 2, kSeed);
  Model b = build_model(presets::shallow_dense(2, ActivationKind::alrelu()), {2}, 2, kSeed);
  const auto ha = fit(a, train_, cfg_);
  const auto hb = fit(b, train_, cfg_);
  EXPECT_EQ(ha, hb);
  EXPECT_EQ(a, b);
}

TEST_F(BlobTraining, AlreluNeverHasDeadUnits) {
  Model m = build_model(presets::shallow_dense(2, ActivationKind::alrelu()), {2}, 2, kSeed);
  for (const auto& s : fit(m, train_, cfg_)) EXPECT_EQ(s.dead_unit_count, 0u);
}

TEST_F(BlobTraining, PredictProbaIsPureAndNormalized) {
  Model m = build_model(presets::shallow_dense(2, ActivationKind::alrelu()), {2}, 2, kSeed);
  fit(m, train_, cfg_);
  const Model before = m;
  const Tensor p1 = predict_proba(m, train_.features, 7);
  const Tensor p2 = predict_proba(m, train_.features);
  EXPECT_EQ(p1, p2);
  EXPECT_EQ(m, before);
  for (std::size_t r = 0; r < p1.extent(0); ++r) EXPECT_NEAR(row_sum(p1, r), 1.0, 1e-5);
}

TEST(DeadUnits, HostileInitKillsReluButNotAlrelu) {
  const Dataset d = make_dying_relu_stress(200, 8, 3);
  TrainConfig cfg;
  cfg.seed = 5;
  cfg.epochs = 1;
  auto dead_after_epoch_one = [&](const ActivationKind& kind) {
    Model m = build_model(presets::stress_dense(2, 32, kind), {8}, 2, 6);
    set_biases(m, -10.0f);
    return train_epoch(m, d, cfg).dead_unit_count;
  };
  const auto relu = dead_after_epoch_one(ActivationKind::relu());
  const auto alrelu = dead_after_epoch_one(ActivationKind::alrelu());
  EXPECT_GT(relu, 0u);
  EXPECT_EQ(alrelu, 0u);
  EXPECT_GE(relu, alrelu);
  EXPECT_EQ(dead_after_epoch_one(ActivationKind::lrelu()), 0u);
}

TEST(TrainEpoch, ClassCountMismatch) {
  Model m = build_model({layer::Dense{3}, layer::Softmax{}}, {2}, 3, 0);
  EXPECT_THROW(train_epoch(m, make_blobs(5, 2, 2, 1.0, 0), TrainConfig{}), ValidationError);
}

}  // namespace
}  // namespace alrelu
