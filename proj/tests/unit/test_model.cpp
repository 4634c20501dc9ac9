#include <gtest/gtest.h>

#include <cmath>

#include "saf/model.hpp"
#include "../support/gradcheck.hpp"

namespace saf {
namespace {

using testing::random_tensor;

TEST(Zoo, LayerCounts) {
  EXPECT_EQ(model_spec(DatasetKind::Mnist, Variant::Plain).layer_count(), 8u);
  EXPECT_EQ(model_spec(DatasetKind::Mnist, Variant::Rbf).layer_count(), 11u);
  EXPECT_EQ(model_spec(DatasetKind::Mnist, Variant::MRelu).layer_count(), 11u);
  EXPECT_EQ(model_spec(DatasetKind::Cifar10, Variant::Plain).layer_count(), 10u);
  EXPECT_EQ(model_spec(DatasetKind::Cifar10, Variant::Rbf).layer_count(), 14u);
  EXPECT_EQ(model_spec(DatasetKind::Cifar10, Variant::MRelu).layer_count(), 14u);
}

TEST(Zoo, LayerSequences) {
  EXPECT_EQ(model_spec(DatasetKind::Mnist, Variant::Plain).describe(), "cv1 max cv2 max fc1 ReLU fc2 sloss");
  EXPECT_EQ(model_spec(DatasetKind::Mnist, Variant::MRelu).describe(),
            "cv1 mReLU max cv2 mReLU max fc1 ReLU fc2 1-D RBF hloss");
  EXPECT_EQ(model_spec(DatasetKind::Cifar10, Variant::Rbf).describe(),
            "cv1 1-D RBF max cv2 1-D RBF avg cv3 1-D RBF avg fc1 ReLU fc2 1-D RBF hloss");
  EXPECT_EQ(model_spec(DatasetKind::Cifar10, Variant::Plain).describe(),
            "cv1 max cv2 avg cv3 avg fc1 ReLU fc2 sloss");
}

TEST(Zoo, ShapesAndWidths) {
  const auto mnist = model_spec(DatasetKind::Mnist, Variant::MRelu);
  EXPECT_EQ(mnist.layers[0].outputs, 20u);
  EXPECT_EQ(mnist.layers[0].kernel, 5u);
  EXPECT_EQ(mnist.layers[3].outputs, 50u);
  EXPECT_EQ(mnist.layers[6].outputs, 500u);
  EXPECT_TRUE(mnist.robust());
  EXPECT_EQ(mnist.loss_kind(), LossKind::Hybrid);
  Model<float> m(mnist);
  EXPECT_EQ(m.shape_in(0), (Shape{1, 28, 28}));
  EXPECT_EQ(m.shape_in(mnist.layer_count() - 1), (Shape{10}));

  const auto cifar = model_spec(DatasetKind::Cifar10, Variant::Plain);
  EXPECT_FALSE(cifar.robust());
  EXPECT_EQ(cifar.layers[0].outputs, 32u);
  EXPECT_EQ(cifar.layers[4].outputs, 64u);
  EXPECT_EQ(cifar.layers[6].outputs, 64u);
  EXPECT_NO_THROW(Model<float>{cifar});
}

TEST(Zoo, BatchNormDefaults) {
  auto has_bn = [](const ModelSpec& s) {
    for (const auto& l : s.layers)
      if (l.batch_norm) return true;
    return false;
  };
  EXPECT_FALSE(has_bn(model_spec(DatasetKind::Mnist, Variant::Plain)));
  EXPECT_TRUE(has_bn(model_spec(DatasetKind::Mnist, Variant::Rbf)));
  EXPECT_TRUE(has_bn(model_spec(DatasetKind::Mnist, Variant::Plain, {true})));
  EXPECT_FALSE(has_bn(model_spec(DatasetKind::Cifar10, Variant::MRelu, {false})));
}

TEST(Zoo, InconsistentSpecThrows) {
  auto spec = model_spec(DatasetKind::Mnist, Variant::Plain);
  spec.num_classes = 7;
  EXPECT_THROW(Model<float>{spec}, ConfigError);
  spec = model_spec(DatasetKind::Mnist, Variant::Plain);
  spec.layers.pop_back();
  EXPECT_THROW(Model<float>{spec}, ConfigError);
}

TEST(Forward, ZeroWeightRobustModelScoresOne) {
  for (auto ds : {DatasetKind::Mnist, DatasetKind::Cifar10}) {
    Model<float> m(model_spec(ds, Variant::MRelu));
    m.initialize(3);
    for (auto& p : m.parameters()) p.value->fill(0.0f);
    const auto s = m.spec();
    auto x = random_tensor({2, s.channels, s.height, s.width}, 1, 0.0, 255.0).cast<float>();
    const auto scores = forward(m, x);
    for (float v : scores.data()) EXPECT_EQ(v, 1.0f);
  }
}

TEST(Forward, RobustScoresInUnitInterval) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Rbf));
  m.initialize(11);
  auto x = random_tensor({8, 1, 28, 28}, 2, 0.0, 255.0).cast<float>();
  const auto scores = forward(m, x);
  EXPECT_EQ(scores.shape(), (Shape{8, 10}));
  for (float v : scores.data()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(Forward, PlainConfidencesSumToOne) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Plain));
  m.initialize(5);
  auto x = random_tensor({3, 1, 28, 28}, 4, 0.0, 255.0).cast<float>();
  const auto scores = forward(m, x).cast<double>();
  for (std::size_t n = 0; n < 3; ++n) {
    const auto c = confidences(m.spec(), std::span<const double>(scores.raw() + n * 10, 10));
    double sum = 0.0;
    for (double v : c) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
}

TEST(Forward, DeterministicInEvalMode) {
  Model<float> m(model_spec(DatasetKind::Cifar10, Variant::MRelu));
  m.initialize(9);
  auto x = random_tensor({4, 3, 32, 32}, 6, 0.0, 255.0).cast<float>();
  EXPECT_EQ(forward(m, x), forward(m, x));
  Model<float> again(model_spec(DatasetKind::Cifar10, Variant::MRelu));
  again.initialize(9);
  EXPECT_EQ(forward(again, x), forward(m, x));
}

TEST(Forward, WrongInputShapeThrows) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Plain));
  EXPECT_THROW(forward(m, Tensor<float>({2, 3, 28, 28})), DimensionError);
  EXPECT_THROW(forward(m, Tensor<float>({2, 28, 28})), DimensionError);
}

TEST(Init, HeNormalStatistics) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::Plain));
  m.initialize(21);
  const auto& fc1 = m.layers()[4].weights;  // 500 x 800
  double sum = 0.0, sq = 0.0;
  for (float v : fc1.data()) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(fc1.size());
  const double var = sq / n - (sum / n) * (sum / n);
  EXPECT_NEAR(var, 2.0 / 800.0, 0.02 * 2.0 / 800.0);
  for (float v : m.layers()[4].bias.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Backward, ScalarChainRule) {
  // One linear unit followed by the RBF output: y = exp(-(w x s + b)^2).
  ModelSpec s;
  s.num_classes = 1;
  LayerSpec fc;
  fc.kind = LayerKind::Linear;
  fc.name = "fc";
  fc.outputs = 1;
  LayerSpec rbf;
  rbf.kind = LayerKind::Activation;
  rbf.name = "rbf";
  rbf.activation = Activation::Rbf1d;
  LayerSpec loss;
  loss.kind = LayerKind::Loss;
  loss.name = "loss";
  loss.loss = LossKind::Hybrid;
  s.layers = {fc, rbf, loss};
  s.input_scale = 0.5;
  Model<double> m(s);
  m.layers()[0].weights[0] = 0.7;
  m.layers()[0].bias[0] = -0.2;
  Tensor<double> x({1, 1, 1, 1}, 3.0);
  ForwardTrace<double> trace;
  const auto y = forward(m, x, &trace);
  const double z = 0.7 * 1.5 - 0.2;
  EXPECT_DOUBLE_EQ(y[0], std::exp(-z * z));
  const auto g = backward(m, trace, Tensor<double>({1, 1}, 1.0));
  const double dz = -2.0 * z * std::exp(-z * z);
  EXPECT_NEAR(g.params[0][0], dz * 1.5, 1e-15);
  EXPECT_NEAR(g.params[1][0], dz, 1e-15);
  EXPECT_NEAR(g.input[0], dz * 0.7 * 0.5, 1e-15);
}

TEST(Backward, ZeroUpstreamGivesZeroGrads) {
  Model<double> m(testing::tiny_robust_spec(Activation::MRelu));
  m.initialize(1);
  ForwardTrace<double> trace;
  auto x = random_tensor({3, 1, 4, 4}, 2, 0.0, 255.0);
  forward_train(m, x, trace);
  const auto g = backward(m, trace, Tensor<double>({3, 3}));
  for (const auto& p : g.params)
    for (double v : p.data()) EXPECT_EQ(v, 0.0);
  for (double v : g.input.data()) EXPECT_EQ(v, 0.0);
}

TEST(Backward, TinyNetworkFiniteDifferences) {
  for (int s = 0; s < 20; ++s) {
    const auto rbf = testing::check_network(testing::tiny_robust_spec(Activation::Rbf1d), s);
    EXPECT_LT(rbf.input, 1e-4) << s;
    EXPECT_LT(rbf.worst(), 1e-3) << s;
    const auto mrelu = testing::check_network(testing::tiny_robust_spec(Activation::MRelu), s);
    EXPECT_LT(mrelu.input, 1e-4) << s;
    EXPECT_LT(mrelu.worst(), 1e-3) << s;
    EXPECT_LT(testing::check_network(testing::tiny_plain_spec(), s).worst(), 1e-4) << s;
  }
}

TEST(Backward, EvalModeInputGradientMatchesJacobian) {
  Model<double> m(testing::tiny_robust_spec(Activation::Rbf1d));
  m.initialize(4);
  auto x = random_tensor({2, 1, 4, 4}, 3, 0.0, 255.0);
  Tensor<double> scores;
  const auto jac = input_jacobian(m, x, &scores);
  EXPECT_EQ(jac.shape(), (Shape{2, 3, 1, 4, 4}));
  for (std::size_t j = 0; j < 3; ++j) {
    Tensor<double> up({2, 3});
    up[j] = up[3 + j] = 1.0;
    ForwardTrace<double> trace;
    forward(m, x, &trace);
    const auto g = backward(m, trace, up, {true, false});
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 16; ++k) EXPECT_DOUBLE_EQ(jac[(n * 3 + j) * 16 + k], g.input[n * 16 + k]);
  }
}

TEST(Decide, ThresholdRule) {
  std::vector<double> low(10, 0.01);
  EXPECT_EQ(decide(low).label, kNonsense);
  std::vector<double> one(10, 0.0);
  one[7] = 0.99;
  EXPECT_EQ(decide(one).label, 7);
  EXPECT_DOUBLE_EQ(decide(one).confidence, 0.99);
  std::vector<double> boundary{0.5, 0.4, 0.1};
  EXPECT_EQ(decide(boundary, 0.5).label, 0);
  EXPECT_EQ(decide(boundary, 0.500001).label, kNonsense);
  std::vector<double> tie{0.7, 0.7};
  EXPECT_EQ(decide(tie).label, 0);
}

TEST(Decide, PlainUsesSoftmaxRobustUsesRaw) {
  const auto plain = model_spec(DatasetKind::Mnist, Variant::Plain);
  const auto robust = model_spec(DatasetKind::Mnist, Variant::MRelu);
  std::vector<double> scores(10, 0.3);
  scores[2] = 0.6;
  EXPECT_EQ(decide(confidences(robust, scores)).label, 2);
  EXPECT_EQ(decide(confidences(plain, scores)).label, kNonsense);
  Tensor<float> batch({2, 10}, 0.0f);
  batch[3] = 20.0f;
  const auto d = decide_batch(plain, batch);
  EXPECT_EQ(d[0].label, 3);
  EXPECT_EQ(d[1].label, kNonsense);
}

TEST(Spec, JsonRoundTrip) {
  for (auto ds : {DatasetKind::Mnist, DatasetKind::Cifar10})
    for (auto v : {Variant::Plain, Variant::Rbf, Variant::MRelu}) {
      const auto spec = model_spec(ds, v);
      EXPECT_EQ(spec_from_json(spec_to_json(spec)), spec);
    }
  EXPECT_THROW(spec_from_json("{\"dataset\": 1}"), DataError);
  EXPECT_THROW(spec_from_json("not json"), DataError);
}

TEST(Spec, Names) {
  EXPECT_EQ(dataset_from_string("cifar10"), DatasetKind::Cifar10);
  EXPECT_EQ(variant_from_string("mrelu"), Variant::MRelu);
  EXPECT_THROW(variant_from_string("maxout"), ConfigError);
}

TEST(Model, NamedTensorsAndCast) {
  Model<float> m(model_spec(DatasetKind::Mnist, Variant::MRelu));
  m.initialize(2);
  const auto params = m.parameters();
  const auto named = m.named_tensors();
  EXPECT_EQ(params.size(), 2u * 4 + 2 * 2);  // conv w,b,gamma,beta; fc w,b
  EXPECT_EQ(named.size(), params.size() + 4);    // running mean/var per bn conv
  EXPECT_EQ(params[0].name, "cv1.weight");
  EXPECT_TRUE(params[0].decay);
  EXPECT_FALSE(params[1].decay);
  const auto back = m.cast<double>().cast<float>();
  for (std::size_t i = 0; i < named.size(); ++i) EXPECT_EQ(*back.named_tensors()[i].value, *named[i].value);
}

}  // namespace
}  // namespace saf
