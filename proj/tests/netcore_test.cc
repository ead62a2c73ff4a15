/*
 * Copyright 2026 The DeltaForge Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "deltaforge/error.h"
#include "deltaforge/netcore.h"
#include "deltaforge/verify.h"
#include "test_support.h"

namespace deltaforge {
namespace {

using testing::CentralDifferences;
using testing::ReferenceForward;
using testing::ReferenceLoss;

ModelSpec TwoLayerSpec() {
  return ModelSpec({2, 6, 6}, {LayerDesc::Conv2D(2, 3, 3, 3, 1, 1), LayerDesc::Relu(),
                               LayerDesc::MaxPool2(), LayerDesc::Flatten(),
                               LayerDesc::FullyConnected(27, 4)});
}

ParamStore SeededParams(const ModelSpec& spec, std::uint64_t seed) {
  auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kWeightInit);
  ParamStore p = InitializeParams(spec, rng);
  for (const auto& t : spec.targeted()) {
    for (double& b : p.at(BiasName(t.id)).values) b = rng.Uniform(-0.2, 0.2);
  }
  return p;
}

Batch RandomBatch(const Shape3& shape, std::size_t n, std::size_t classes, std::uint64_t seed) {
  Xoshiro256StarStar rng(seed);
  Batch b;
  b.n = n;
  b.shape = shape;
  b.images.resize(n * shape.size());
  for (double& x : b.images) x = rng.NextUnit();
  for (std::size_t k = 0; k < n; ++k) b.labels.push_back(static_cast<int>(rng.Below(classes)));
  return b;
}

TEST(ModelSpec, TinyNetShapesAndCounts) {
  const ModelSpec spec = ModelSpec::TinyNet();
  ASSERT_EQ(spec.targeted().size(), 3u);
  EXPECT_EQ(spec.targeted()[0].rows, 8u);
  EXPECT_EQ(spec.targeted()[0].cols, 9u);
  EXPECT_EQ(spec.targeted()[1].rows, 16u);
  EXPECT_EQ(spec.targeted()[1].cols, 72u);
  EXPECT_EQ(spec.targeted()[2].rows, 10u);
  EXPECT_EQ(spec.targeted()[2].cols, 784u);
  EXPECT_EQ(spec.num_classes(), 10u);
  // 8*9+8 + 16*72+16 + 10*784+10
  EXPECT_EQ(ZeroParams(spec).LearnableScalarCount(), 9098u);
}

TEST(ModelSpec, RejectsNonConformableLayers) {
  try {
    ModelSpec({1, 4, 4}, {LayerDesc::Conv2D(2, 3, 3, 3, 1, 1)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
  try {
    ModelSpec({1, 4, 4}, {LayerDesc::Flatten(), LayerDesc::FullyConnected(15, 2)});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(Forward, ZeroWeightsGiveUniformSoftmax) {
  const ModelSpec spec = ModelSpec::TinyNet();
  const Batch b = RandomBatch(spec.input(), 3, 10, 1);
  const Matrix logits = Logits(Network(spec), ZeroParams(spec), b);
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(Loss(Network(spec), ZeroParams(spec), b), std::log(10.0), 1e-15);
}

TEST(Forward, IdentityFullyConnectedLayer) {
  const ModelSpec spec({5, 1, 1}, {LayerDesc::FullyConnected(5, 5)});
  ParamStore p = ZeroParams(spec);
  p.SetValues(WeightName(1), Matrix::Identity(5).data());
  Batch b;
  b.n = 1;
  b.shape = spec.input();
  b.images = {0, 0, 0, 1, 0};
  const Matrix logits = Logits(Network(spec), p, b);
  EXPECT_EQ(logits.data(), (std::vector<double>{0, 0, 0, 1, 0}));
}

TEST(Forward, MatchesStraightLineReference) {
  for (const ModelSpec& spec : {TwoLayerSpec(), SmallCheckSpec(), ModelSpec::TinyNet()}) {
    const ParamStore p = SeededParams(spec, 3);
    const Batch b = RandomBatch(spec.input(), 4, spec.num_classes(), 8);
    const Matrix logits = Logits(Network(spec), p, b);
    for (std::size_t n = 0; n < b.n; ++n) {
      const std::vector<double> ref = ReferenceForward(
          spec, b.example(n), [&](int id) { return p.GetMatrix(WeightName(id)); },
          [&](int id) { return p.at(BiasName(id)).values; });
      for (std::size_t c = 0; c < ref.size(); ++c) EXPECT_NEAR(logits(n, c), ref[c], 1e-12);
    }
  }
}

TEST(Forward, DeterministicBits) {
  const ModelSpec spec = TwoLayerSpec();
  const ParamStore p = SeededParams(spec, 4);
  const Batch b = RandomBatch(spec.input(), 5, 4, 2);
  EXPECT_EQ(Logits(Network(spec), p, b), Logits(Network(spec), p, b));
}

TEST(Forward, RejectsMismatchedBatch) {
  const ModelSpec spec = TwoLayerSpec();
  const Batch b = RandomBatch({1, 6, 6}, 2, 4, 2);
  try {
    Logits(Network(spec), SeededParams(spec, 1), b);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(Forward, MaxPoolTiesRouteToFirstElement) {
  // A constant image makes all four pooled inputs equal; the gradient must
  // land on the top-left element of each window only.
  const ModelSpec spec({1, 2, 2}, {LayerDesc::MaxPool2(), LayerDesc::Flatten(),
                                   LayerDesc::FullyConnected(1, 2)});
  ParamStore p = ZeroParams(spec);
  p.SetValues(WeightName(1), {1.0, -1.0});
  Batch b;
  b.n = 1;
  b.shape = spec.input();
  b.images = {0.5, 0.5, 0.5, 0.5};
  b.labels = {0};
  const ForwardResult fr = Forward(Network(spec), p, b);
  ASSERT_EQ(fr.cache.argmax.size(), spec.layers().size());
  ASSERT_EQ(fr.cache.argmax[0].size(), 1u);
  EXPECT_EQ(fr.cache.argmax[0][0], 0u);
}

TEST(Loss, UniformLogitsGradientIsClosedForm) {
  const Matrix logits(2, 4);
  const std::vector<int> labels = {1, 3};
  Matrix grad;
  const double loss = SoftmaxCrossEntropy(logits, labels, &grad);
  EXPECT_NEAR(loss, std::log(4.0), 1e-15);
  for (std::size_t n = 0; n < 2; ++n) {
    for (std::size_t c = 0; c < 4; ++c) {
      const double onehot = static_cast<int>(c) == labels[n] ? 1.0 : 0.0;
      EXPECT_NEAR(grad(n, c), (0.25 - onehot) / 2.0, 1e-15);
    }
  }
}

TEST(Loss, MatchesReferenceCrossEntropy) {
  const ModelSpec spec = TwoLayerSpec();
  const ParamStore p = SeededParams(spec, 6);
  const Batch b = RandomBatch(spec.input(), 6, 4, 3);
  std::vector<std::vector<double>> logits;
  for (std::size_t n = 0; n < b.n; ++n) {
    logits.push_back(ReferenceForward(
        spec, b.example(n), [&](int id) { return p.GetMatrix(WeightName(id)); },
        [&](int id) { return p.at(BiasName(id)).values; }));
  }
  EXPECT_NEAR(Loss(Network(spec), p, b), ReferenceLoss(logits, b.labels), 1e-12);
}

TEST(LossAndGrad, DenseGradientsMatchFiniteDifferences) {
  const ModelSpec spec = TwoLayerSpec();
  const ParamStore p = SeededParams(spec, 9);
  const Batch b = RandomBatch(spec.input(), 5, 4, 4);
  const Network net(spec);
  const LossGrad lg = LossAndGrad(net, p, b);
  const auto check =
      CentralDifferences([&](const ParamStore& q) { return Loss(net, q, b); }, p, lg.grads);
  EXPECT_EQ(check.checked, p.LearnableScalarCount());
  EXPECT_LE(check.worst_ratio, 1.0) << check.worst_at;
}

TEST(LossAndGrad, GradientsCoverExactlyTheLearnableSet) {
  const ModelSpec spec = TwoLayerSpec();
  ParamStore p = SeededParams(spec, 2);
  const Batch b = RandomBatch(spec.input(), 2, 4, 5);
  const LossGrad lg = LossAndGrad(Network(spec), p, b);
  std::vector<std::string> keys;
  for (const auto& [k, v] : lg.grads) keys.push_back(k);
  std::vector<std::string> learnable = p.LearnableNames();
  std::sort(learnable.begin(), learnable.end());
  EXPECT_EQ(keys, learnable);
}

TEST(Reshape, FullyConnectedIsIdentity) {
  const LayerDesc fc = LayerDesc::FullyConnected(3, 2);
  const std::vector<std::size_t> shape = {2, 3};
  const std::vector<double> values = {1, 2, 3, 4, 5, 6};
  const Matrix m = WeightToMatrix(fc, shape, values);
  EXPECT_EQ(m, Matrix(2, 3, values));
}

TEST(Reshape, ConvRoundTripAndColumnOrder) {
  const LayerDesc conv = LayerDesc::Conv2D(3, 2, 2, 2, 1, 0);
  const std::vector<std::size_t> shape = {2, 3, 2, 2};
  std::vector<double> values(24);
  std::iota(values.begin(), values.end(), 0.0);
  const Matrix m = WeightToMatrix(conv, shape, values);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 12u);
  std::vector<std::size_t> back_shape;
  EXPECT_EQ(MatrixToWeight(conv, m, &back_shape), values);
  EXPECT_EQ(back_shape, shape);
  // Tensor element (o=1, c=2, kh=0, kw=1) sits at flat index ((1*3+2)*2+0)*2+1.
  const double element = values[((1 * 3 + 2) * 2 + 0) * 2 + 1];
  EXPECT_EQ(m(1, 2 * 4 + 0 * 2 + 1), element);
}

TEST(Reshape, ShapeMismatchIsAnError) {
  const LayerDesc conv = LayerDesc::Conv2D(3, 2, 2, 2, 1, 0);
  const std::vector<std::size_t> shape = {2, 3, 2};
  try {
    WeightToMatrix(conv, shape, std::vector<double>(12));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShape);
  }
}

TEST(MomentumSgd, ZeroLearningRateLeavesParamsUnchanged) {
  const ModelSpec spec = TwoLayerSpec();
  ParamStore p = SeededParams(spec, 1);
  const ParamStore before = p;
  const LossGrad lg = LossAndGrad(Network(spec), p, RandomBatch(spec.input(), 2, 4, 1));
  MomentumSgd(0.0, 0.9).Step(p, lg.grads);
  EXPECT_EQ(p, before);
}

TEST(MomentumSgd, PlainStepWithoutMomentum) {
  ParamStore p;
  p.Add("w", {2}, {1.0, -2.0}, ParamClass::kLearnable);
  MomentumSgd(0.5, 0.0).Step(p, {{"w", {0.25, 4.0}}});
  EXPECT_EQ(p.at("w").values, (std::vector<double>{1.0 - 0.5 * 0.25, -2.0 - 0.5 * 4.0}));
}

TEST(MomentumSgd, TwoStepsFollowTheRecurrence) {
  ParamStore p;
  p.Add("p", {1}, {0.0}, ParamClass::kLearnable);
  MomentumSgd sgd(0.1, 0.9);
  sgd.Step(p, {{"p", {1.0}}});
  EXPECT_NEAR(p.at("p").values[0], -0.1, 1e-15);
  sgd.Step(p, {{"p", {1.0}}});
  EXPECT_NEAR(p.at("p").values[0], -0.29, 1e-15);
}

TEST(MomentumSgd, FrozenEntriesUntouchedAndKeyMismatchRejected) {
  ParamStore p;
  p.Add("a", {1}, {1.0}, ParamClass::kLearnable);
  p.Add("f", {1}, {3.0}, ParamClass::kFrozen);
  MomentumSgd sgd(0.1, 0.9);
  sgd.Step(p, {{"a", {1.0}}});
  EXPECT_EQ(p.at("f").values[0], 3.0);
  for (const Gradients& bad : {Gradients{}, Gradients{{"a", {1.0}}, {"f", {1.0}}},
                               Gradients{{"a", {1.0, 2.0}}}}) {
    try {
      sgd.Step(p, bad);
      FAIL();
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kConsistency);
    }
  }
}

TEST(MomentumSgd, MaskedPositionsNeverMove) {
  ParamStore p;
  p.Add("a", {3}, {1.0, 2.0, 3.0}, ParamClass::kLearnable);
  const ScalarMasks masks = {{"a", {1, 0, 1}}};
  MomentumSgd sgd(0.1, 0.9);
  for (int k = 0; k < 3; ++k) sgd.Step(p, {{"a", {1.0, 1.0, 1.0}}}, &masks);
  EXPECT_EQ(p.at("a").values[1], 2.0);
  EXPECT_NE(p.at("a").values[0], 1.0);
}

TEST(Train, LossDecreasesOnSeparableToyProblem) {
  const ModelSpec spec({2, 1, 1}, {LayerDesc::FullyConnected(2, 2)});
  ParamStore p = ZeroParams(spec);
  Xoshiro256StarStar rng(5);
  Batch b;
  b.shape = spec.input();
  for (int k = 0; k < 40; ++k) {
    const int label = k % 2;
    b.images.push_back((label == 0 ? 1.0 : 0.0) + rng.Uniform(-0.1, 0.1));
    b.images.push_back((label == 1 ? 1.0 : 0.0) + rng.Uniform(-0.1, 0.1));
    b.labels.push_back(label);
  }
  b.n = 40;
  const Network net(spec);
  const double initial = Loss(net, p, b);
  MomentumSgd sgd(0.1, 0.9);
  for (int step = 0; step < 50; ++step) sgd.Step(p, LossAndGrad(net, p, b).grads);
  EXPECT_LT(Loss(net, p, b), initial);
}

TEST(Train, DivergenceIsReported) {
  const ModelSpec spec = TwoLayerSpec();
  ParamStore p = SeededParams(spec, 1);
  const Dataset data = RandomDataset(spec.input(), 32, 4, 3);
  TrainOptions options;
  options.lr = 1e200;
  options.epochs = 3;
  try {
    Train(Network(spec), p, data, options);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDivergence);
  }
}

TEST(Evaluate, ConstantPredictorOnSingleClassData) {
  const ModelSpec spec({2, 1, 1}, {LayerDesc::FullyConnected(2, 3)});
  ParamStore p = ZeroParams(spec);
  p.SetValues(BiasName(1), {0.0, 0.0, 1.0});
  const Dataset data({2, 1, 1}, std::vector<std::uint8_t>(20, 7),
                     std::vector<std::uint8_t>(10, 2), 3, "const");
  EXPECT_EQ(Evaluate(Network(spec), p, data), 1.0);
}

TEST(Evaluate, RandomNetIsNearChanceOnBalancedData) {
  const ModelSpec spec = ModelSpec::TinyNet();
  auto rng = Xoshiro256StarStar::ForStream(3, RngStream::kWeightInit);
  const ParamStore p = InitializeParams(spec, rng);
  Xoshiro256StarStar pix(4);
  std::vector<std::uint8_t> pixels(1000 * 784);
  for (auto& x : pixels) x = static_cast<std::uint8_t>(pix.Below(256));
  std::vector<std::uint8_t> labels(1000);
  for (std::size_t k = 0; k < labels.size(); ++k) labels[k] = static_cast<std::uint8_t>(k % 10);
  const Dataset data(spec.input(), pixels, labels, 10, "noise");
  EXPECT_NEAR(Evaluate(Network(spec), p, data), 0.1, 0.05);
}

TEST(Evaluate, PerfectLogitsAndLowestIndexTies) {
  const Matrix onehot(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  const std::vector<int> labels = {0, 1, 2};
  EXPECT_EQ(Accuracy(onehot, labels), 1.0);
  const std::vector<double> tied = {0.5, 2.0, 2.0, 1.0};
  EXPECT_EQ(ArgMax(tied), 1u);
}

TEST(Evaluate, EmptyDatasetIsInvalid) {
  const ModelSpec spec({2, 1, 1}, {LayerDesc::FullyConnected(2, 3)});
  try {
    Evaluate(Network(spec), ZeroParams(spec), Dataset({2, 1, 1}, {}, {}, 3, "empty"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidInput);
  }
}

}  // namespace
}  // namespace deltaforge
