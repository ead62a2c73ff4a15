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

// A small feed-forward network engine.
//
// Parameters live in a ParamStore as named tensors tagged learnable or
// frozen. Conv and FC layers ("targeted" layers, numbered 1..L in network
// order) do not read their weight tensor directly: each one asks a WeightMap
// to recover its o x i weight matrix from the store, and hands the gradient
// with respect to that matrix back to the same WeightMap. The dense map reads
// a single learnable tensor; factorised re-parameterisations plug in the same
// way, so the weight becomes an intermediate value rather than a leaf.

#ifndef DELTAFORGE_NETCORE_H_
#define DELTAFORGE_NETCORE_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "deltaforge/dataset.h"
#include "deltaforge/linalg.h"
#include "deltaforge/rng.h"

namespace deltaforge {

enum class LayerKind : std::uint8_t {
  kConv2D = 1,
  kFullyConnected = 2,
  kRelu = 3,
  kMaxPool2 = 4,
  kFlatten = 5,
};

struct LayerDesc {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_channels = 0;  // Conv2D: c_in; FC: d_in
  std::size_t out_channels = 0;  // Conv2D: c_out; FC: d_out
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  std::size_t stride = 1;
  std::size_t padding = 0;
  bool has_bias = false;

  static LayerDesc Conv2D(std::size_t c_in, std::size_t c_out, std::size_t k_h,
                          std::size_t k_w, std::size_t stride, std::size_t padding,
                          bool has_bias = true);
  static LayerDesc FullyConnected(std::size_t d_in, std::size_t d_out,
                                  bool has_bias = true);
  static LayerDesc Relu();
  static LayerDesc MaxPool2();
  static LayerDesc Flatten();

  bool targeted() const {
    return kind == LayerKind::kConv2D || kind == LayerKind::kFullyConnected;
  }
  friend bool operator==(const LayerDesc&, const LayerDesc&) = default;
};

// A Conv or FC layer viewed as an o x i weight matrix.
struct TargetedLayer {
  int id = 0;                    // 1-based, network order
  std::size_t layer_index = 0;   // position in ModelSpec::layers()
  std::size_t rows = 0;          // o
  std::size_t cols = 0;          // i
  bool has_bias = false;
};

class ModelSpec {
 public:
  ModelSpec() = default;
  // Throws kShape if adjacent layers are not conformable for `input`.
  ModelSpec(Shape3 input, std::vector<LayerDesc> layers);

  // Conv(1->8,3x3,pad 1) ReLU MaxPool Conv(8->16,3x3,pad 1) ReLU MaxPool
  // Flatten FC(784->10).
  static ModelSpec TinyNet();

  const Shape3& input() const { return input_; }
  const std::vector<LayerDesc>& layers() const { return layers_; }
  // Output shape of layer k (flattened layers report c = features, h = w = 1).
  const Shape3& output_shape(std::size_t k) const { return shapes_[k + 1]; }
  const Shape3& input_shape(std::size_t k) const { return shapes_[k]; }
  std::size_t num_classes() const { return shapes_.back().size(); }
  const std::vector<TargetedLayer>& targeted() const { return targeted_; }
  const TargetedLayer& targeted_layer(int id) const;

  friend bool operator==(const ModelSpec& a, const ModelSpec& b) {
    return a.input_ == b.input_ && a.layers_ == b.layers_;
  }

 private:
  Shape3 input_;
  std::vector<LayerDesc> layers_;
  std::vector<Shape3> shapes_;
  std::vector<TargetedLayer> targeted_;
};

std::string WeightName(int layer_id);
std::string BiasName(int layer_id);
// Name of a re-parameterisation tensor, e.g. FactorName(2, "L") -> "layer2.L".
std::string FactorName(int layer_id, const std::string& factor);

enum class ParamClass : std::uint8_t { kLearnable = 0, kFrozen = 1 };

struct ParamEntry {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  ParamClass cls = ParamClass::kLearnable;

  bool learnable() const { return cls == ParamClass::kLearnable; }
  friend bool operator==(const ParamEntry&, const ParamEntry&) = default;
};

// Named tensors in insertion order. Insertion order is the canonical order
// used for serialization, fingerprints and random-mask indexing.
class ParamStore {
 public:
  void Add(std::string name, std::vector<std::size_t> shape, std::vector<double> values,
           ParamClass cls);
  void AddMatrix(std::string name, const Matrix& m, ParamClass cls);

  bool Contains(const std::string& name) const { return index_.count(name) != 0; }
  const ParamEntry& at(const std::string& name) const;
  ParamEntry& at(const std::string& name);
  // Copy of a 2-D entry as a matrix.
  Matrix GetMatrix(const std::string& name) const;
  void SetValues(const std::string& name, std::vector<double> values);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<std::string> LearnableNames() const;
  std::vector<std::string> FrozenNames() const;
  std::size_t LearnableScalarCount() const;

  friend bool operator==(const ParamStore& a, const ParamStore& b) {
    return a.entries_ == b.entries_;
  }

 private:
  std::vector<ParamEntry> entries_;
  std::map<std::string, std::size_t> index_;
};

std::size_t ShapeSize(std::span<const std::size_t> shape);

// Gradients keyed by learnable entry name.
using Gradients = std::map<std::string, std::vector<double>>;
// Per-entry update masks (nonzero = may change).
using ScalarMasks = std::map<std::string, std::vector<std::uint8_t>>;

class WeightMap {
 public:
  virtual ~WeightMap() = default;
  virtual Matrix Recover(const ParamStore& params) const = 0;
  // Accumulates d loss / d factor for every learnable factor given
  // `weight_grad` = d loss / d weight.
  virtual void Backward(const ParamStore& params, const Matrix& weight_grad,
                        Gradients& grads) const = 0;
  virtual std::vector<std::string> LearnableNames() const = 0;
  virtual std::vector<std::string> FrozenNames() const = 0;
};

// The unfactorised weight: one learnable o x i tensor.
class DenseWeight : public WeightMap {
 public:
  explicit DenseWeight(int layer_id) : name_(WeightName(layer_id)) {}
  Matrix Recover(const ParamStore& params) const override;
  void Backward(const ParamStore& params, const Matrix& weight_grad,
                Gradients& grads) const override;
  std::vector<std::string> LearnableNames() const override { return {name_}; }
  std::vector<std::string> FrozenNames() const override { return {}; }

 private:
  std::string name_;
};

class Network {
 public:
  Network() = default;
  // Every targeted layer starts with a DenseWeight.
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const WeightMap& weight_map(int layer_id) const;
  void SetWeightMap(int layer_id, std::shared_ptr<const WeightMap> map);

 private:
  ModelSpec spec_;
  std::vector<std::shared_ptr<const WeightMap>> maps_;
};

// Dense parameters for `spec` with Kaiming-uniform weights (bound
// sqrt(6 / fan_in)) and zero biases.
ParamStore InitializeParams(const ModelSpec& spec, Xoshiro256StarStar& rng);
// Dense parameters with every value zero.
ParamStore ZeroParams(const ModelSpec& spec);

// Conv weight (c_out, c_in, k_h, k_w) <-> (c_out) x (c_in * k_h * k_w): the
// column of element (o, c, y, x) is c * k_h * k_w + y * k_w + x.
Matrix WeightToMatrix(const LayerDesc& layer, std::span<const std::size_t> shape,
                      std::span<const double> values);
std::vector<double> MatrixToWeight(const LayerDesc& layer, const Matrix& m,
                                   std::vector<std::size_t>* shape = nullptr);
std::vector<std::size_t> WeightShape(const LayerDesc& layer);

struct ForwardCache {
  std::vector<std::vector<double>> inputs;    // input activation of each layer
  std::vector<std::vector<double>> columns;   // im2col buffers of conv layers
  std::vector<std::vector<std::uint32_t>> argmax;  // max-pool routing
  std::vector<Matrix> weights;                // recovered weight per targeted layer
};

struct ForwardResult {
  Matrix logits;  // n x classes
  ForwardCache cache;
};

ForwardResult Forward(const Network& net, const ParamStore& params, const Batch& batch);
Matrix Logits(const Network& net, const ParamStore& params, const Batch& batch);

struct LossGrad {
  double loss = 0.0;
  Gradients grads;
};

// Mean softmax cross-entropy and its gradient for every learnable tensor.
LossGrad LossAndGrad(const Network& net, const ParamStore& params, const Batch& batch);
double Loss(const Network& net, const ParamStore& params, const Batch& batch);
double SoftmaxCrossEntropy(const Matrix& logits, std::span<const int> labels,
                           Matrix* logit_grad = nullptr);

// Momentum SGD: v <- momentum * v + g; p <- p - lr * v.
class MomentumSgd {
 public:
  MomentumSgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {}

  // Throws kConsistency unless `grads` has exactly the learnable entries of
  // `params`. Entries outside `masks` (when given) keep their values.
  void Step(ParamStore& params, const Gradients& grads, const ScalarMasks* masks = nullptr);

 private:
  double lr_;
  double momentum_;
  std::map<std::string, std::vector<double>> velocity_;
};

struct TrainOptions {
  std::size_t epochs = 1;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;  // drives the per-epoch example order
};

struct TrainReport {
  std::vector<double> epoch_loss;  // mean minibatch loss per epoch
  std::size_t steps = 0;
};

// Minibatch momentum SGD over `data`, reshuffled every epoch. Throws
// kDivergence as soon as a minibatch loss is not finite.
TrainReport Train(const Network& net, ParamStore& params, const Dataset& data,
                  const TrainOptions& options, const ScalarMasks* masks = nullptr,
                  const std::function<void(std::size_t, double)>& on_epoch = {});

// Index of the largest logit; ties go to the lowest class index.
std::size_t ArgMax(std::span<const double> row);

// Fraction of examples whose arg-max logit equals the label.
double Evaluate(const Network& net, const ParamStore& params, const Dataset& data,
                std::size_t chunk = 500);
double Accuracy(const Matrix& logits, std::span<const int> labels);

}  // namespace deltaforge

#endif  // DELTAFORGE_NETCORE_H_
