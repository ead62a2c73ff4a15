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

#include "deltaforge/netcore.h"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <utility>

#include "deltaforge/error.h"

namespace deltaforge {
namespace {

std::string ShapeString(const Shape3& s) {
  return "(" + std::to_string(s.c) + "," + std::to_string(s.h) + "," +
         std::to_string(s.w) + ")";
}

Shape3 LayerOutputShape(const LayerDesc& layer, const Shape3& in, std::size_t index) {
  const std::string where = "layer " + std::to_string(index);
  switch (layer.kind) {
    case LayerKind::kConv2D: {
      if (in.c != layer.in_channels) {
        throw Error(ErrorCode::kShape, where + ": conv expects " +
                                           std::to_string(layer.in_channels) +
                                           " channels, got " + ShapeString(in));
      }
      if (layer.kernel_h == 0 || layer.kernel_w == 0 || layer.stride == 0 ||
          layer.out_channels == 0) {
        throw Error(ErrorCode::kShape, where + ": degenerate conv descriptor");
      }
      const std::size_t ph = in.h + 2 * layer.padding;
      const std::size_t pw = in.w + 2 * layer.padding;
      if (ph < layer.kernel_h || pw < layer.kernel_w) {
        throw Error(ErrorCode::kShape, where + ": kernel larger than padded input");
      }
      return {layer.out_channels, (ph - layer.kernel_h) / layer.stride + 1,
              (pw - layer.kernel_w) / layer.stride + 1};
    }
    case LayerKind::kFullyConnected:
      if (in.h != 1 || in.w != 1 || in.c != layer.in_channels) {
        throw Error(ErrorCode::kShape, where + ": fc expects flat input of " +
                                           std::to_string(layer.in_channels) +
                                           ", got " + ShapeString(in));
      }
      if (layer.out_channels == 0) {
        throw Error(ErrorCode::kShape, where + ": fc with zero outputs");
      }
      return {layer.out_channels, 1, 1};
    case LayerKind::kRelu:
      return in;
    case LayerKind::kMaxPool2:
      if (in.h < 2 || in.w < 2) {
        throw Error(ErrorCode::kShape, where + ": max-pool input too small");
      }
      return {in.c, in.h / 2, in.w / 2};
    case LayerKind::kFlatten:
      return {in.size(), 1, 1};
  }
  throw Error(ErrorCode::kShape, where + ": unknown layer kind");
}

// out (o x p) = w (o x k) * x (k x p), accumulating in place.
void GemmAccumulate(std::size_t o, std::size_t k, std::size_t p, const double* w,
                    const double* x, double* out) {
  for (std::size_t r = 0; r < o; ++r) {
    double* orow = out + r * p;
    const double* wrow = w + r * k;
    for (std::size_t j = 0; j < k; ++j) {
      const double a = wrow[j];
      const double* xrow = x + j * p;
      for (std::size_t c = 0; c < p; ++c) orow[c] += a * xrow[c];
    }
  }
}

void Im2Col(const LayerDesc& layer, const Shape3& in, const Shape3& out,
            const double* src, double* cols) {
  const std::size_t positions = out.h * out.w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < in.c; ++c) {
    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < layer.kernel_w; ++kx, ++row) {
        double* dst = cols + row * positions;
        for (std::size_t oy = 0; oy < out.h; ++oy) {
          const long iy = static_cast<long>(oy * layer.stride + ky) -
                          static_cast<long>(layer.padding);
          for (std::size_t ox = 0; ox < out.w; ++ox) {
            const long ix = static_cast<long>(ox * layer.stride + kx) -
                            static_cast<long>(layer.padding);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<long>(in.h) &&
                                ix < static_cast<long>(in.w);
            dst[oy * out.w + ox] =
                inside ? src[(c * in.h + static_cast<std::size_t>(iy)) * in.w +
                             static_cast<std::size_t>(ix)]
                       : 0.0;
          }
        }
      }
    }
  }
}

void Col2ImAccumulate(const LayerDesc& layer, const Shape3& in, const Shape3& out,
                      const double* cols, double* dst) {
  const std::size_t positions = out.h * out.w;
  std::size_t row = 0;
  for (std::size_t c = 0; c < in.c; ++c) {
    for (std::size_t ky = 0; ky < layer.kernel_h; ++ky) {
      for (std::size_t kx = 0; kx < layer.kernel_w; ++kx, ++row) {
        const double* col = cols + row * positions;
        for (std::size_t oy = 0; oy < out.h; ++oy) {
          const long iy = static_cast<long>(oy * layer.stride + ky) -
                          static_cast<long>(layer.padding);
          if (iy < 0 || iy >= static_cast<long>(in.h)) continue;
          for (std::size_t ox = 0; ox < out.w; ++ox) {
            const long ix = static_cast<long>(ox * layer.stride + kx) -
                            static_cast<long>(layer.padding);
            if (ix < 0 || ix >= static_cast<long>(in.w)) continue;
            dst[(c * in.h + static_cast<std::size_t>(iy)) * in.w +
                static_cast<std::size_t>(ix)] += col[oy * out.w + ox];
          }
        }
      }
    }
  }
}

void CheckBatch(const ModelSpec& spec, const Batch& batch) {
  if (!(batch.shape == spec.input())) {
    throw Error(ErrorCode::kShape, "batch shape " + ShapeString(batch.shape) +
                                       " does not match model input " +
                                       ShapeString(spec.input()));
  }
  if (batch.images.size() != batch.n * batch.shape.size()) {
    throw Error(ErrorCode::kShape, "batch image buffer has wrong length");
  }
  if (!batch.labels.empty() && batch.labels.size() != batch.n) {
    throw Error(ErrorCode::kShape, "batch label count does not match n");
  }
}

const std::vector<double>* FindBias(const ParamStore& params, const TargetedLayer& t) {
  if (!t.has_bias) return nullptr;
  const ParamEntry& e = params.at(BiasName(t.id));
  if (e.values.size() != t.rows) {
    throw Error(ErrorCode::kShape, "bias of layer " + std::to_string(t.id) +
                                       " has " + std::to_string(e.values.size()) +
                                       " values, expected " + std::to_string(t.rows));
  }
  return &e.values;
}

}  // namespace

LayerDesc LayerDesc::Conv2D(std::size_t c_in, std::size_t c_out, std::size_t k_h,
                            std::size_t k_w, std::size_t stride, std::size_t padding,
                            bool has_bias) {
  LayerDesc d;
  d.kind = LayerKind::kConv2D;
  d.in_channels = c_in;
  d.out_channels = c_out;
  d.kernel_h = k_h;
  d.kernel_w = k_w;
  d.stride = stride;
  d.padding = padding;
  d.has_bias = has_bias;
  return d;
}

LayerDesc LayerDesc::FullyConnected(std::size_t d_in, std::size_t d_out, bool has_bias) {
  LayerDesc d;
  d.kind = LayerKind::kFullyConnected;
  d.in_channels = d_in;
  d.out_channels = d_out;
  d.has_bias = has_bias;
  return d;
}

LayerDesc LayerDesc::Relu() {
  LayerDesc d;
  d.kind = LayerKind::kRelu;
  return d;
}

LayerDesc LayerDesc::MaxPool2() {
  LayerDesc d;
  d.kind = LayerKind::kMaxPool2;
  return d;
}

LayerDesc LayerDesc::Flatten() {
  LayerDesc d;
  d.kind = LayerKind::kFlatten;
  return d;
}

ModelSpec::ModelSpec(Shape3 input, std::vector<LayerDesc> layers)
    : input_(input), layers_(std::move(layers)) {
  if (input_.size() == 0) throw Error(ErrorCode::kShape, "empty model input");
  shapes_.push_back(input_);
  int next_id = 1;
  for (std::size_t k = 0; k < layers_.size(); ++k) {
    const LayerDesc& layer = layers_[k];
    shapes_.push_back(LayerOutputShape(layer, shapes_.back(), k));
    if (layer.targeted()) {
      TargetedLayer t;
      t.id = next_id++;
      t.layer_index = k;
      t.rows = layer.out_channels;
      t.cols = layer.kind == LayerKind::kConv2D
                   ? layer.in_channels * layer.kernel_h * layer.kernel_w
                   : layer.in_channels;
      t.has_bias = layer.has_bias;
      targeted_.push_back(t);
    }
  }
  const Shape3& last = shapes_.back();
  if (last.h != 1 || last.w != 1) {
    throw Error(ErrorCode::kShape, "model output must be flat, got " + ShapeString(last));
  }
}

ModelSpec ModelSpec::TinyNet() {
  return ModelSpec({1, 28, 28}, {LayerDesc::Conv2D(1, 8, 3, 3, 1, 1),
                                 LayerDesc::Relu(), LayerDesc::MaxPool2(),
                                 LayerDesc::Conv2D(8, 16, 3, 3, 1, 1),
                                 LayerDesc::Relu(), LayerDesc::MaxPool2(),
                                 LayerDesc::Flatten(),
                                 LayerDesc::FullyConnected(784, 10)});
}

const TargetedLayer& ModelSpec::targeted_layer(int id) const {
  if (id < 1 || static_cast<std::size_t>(id) > targeted_.size()) {
    throw Error(ErrorCode::kShape, "no targeted layer with id " + std::to_string(id));
  }
  return targeted_[static_cast<std::size_t>(id - 1)];
}

std::string WeightName(int layer_id) { return FactorName(layer_id, "weight"); }
std::string BiasName(int layer_id) { return FactorName(layer_id, "bias"); }
std::string FactorName(int layer_id, const std::string& factor) {
  return "layer" + std::to_string(layer_id) + "." + factor;
}

std::size_t ShapeSize(std::span<const std::size_t> shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

void ParamStore::Add(std::string name, std::vector<std::size_t> shape,
                     std::vector<double> values, ParamClass cls) {
  if (Contains(name)) {
    throw Error(ErrorCode::kConsistency, "duplicate parameter " + name);
  }
  if (ShapeSize(shape) != values.size()) {
    throw Error(ErrorCode::kShape, "parameter " + name + " has " +
                                       std::to_string(values.size()) +
                                       " values for its shape");
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({std::move(name), std::move(shape), std::move(values), cls});
}

void ParamStore::AddMatrix(std::string name, const Matrix& m, ParamClass cls) {
  Add(std::move(name), {m.rows(), m.cols()}, m.data(), cls);
}

const ParamEntry& ParamStore::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) {
    throw Error(ErrorCode::kConsistency, "no parameter named " + name);
  }
  return entries_[it->second];
}

ParamEntry& ParamStore::at(const std::string& name) {
  return const_cast<ParamEntry&>(std::as_const(*this).at(name));
}

Matrix ParamStore::GetMatrix(const std::string& name) const {
  const ParamEntry& e = at(name);
  if (e.shape.empty()) throw Error(ErrorCode::kShape, name + " is a scalar");
  const std::size_t rows = e.shape[0];
  return Matrix(rows, rows == 0 ? 0 : e.values.size() / rows, e.values);
}

void ParamStore::SetValues(const std::string& name, std::vector<double> values) {
  ParamEntry& e = at(name);
  if (values.size() != e.values.size()) {
    throw Error(ErrorCode::kShape, "new values for " + name + " have wrong length");
  }
  e.values = std::move(values);
}

std::vector<std::string> ParamStore::LearnableNames() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (e.learnable()) out.push_back(e.name);
  }
  return out;
}

std::vector<std::string> ParamStore::FrozenNames() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (!e.learnable()) out.push_back(e.name);
  }
  return out;
}

std::size_t ParamStore::LearnableScalarCount() const {
  std::size_t n = 0;
  for (const auto& e : entries_) {
    if (e.learnable()) n += e.values.size();
  }
  return n;
}

Matrix DenseWeight::Recover(const ParamStore& params) const {
  return params.GetMatrix(name_);
}

void DenseWeight::Backward(const ParamStore& params, const Matrix& weight_grad,
                           Gradients& grads) const {
  (void)params;
  grads[name_] = weight_grad.data();
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)) {
  for (const auto& t : spec_.targeted()) {
    maps_.push_back(std::make_shared<DenseWeight>(t.id));
  }
}

const WeightMap& Network::weight_map(int layer_id) const {
  spec_.targeted_layer(layer_id);
  return *maps_[static_cast<std::size_t>(layer_id - 1)];
}

void Network::SetWeightMap(int layer_id, std::shared_ptr<const WeightMap> map) {
  spec_.targeted_layer(layer_id);
  maps_[static_cast<std::size_t>(layer_id - 1)] = std::move(map);
}

std::vector<std::size_t> WeightShape(const LayerDesc& layer) {
  if (layer.kind == LayerKind::kConv2D) {
    return {layer.out_channels, layer.in_channels, layer.kernel_h, layer.kernel_w};
  }
  if (layer.kind == LayerKind::kFullyConnected) {
    return {layer.out_channels, layer.in_channels};
  }
  throw Error(ErrorCode::kShape, "layer has no weight tensor");
}

Matrix WeightToMatrix(const LayerDesc& layer, std::span<const std::size_t> shape,
                      std::span<const double> values) {
  const std::vector<std::size_t> expected = WeightShape(layer);
  if (!std::equal(shape.begin(), shape.end(), expected.begin(), expected.end()) ||
      values.size() != ShapeSize(expected)) {
    throw Error(ErrorCode::kShape, "weight tensor does not match layer descriptor");
  }
  const std::size_t rows = expected[0];
  return Matrix(rows, values.size() / rows,
                std::vector<double>(values.begin(), values.end()));
}

std::vector<double> MatrixToWeight(const LayerDesc& layer, const Matrix& m,
                                   std::vector<std::size_t>* shape) {
  std::vector<std::size_t> expected = WeightShape(layer);
  if (m.rows() != expected[0] || m.size() != ShapeSize(expected)) {
    throw Error(ErrorCode::kShape, "matrix does not match layer weight shape");
  }
  if (shape != nullptr) *shape = std::move(expected);
  return m.data();
}

ParamStore InitializeParams(const ModelSpec& spec, Xoshiro256StarStar& rng) {
  ParamStore params;
  for (const auto& t : spec.targeted()) {
    const LayerDesc& layer = spec.layers()[t.layer_index];
    const double bound = std::sqrt(6.0 / static_cast<double>(t.cols));
    std::vector<double> w(t.rows * t.cols);
    for (double& x : w) x = rng.Uniform(-bound, bound);
    params.Add(WeightName(t.id), WeightShape(layer), std::move(w), ParamClass::kLearnable);
    if (t.has_bias) {
      params.Add(BiasName(t.id), {t.rows}, std::vector<double>(t.rows, 0.0),
                 ParamClass::kLearnable);
    }
  }
  return params;
}

ParamStore ZeroParams(const ModelSpec& spec) {
  ParamStore params;
  for (const auto& t : spec.targeted()) {
    const LayerDesc& layer = spec.layers()[t.layer_index];
    params.Add(WeightName(t.id), WeightShape(layer),
               std::vector<double>(t.rows * t.cols, 0.0), ParamClass::kLearnable);
    if (t.has_bias) {
      params.Add(BiasName(t.id), {t.rows}, std::vector<double>(t.rows, 0.0),
                 ParamClass::kLearnable);
    }
  }
  return params;
}

ForwardResult Forward(const Network& net, const ParamStore& params, const Batch& batch) {
  const ModelSpec& spec = net.spec();
  CheckBatch(spec, batch);
  const std::size_t n = batch.n;
  const auto& layers = spec.layers();

  ForwardResult result;
  ForwardCache& cache = result.cache;
  cache.inputs.resize(layers.size());
  cache.columns.resize(layers.size());
  cache.argmax.resize(layers.size());
  for (const auto& t : spec.targeted()) {
    Matrix w = net.weight_map(t.id).Recover(params);
    if (w.rows() != t.rows || w.cols() != t.cols) {
      throw Error(ErrorCode::kShape, "recovered weight of layer " + std::to_string(t.id) +
                                         " is " + std::to_string(w.rows()) + "x" +
                                         std::to_string(w.cols()));
    }
    cache.weights.push_back(std::move(w));
  }

  std::vector<double> act = batch.images;
  std::size_t next_target = 0;
  for (std::size_t k = 0; k < layers.size(); ++k) {
    const LayerDesc& layer = layers[k];
    const Shape3& in = spec.input_shape(k);
    const Shape3& out = spec.output_shape(k);
    std::vector<double> next(n * out.size(), 0.0);
    switch (layer.kind) {
      case LayerKind::kConv2D: {
        const TargetedLayer& t = spec.targeted()[next_target];
        const Matrix& w = cache.weights[next_target++];
        const std::vector<double>* bias = FindBias(params, t);
        const std::size_t positions = out.h * out.w;
        const std::size_t col_len = t.cols * positions;
        std::vector<double>& cols = cache.columns[k];
        cols.assign(n * col_len, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
          double* c = cols.data() + s * col_len;
          Im2Col(layer, in, out, act.data() + s * in.size(), c);
          double* o = next.data() + s * out.size();
          GemmAccumulate(t.rows, t.cols, positions, w.data().data(), c, o);
          if (bias != nullptr) {
            for (std::size_t r = 0; r < t.rows; ++r) {
              for (std::size_t p = 0; p < positions; ++p) o[r * positions + p] += (*bias)[r];
            }
          }
        }
        break;
      }
      case LayerKind::kFullyConnected: {
        const TargetedLayer& t = spec.targeted()[next_target];
        const Matrix& w = cache.weights[next_target++];
        const std::vector<double>* bias = FindBias(params, t);
        for (std::size_t s = 0; s < n; ++s) {
          const double* x = act.data() + s * t.cols;
          double* o = next.data() + s * t.rows;
          for (std::size_t r = 0; r < t.rows; ++r) {
            const double* wr = w.row(r).data();
            double acc = 0.0;
            for (std::size_t j = 0; j < t.cols; ++j) acc += wr[j] * x[j];
            o[r] = bias != nullptr ? acc + (*bias)[r] : acc;
          }
        }
        break;
      }
      case LayerKind::kRelu:
        for (std::size_t j = 0; j < act.size(); ++j) next[j] = act[j] > 0.0 ? act[j] : 0.0;
        break;
      case LayerKind::kMaxPool2: {
        std::vector<std::uint32_t>& arg = cache.argmax[k];
        arg.assign(next.size(), 0);
        for (std::size_t s = 0; s < n; ++s) {
          const double* src = act.data() + s * in.size();
          for (std::size_t c = 0; c < in.c; ++c) {
            for (std::size_t oy = 0; oy < out.h; ++oy) {
              for (std::size_t ox = 0; ox < out.w; ++ox) {
                std::size_t best = (c * in.h + 2 * oy) * in.w + 2 * ox;
                for (std::size_t dy = 0; dy < 2; ++dy) {
                  for (std::size_t dx = 0; dx < 2; ++dx) {
                    const std::size_t idx = (c * in.h + 2 * oy + dy) * in.w + 2 * ox + dx;
                    if (src[idx] > src[best]) best = idx;
                  }
                }
                const std::size_t o = s * out.size() + (c * out.h + oy) * out.w + ox;
                next[o] = src[best];
                arg[o] = static_cast<std::uint32_t>(best);
              }
            }
          }
        }
        break;
      }
      case LayerKind::kFlatten:
        next = act;
        break;
    }
    cache.inputs[k] = std::move(act);
    act = std::move(next);
  }
  result.logits = Matrix(n, spec.num_classes(), std::move(act));
  return result;
}

Matrix Logits(const Network& net, const ParamStore& params, const Batch& batch) {
  return Forward(net, params, batch).logits;
}

double SoftmaxCrossEntropy(const Matrix& logits, std::span<const int> labels,
                           Matrix* logit_grad) {
  const std::size_t n = logits.rows();
  const std::size_t classes = logits.cols();
  if (labels.size() != n) {
    throw Error(ErrorCode::kShape, "label count does not match logits");
  }
  if (n == 0) throw Error(ErrorCode::kInvalidInput, "empty batch");
  if (logit_grad != nullptr) *logit_grad = Matrix(n, classes);
  double total = 0.0;
  std::vector<double> probs(classes);
  for (std::size_t s = 0; s < n; ++s) {
    const int label = labels[s];
    if (label < 0 || static_cast<std::size_t>(label) >= classes) {
      throw Error(ErrorCode::kInvalidInput, "label " + std::to_string(label) +
                                                " outside [0, " +
                                                std::to_string(classes) + ")");
    }
    auto row = logits.row(s);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      probs[c] = std::exp(row[c] - mx);
      sum += probs[c];
    }
    total += mx + std::log(sum) - row[static_cast<std::size_t>(label)];
    if (logit_grad != nullptr) {
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t c = 0; c < classes; ++c) {
        const double onehot = c == static_cast<std::size_t>(label) ? 1.0 : 0.0;
        (*logit_grad)(s, c) = (probs[c] / sum - onehot) * inv_n;
      }
    }
  }
  return total / static_cast<double>(n);
}

double Loss(const Network& net, const ParamStore& params, const Batch& batch) {
  return SoftmaxCrossEntropy(Logits(net, params, batch), batch.labels);
}

LossGrad LossAndGrad(const Network& net, const ParamStore& params, const Batch& batch) {
  const ModelSpec& spec = net.spec();
  ForwardResult fwd = Forward(net, params, batch);
  Matrix dlogits;
  LossGrad out;
  out.loss = SoftmaxCrossEntropy(fwd.logits, batch.labels, &dlogits);
  const ForwardCache& cache = fwd.cache;
  const std::size_t n = batch.n;
  const auto& layers = spec.layers();

  std::vector<double> grad = std::move(dlogits.data());
  std::size_t target = spec.targeted().size();
  for (std::size_t k = layers.size(); k-- > 0;) {
    const LayerDesc& layer = layers[k];
    const Shape3& in = spec.input_shape(k);
    const Shape3& o_shape = spec.output_shape(k);
    const std::vector<double>& x = cache.inputs[k];
    const bool need_input_grad = k > 0;
    std::vector<double> dx;
    if (need_input_grad) dx.assign(n * in.size(), 0.0);
    switch (layer.kind) {
      case LayerKind::kConv2D: {
        const TargetedLayer& t = spec.targeted()[--target];
        const Matrix& w = cache.weights[target];
        const std::size_t positions = o_shape.h * o_shape.w;
        const std::size_t col_len = t.cols * positions;
        Matrix dw(t.rows, t.cols);
        std::vector<double> db(t.rows, 0.0);
        std::vector<double> dcols(col_len);
        for (std::size_t s = 0; s < n; ++s) {
          const double* g = grad.data() + s * o_shape.size();
          const double* c = cache.columns[k].data() + s * col_len;
          for (std::size_t r = 0; r < t.rows; ++r) {
            const double* gr = g + r * positions;
            double bsum = 0.0;
            for (std::size_t p = 0; p < positions; ++p) bsum += gr[p];
            db[r] += bsum;
            double* dwr = dw.row(r).data();
            for (std::size_t j = 0; j < t.cols; ++j) {
              const double* cj = c + j * positions;
              double acc = 0.0;
              for (std::size_t p = 0; p < positions; ++p) acc += gr[p] * cj[p];
              dwr[j] += acc;
            }
          }
          if (need_input_grad) {
            std::fill(dcols.begin(), dcols.end(), 0.0);
            for (std::size_t r = 0; r < t.rows; ++r) {
              const double* gr = g + r * positions;
              const double* wr = w.row(r).data();
              for (std::size_t j = 0; j < t.cols; ++j) {
                const double a = wr[j];
                double* dc = dcols.data() + j * positions;
                for (std::size_t p = 0; p < positions; ++p) dc[p] += a * gr[p];
              }
            }
            Col2ImAccumulate(layer, in, o_shape, dcols.data(), dx.data() + s * in.size());
          }
        }
        net.weight_map(t.id).Backward(params, dw, out.grads);
        if (t.has_bias) out.grads[BiasName(t.id)] = std::move(db);
        break;
      }
      case LayerKind::kFullyConnected: {
        const TargetedLayer& t = spec.targeted()[--target];
        const Matrix& w = cache.weights[target];
        Matrix dw(t.rows, t.cols);
        std::vector<double> db(t.rows, 0.0);
        for (std::size_t s = 0; s < n; ++s) {
          const double* g = grad.data() + s * t.rows;
          const double* xs = x.data() + s * t.cols;
          for (std::size_t r = 0; r < t.rows; ++r) {
            const double gr = g[r];
            db[r] += gr;
            double* dwr = dw.row(r).data();
            for (std::size_t j = 0; j < t.cols; ++j) dwr[j] += gr * xs[j];
            if (need_input_grad) {
              const double* wr = w.row(r).data();
              double* dxs = dx.data() + s * t.cols;
              for (std::size_t j = 0; j < t.cols; ++j) dxs[j] += gr * wr[j];
            }
          }
        }
        net.weight_map(t.id).Backward(params, dw, out.grads);
        if (t.has_bias) out.grads[BiasName(t.id)] = std::move(db);
        break;
      }
      case LayerKind::kRelu:
        if (need_input_grad) {
          for (std::size_t j = 0; j < dx.size(); ++j) dx[j] = x[j] > 0.0 ? grad[j] : 0.0;
        }
        break;
      case LayerKind::kMaxPool2:
        if (need_input_grad) {
          const auto& arg = cache.argmax[k];
          for (std::size_t s = 0; s < n; ++s) {
            for (std::size_t j = 0; j < o_shape.size(); ++j) {
              const std::size_t o = s * o_shape.size() + j;
              dx[s * in.size() + arg[o]] += grad[o];
            }
          }
        }
        break;
      case LayerKind::kFlatten:
        if (need_input_grad) dx = grad;
        break;
    }
    grad = std::move(dx);
  }

  // Every learnable entry gets a gradient (zero when unused); nothing frozen.
  for (const auto& e : params.entries()) {
    if (e.learnable()) {
      auto it = out.grads.find(e.name);
      if (it == out.grads.end()) {
        out.grads.emplace(e.name, std::vector<double>(e.values.size(), 0.0));
      } else if (it->second.size() != e.values.size()) {
        throw Error(ErrorCode::kShape, "gradient for " + e.name + " has wrong length");
      }
    } else if (out.grads.count(e.name) != 0) {
      throw Error(ErrorCode::kConsistency, "gradient produced for frozen " + e.name);
    }
  }
  for (const auto& [name, g] : out.grads) {
    if (!params.Contains(name)) {
      throw Error(ErrorCode::kConsistency, "gradient for unknown entry " + name);
    }
  }
  return out;
}

void MomentumSgd::Step(ParamStore& params, const Gradients& grads,
                       const ScalarMasks* masks) {
  const std::vector<std::string> names = params.LearnableNames();
  if (names.size() != grads.size()) {
    throw Error(ErrorCode::kConsistency, "gradient set does not match learnable set");
  }
  for (const auto& name : names) {
    auto g_it = grads.find(name);
    if (g_it == grads.end()) {
      throw Error(ErrorCode::kConsistency, "missing gradient for " + name);
    }
    ParamEntry& entry = params.at(name);
    const std::vector<double>& g = g_it->second;
    if (g.size() != entry.values.size()) {
      throw Error(ErrorCode::kConsistency, "gradient for " + name + " has wrong length");
    }
    const std::vector<std::uint8_t>* mask = nullptr;
    if (masks != nullptr) {
      auto m_it = masks->find(name);
      if (m_it == masks->end()) continue;
      mask = &m_it->second;
    }
    std::vector<double>& v = velocity_[name];
    if (v.empty()) v.assign(g.size(), 0.0);
    for (std::size_t k = 0; k < g.size(); ++k) {
      if (mask != nullptr && (*mask)[k] == 0) continue;
      v[k] = momentum_ * v[k] + g[k];
      entry.values[k] -= lr_ * v[k];
    }
  }
}

TrainReport Train(const Network& net, ParamStore& params, const Dataset& data,
                  const TrainOptions& options, const ScalarMasks* masks,
                  const std::function<void(std::size_t, double)>& on_epoch) {
  if (options.batch_size == 0) {
    throw Error(ErrorCode::kInvalidInput, "batch size must be positive");
  }
  TrainReport report;
  if (options.epochs == 0) return report;
  if (data.size() == 0) throw Error(ErrorCode::kInvalidInput, "empty training set");
  MomentumSgd sgd(options.lr, options.momentum);
  auto rng = Xoshiro256StarStar::ForStream(options.seed, RngStream::kBatchOrder);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const std::vector<std::size_t> order = SeededPermutation(data.size(), rng);
    double loss_sum = 0.0;
    std::size_t batches = 0;
    for (std::size_t first = 0; first < order.size(); first += options.batch_size) {
      const std::size_t count = std::min(options.batch_size, order.size() - first);
      const Batch batch = data.MakeBatch(std::span(order).subspan(first, count));
      LossGrad lg = LossAndGrad(net, params, batch);
      if (!std::isfinite(lg.loss)) {
        throw Error(ErrorCode::kDivergence,
                    "training loss became " + std::to_string(lg.loss) + " at epoch " +
                        std::to_string(epoch) + ", step " + std::to_string(report.steps) +
                        " (lr " + std::to_string(options.lr) + ")");
      }
      sgd.Step(params, lg.grads, masks);
      loss_sum += lg.loss;
      ++batches;
      ++report.steps;
    }
    report.epoch_loss.push_back(loss_sum / static_cast<double>(batches));
    if (on_epoch) on_epoch(epoch, report.epoch_loss.back());
  }
  return report;
}

std::size_t ArgMax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < row.size(); ++c) {
    if (row[c] > row[best]) best = c;
  }
  return best;
}

double Accuracy(const Matrix& logits, std::span<const int> labels) {
  if (logits.rows() == 0) throw Error(ErrorCode::kInvalidInput, "empty dataset");
  std::size_t correct = 0;
  for (std::size_t s = 0; s < logits.rows(); ++s) {
    if (static_cast<int>(ArgMax(logits.row(s))) == labels[s]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(logits.rows());
}

double Evaluate(const Network& net, const ParamStore& params, const Dataset& data,
                std::size_t chunk) {
  if (data.size() == 0) throw Error(ErrorCode::kInvalidInput, "empty dataset");
  if (chunk == 0) chunk = 1;
  std::size_t correct = 0;
  for (std::size_t first = 0; first < data.size(); first += chunk) {
    const std::size_t count = std::min(chunk, data.size() - first);
    Batch batch = data.MakeBatch(first, count);
    Matrix logits = Logits(net, params, batch);
    for (std::size_t s = 0; s < count; ++s) {
      if (static_cast<int>(ArgMax(logits.row(s))) == batch.labels[s]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

}  // namespace deltaforge
