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

#include "deltaforge/protocol.h"

#include <algorithm>
#include <cmath>
#include <memory>
#include <string>
#include <utility>

#include "deltaforge/checkpoint.h"
#include "deltaforge/error.h"
#include "deltaforge/rng.h"

namespace deltaforge {
namespace {

bool IsSvdMethod(Method m) {
  return m == Method::kLra || m == Method::kMl || m == Method::kKa;
}

// Maps "layer{id}.weight" to its targeted layer.
std::map<std::string, const TargetedLayer*> TargetedWeights(const ModelSpec& spec) {
  std::map<std::string, const TargetedLayer*> out;
  for (const auto& t : spec.targeted()) out[WeightName(t.id)] = &t;
  return out;
}

Matrix DeployedWeight(const ModelSpec& spec, const ParamStore& theta, const TargetedLayer& t) {
  const std::string name = WeightName(t.id);
  if (!theta.Contains(name)) {
    throw Error(ErrorCode::kShape, "deployed model has no tensor " + name);
  }
  const ParamEntry& e = theta.at(name);
  return WeightToMatrix(spec.layers()[t.layer_index], e.shape, e.values);
}

// Learnable tensors of the deployed model that no targeted layer owns; they
// are shipped in the trailer.
std::vector<const ParamEntry*> UntargetedEntries(const ModelSpec& spec,
                                                 const ParamStore& theta) {
  const auto weights = TargetedWeights(spec);
  std::vector<const ParamEntry*> out;
  for (const auto& e : theta.entries()) {
    if (e.learnable() && weights.count(e.name) == 0) out.push_back(&e);
  }
  return out;
}

std::vector<double> Selected(const std::vector<double>& values,
                             const std::vector<std::uint8_t>& mask, WireFormat wire) {
  std::vector<double> out;
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (mask[k]) out.push_back(ToWire(values[k], wire));
  }
  return out;
}

std::size_t Ones(const std::vector<std::uint8_t>& mask) {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

[[noreturn]] void Incompatible(const std::string& what) {
  throw Error(ErrorCode::kIncompatiblePackage, what);
}

// Sequential reader over a record's scalars.
class Cursor {
 public:
  explicit Cursor(const std::vector<double>& values) : values_(values) {}
  std::vector<double> Take(std::size_t n) {
    if (values_.size() - pos_ < n) Incompatible("record holds too few scalars");
    std::vector<double> out(values_.begin() + static_cast<std::ptrdiff_t>(pos_),
                            values_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return out;
  }
  Matrix TakeMatrix(std::size_t rows, std::size_t cols) {
    return Matrix(rows, cols, Take(rows * cols));
  }

 private:
  const std::vector<double>& values_;
  std::size_t pos_ = 0;
};

// Installs the packaged learnable factors of `record` into a state freshly
// derived from the deployed weight.
void InstallFactors(ReparamState& state, const LayerRecord& record) {
  Cursor in(record.values);
  const std::size_t o = state.rows;
  const std::size_t i = state.cols;
  const std::size_t h = state.method.hyper;
  switch (state.method.kind) {
    case Method::kDense:
      state.weight = in.TakeMatrix(o, i);
      break;
    case Method::kLra:
      state.left = in.TakeMatrix(o, h);
      state.right = in.TakeMatrix(h, i);
      break;
    case Method::kMl:
      state.left = in.TakeMatrix(o, h);
      break;
    case Method::kKa:
      state.u_aug = in.TakeMatrix(o, h);
      state.s = in.Take(state.m() + h);
      state.v_aug = in.TakeMatrix(i, h);
      break;
    case Method::kRm:
    case Method::kLru:
      Incompatible("record method is not an SVD re-parameterisation");
  }
}

}  // namespace

std::size_t RefineConfig::HyperFor(int layer_id) const {
  const auto it = layer_hyper.find(layer_id);
  if (it != layer_hyper.end()) return it->second;
  return method == Method::kKa ? aug : rank;
}

std::size_t RefineConfig::HeaderHyper() const {
  switch (method) {
    case Method::kKa: return aug;
    case Method::kLra:
    case Method::kMl:
    case Method::kLru: return rank;
    default: return 0;
  }
}

void RefineConfig::Validate() const {
  if (method == Method::kDense) {
    throw Error(ErrorCode::kUsage, "dense is not a refinement method");
  }
  auto bad = [](const std::string& what) { throw Error(ErrorCode::kInvalidInput, what); };
  if (!(lr > 0.0) || !std::isfinite(lr)) bad("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) bad("momentum must lie in [0, 1)");
  if (batch_size == 0) bad("batch size must be positive");
  if (method == Method::kRm && !(mask_p > 0.0 && mask_p <= 1.0)) {
    bad("mask proportion must lie in (0, 1]");
  }
  if (method != Method::kKa && method != Method::kRm) {
    if (rank == 0) bad("rank must be positive");
    for (const auto& [id, r] : layer_hyper) {
      if (r == 0) bad("rank override for layer " + std::to_string(id) + " must be positive");
    }
  }
  if (epochs > 0xffffffffu || batch_size > 0xffffffffu || HeaderHyper() > 0xffffffffu) {
    bad("configuration value exceeds the package header range");
  }
}

RefineSetup PrepareRefinement(const ModelSpec& spec, const ParamStore& theta1,
                              const RefineConfig& config) {
  config.Validate();
  for (const auto& [id, h] : config.layer_hyper) {
    (void)h;
    spec.targeted_layer(id);  // throws for unknown ids
  }
  RefineSetup setup;
  setup.network = Network(spec);
  const auto weights = TargetedWeights(spec);
  for (const auto& t : spec.targeted()) DeployedWeight(spec, theta1, t);

  if (config.method == Method::kRm) {
    setup.params = theta1;
    setup.mask = RmPrepare(theta1, config.seed, config.mask_p);
    setup.masked = true;
    return setup;
  }

  if (config.method == Method::kLru) {
    std::vector<std::size_t> ranks;
    for (const auto& t : spec.targeted()) ranks.push_back(config.HyperFor(t.id));
    const LruState lru = LruPrepare(spec, theta1, config.seed, ranks);
    for (const auto& e : theta1.entries()) {
      const auto it = weights.find(e.name);
      if (it == weights.end()) {
        setup.params.Add(e.name, e.shape, e.values, e.cls);
        continue;
      }
      const int id = it->second->id;
      const LruLayer& layer = lru.layers[static_cast<std::size_t>(id - 1)];
      setup.params.AddMatrix(FactorName(id, "L"), layer.left, ParamClass::kLearnable);
      setup.params.AddMatrix(FactorName(id, "R"), layer.right, ParamClass::kFrozen);
      setup.params.AddMatrix(FactorName(id, "base"), layer.base, ParamClass::kFrozen);
      setup.network.SetWeightMap(id, std::make_shared<LowRankUpdateWeight>(id));
    }
    return setup;
  }

  auto rng = Xoshiro256StarStar::ForStream(config.seed, RngStream::kAugmentInit);
  for (const auto& e : theta1.entries()) {
    const auto it = weights.find(e.name);
    if (it == weights.end()) {
      setup.params.Add(e.name, e.shape, e.values, e.cls);
      continue;
    }
    const TargetedLayer& t = *it->second;
    const ReparamMethod requested{config.method, config.HyperFor(t.id)};
    const ReparamMethod effective = EffectiveMethod(requested, t.rows, t.cols);
    if (effective.kind == Method::kDense) {
      setup.params.Add(e.name, e.shape, e.values, ParamClass::kLearnable);
      setup.dense_fallback_layers.push_back(t.id);
      continue;
    }
    const ReparamState state =
        Reparameterise(DeployedWeight(spec, theta1, t), effective, rng, e.name);
    RegisterState(state, t.id, setup.params);
    setup.network.SetWeightMap(
        t.id, std::make_shared<ReparamWeight>(t.id, effective, t.rows, t.cols));
  }
  return setup;
}

UpdatePackage BuildPackage(const ModelSpec& spec, const ParamStore& theta1,
                           const RefineSetup& setup, const ParamStore& trained,
                           const RefineConfig& config) {
  UpdatePackage p;
  PackageHeader& h = p.header;
  h.method = config.method;
  h.wire = config.wire;
  h.hyper = static_cast<std::uint32_t>(config.HeaderHyper());
  h.mask_p = config.method == Method::kRm ? config.mask_p : 0.0;
  h.prng_id = kPrngXoshiro256StarStar;
  h.seed = config.seed;
  h.fingerprint = ModelFingerprint(theta1);
  h.targeted_layers = static_cast<std::uint16_t>(spec.targeted().size());
  h.epochs = static_cast<std::uint32_t>(config.epochs);
  h.lr = config.lr;
  h.momentum = config.momentum;
  h.batch_size = static_cast<std::uint32_t>(config.batch_size);

  for (const auto& t : spec.targeted()) {
    LayerRecord r;
    r.layer_id = static_cast<std::uint16_t>(t.id);
    r.rows = static_cast<std::uint32_t>(t.rows);
    r.cols = static_cast<std::uint32_t>(t.cols);
    std::vector<std::string> names;
    if (config.method == Method::kRm) {
      r.method = Method::kRm;
      const std::string w = WeightName(t.id);
      r.values = Selected(trained.at(w).values, setup.mask.masks.at(w), config.wire);
      p.layers.push_back(std::move(r));
      continue;
    }
    if (config.method == Method::kLru) {
      r.method = Method::kLru;
      r.hyper = static_cast<std::uint32_t>(config.HyperFor(t.id));
      names = LearnableFactorNames(t.id, Method::kLru);
    } else {
      const ReparamMethod requested{config.method, config.HyperFor(t.id)};
      r.method = EffectiveMethod(requested, t.rows, t.cols).kind;
      r.hyper = static_cast<std::uint32_t>(requested.hyper);
      names = LearnableFactorNames(t.id, r.method);
    }
    for (const auto& name : names) {
      for (double v : trained.at(name).values) r.values.push_back(ToWire(v, config.wire));
    }
    p.layers.push_back(std::move(r));
  }

  for (const ParamEntry* e : UntargetedEntries(spec, theta1)) {
    TensorRecord t;
    t.name = e->name;
    const auto& values = trained.at(e->name).values;
    if (setup.masked) {
      t.values = Selected(values, setup.mask.masks.at(e->name), config.wire);
    } else {
      for (double v : values) t.values.push_back(ToWire(v, config.wire));
    }
    p.untargeted.push_back(std::move(t));
  }
  return p;
}

RefineResult CompactRefine(const ModelSpec& spec, const ParamStore& theta1,
                           const Dataset& d2, const RefineConfig& config,
                           const EpochCallback& on_epoch) {
  if (d2.size() == 0) throw Error(ErrorCode::kInvalidInput, "refinement data set is empty");
  RefineResult result;
  result.initial = PrepareRefinement(spec, theta1, config);
  result.network = result.initial.network;
  result.params = result.initial.params;

  TrainOptions options;
  options.epochs = config.epochs;
  options.lr = config.lr;
  options.momentum = config.momentum;
  options.batch_size = config.batch_size;
  options.seed = config.seed;
  result.report = Train(result.network, result.params, d2, options,
                        result.initial.masked ? &result.initial.mask.masks : nullptr,
                        on_epoch);

  // Keep the server copy identical to what the edge will rebuild.
  for (const auto& name : result.params.LearnableNames()) {
    ParamEntry& e = result.params.at(name);
    const std::vector<std::uint8_t>* mask =
        result.initial.masked ? &result.initial.mask.masks.at(name) : nullptr;
    for (std::size_t k = 0; k < e.values.size(); ++k) {
      if (mask == nullptr || (*mask)[k]) e.values[k] = ToWire(e.values[k], config.wire);
    }
  }
  result.package = BuildPackage(spec, theta1, result.initial, result.params, config);
  return result;
}

ParamStore Reconstitute(const ModelSpec& spec, const ParamStore& theta1,
                        const UpdatePackage& delta) {
  const PackageHeader& h = delta.header;
  if (ModelFingerprint(theta1) != h.fingerprint) {
    throw Error(ErrorCode::kStaleModel,
                "package was built for model " + HexDigest(h.fingerprint).substr(0, 16) +
                    "..., deployed model is " +
                    HexDigest(ModelFingerprint(theta1)).substr(0, 16) + "...");
  }
  if (h.prng_id != kPrngXoshiro256StarStar) {
    Incompatible("unknown PRNG id " + std::to_string(h.prng_id));
  }
  const auto& targeted = spec.targeted();
  if (h.targeted_layers != targeted.size() || delta.layers.size() != targeted.size()) {
    Incompatible("package targets " + std::to_string(h.targeted_layers) + " layers with " +
                 std::to_string(delta.layers.size()) + " records, model has " +
                 std::to_string(targeted.size()));
  }
  if (!IsSvdMethod(h.method) && h.method != Method::kRm && h.method != Method::kLru) {
    Incompatible("package method is not a refinement method");
  }
  for (std::size_t k = 0; k < targeted.size(); ++k) {
    const LayerRecord& r = delta.layers[k];
    const TargetedLayer& t = targeted[k];
    if (r.layer_id != t.id || r.rows != t.rows || r.cols != t.cols) {
      Incompatible("record " + std::to_string(k) + " describes layer " +
                   std::to_string(r.layer_id) + " as " + std::to_string(r.rows) + "x" +
                   std::to_string(r.cols) + ", model has layer " + std::to_string(t.id) +
                   " as " + std::to_string(t.rows) + "x" + std::to_string(t.cols));
    }
  }

  MaskPlan mask;
  if (h.method == Method::kRm) {
    if (!(h.mask_p > 0.0 && h.mask_p <= 1.0)) Incompatible("mask proportion out of range");
    mask = RmPrepare(theta1, h.seed, h.mask_p);
  }
  std::vector<Matrix> lru_rights;
  if (h.method == Method::kLru) {
    std::vector<std::size_t> ranks;
    for (const auto& r : delta.layers) ranks.push_back(r.hyper);
    try {
      lru_rights = LruRandomFactors(spec, h.seed, ranks);
    } catch (const Error& e) {
      Incompatible(e.what());
    }
  }

  ParamStore theta2 = theta1;
  auto rng = Xoshiro256StarStar::ForStream(h.seed, RngStream::kAugmentInit);
  for (std::size_t k = 0; k < targeted.size(); ++k) {
    const LayerRecord& r = delta.layers[k];
    const TargetedLayer& t = targeted[k];
    const std::string wname = WeightName(t.id);
    const Matrix phi = DeployedWeight(spec, theta1, t);

    if (h.method == Method::kRm) {
      const auto& m = mask.masks.at(wname);
      if (r.method != Method::kRm || r.values.size() != Ones(m)) {
        Incompatible("random-mask record for " + wname + " does not match the mask");
      }
      std::vector<double> values = theta1.at(wname).values;
      std::size_t next = 0;
      for (std::size_t j = 0; j < values.size(); ++j) {
        if (m[j]) values[j] = r.values[next++];
      }
      theta2.SetValues(wname, std::move(values));
      continue;
    }

    if (h.method == Method::kLru) {
      if (r.method != Method::kLru || r.values.size() != t.rows * r.hyper) {
        Incompatible("low-rank-update record for " + wname + " has the wrong size");
      }
      const Matrix left(t.rows, r.hyper, r.values);
      theta2.SetValues(wname, LruRecover(phi, left, lru_rights[k]).data());
      continue;
    }

    const ReparamMethod effective = EffectiveMethod({h.method, r.hyper}, t.rows, t.cols);
    if (r.method != effective.kind) {
      Incompatible("record for " + wname + " is tagged " + std::string(MethodName(r.method)) +
                   ", expected " + std::string(MethodName(effective.kind)));
    }
    if (r.values.size() != ParamCount(effective, t.rows, t.cols, false)) {
      Incompatible("record for " + wname + " holds " + std::to_string(r.values.size()) +
                   " scalars, expected " +
                   std::to_string(ParamCount(effective, t.rows, t.cols, false)));
    }
    ReparamState state;
    if (effective.kind == Method::kDense) {
      state.method = effective;
      state.rows = t.rows;
      state.cols = t.cols;
    } else {
      state = Reparameterise(phi, effective, rng, wname);
    }
    InstallFactors(state, r);
    theta2.SetValues(wname, RecoverWeight(state).data());
  }

  const auto untargeted = UntargetedEntries(spec, theta1);
  if (delta.untargeted.size() != untargeted.size()) {
    Incompatible("package carries " + std::to_string(delta.untargeted.size()) +
                 " untargeted tensors, model has " + std::to_string(untargeted.size()));
  }
  for (std::size_t k = 0; k < untargeted.size(); ++k) {
    const ParamEntry& e = *untargeted[k];
    const TensorRecord& tr = delta.untargeted[k];
    if (tr.name != e.name) Incompatible("expected tensor " + e.name + ", found " + tr.name);
    if (h.method == Method::kRm) {
      const auto& m = mask.masks.at(e.name);
      if (tr.values.size() != Ones(m)) Incompatible("masked tensor " + e.name + " size");
      std::vector<double> values = e.values;
      std::size_t next = 0;
      for (std::size_t j = 0; j < values.size(); ++j) {
        if (m[j]) values[j] = tr.values[next++];
      }
      theta2.SetValues(e.name, std::move(values));
    } else {
      if (tr.values.size() != e.values.size()) Incompatible("tensor " + e.name + " size");
      theta2.SetValues(e.name, tr.values);
    }
  }
  return theta2;
}

EdgeDevice::EdgeDevice(ModelSpec spec, ParamStore deployed)
    : spec_(std::move(spec)),
      params_(std::move(deployed)),
      fingerprint_(ModelFingerprint(params_)) {}

void EdgeDevice::Apply(const UpdatePackage& delta) {
  ParamStore next = Reconstitute(spec_, params_, delta);
  Digest next_fingerprint = ModelFingerprint(next);
  params_ = std::move(next);
  fingerprint_ = next_fingerprint;
}

void EdgeDevice::Apply(std::span<const std::uint8_t> package_bytes) {
  Apply(DeserializePackage(package_bytes));
}

}  // namespace deltaforge
