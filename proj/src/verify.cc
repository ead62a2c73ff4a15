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

#include "deltaforge/verify.h"

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <sstream>

#include "deltaforge/baselines.h"
#include "deltaforge/checkpoint.h"
#include "deltaforge/error.h"
#include "deltaforge/linalg.h"
#include "deltaforge/package.h"
#include "deltaforge/protocol.h"
#include "deltaforge/reparam.h"
#include "deltaforge/rng.h"

namespace deltaforge {
namespace {

// Scales the first gradient entry of every factor by 1.5.
class FaultyWeight : public WeightMap {
 public:
  explicit FaultyWeight(std::shared_ptr<const WeightMap> inner) : inner_(std::move(inner)) {}
  Matrix Recover(const ParamStore& params) const override { return inner_->Recover(params); }
  void Backward(const ParamStore& params, const Matrix& weight_grad,
                Gradients& grads) const override {
    inner_->Backward(params, weight_grad, grads);
    for (const auto& name : inner_->LearnableNames()) {
      auto it = grads.find(name);
      if (it != grads.end() && !it->second.empty()) it->second[0] *= 1.5;
    }
  }
  std::vector<std::string> LearnableNames() const override { return inner_->LearnableNames(); }
  std::vector<std::string> FrozenNames() const override { return inner_->FrozenNames(); }

 private:
  std::shared_ptr<const WeightMap> inner_;
};

std::string Fmt(double v) {
  std::ostringstream out;
  out.precision(3);
  out << v;
  return out.str();
}

Matrix RandomMatrix(std::size_t rows, std::size_t cols, Xoshiro256StarStar& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.Uniform(-1.0, 1.0);
  return m;
}

Batch ProbeBatch(const Shape3& shape, std::size_t n, Xoshiro256StarStar& rng) {
  Batch b;
  b.n = n;
  b.shape = shape;
  b.images.resize(n * shape.size());
  for (double& x : b.images) x = rng.NextUnit();
  return b;
}

ParamStore RandomTheta(const ModelSpec& spec, std::uint64_t seed) {
  auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kWeightInit);
  ParamStore theta = InitializeParams(spec, rng);
  // Nonzero biases so every trailer tensor carries information.
  for (const auto& t : spec.targeted()) {
    if (!t.has_bias) continue;
    auto& b = theta.at(BiasName(t.id)).values;
    for (double& x : b) x = rng.Uniform(-0.1, 0.1);
  }
  return theta;
}

RefineConfig SmallConfig(Method method) {
  RefineConfig c;
  c.method = method;
  c.rank = 2;
  c.aug = 1;
  c.mask_p = 0.3;
  c.epochs = 2;
  c.lr = 0.05;
  c.batch_size = 16;
  c.seed = 11;
  return c;
}

const std::vector<Method>& AllMethods() {
  static const std::vector<Method> kAll = {Method::kLra, Method::kMl, Method::kKa, Method::kRm,
                                           Method::kLru};
  return kAll;
}

// Moves zero or near-zero initial factors to moderate values so finite
// differences see real curvature.
void SpreadSmallFactors(ParamStore& params, Xoshiro256StarStar& rng) {
  for (const auto& name : params.LearnableNames()) {
    auto& e = params.at(name);
    const bool aug = name.ends_with(".U_aug") || name.ends_with(".V_aug");
    const bool lru_left = name.ends_with(".L") && params.Contains(
        name.substr(0, name.size() - 1) + "base");
    if (aug || lru_left) {
      for (double& x : e.values) x = rng.Uniform(-0.5, 0.5);
    }
    if (name.ends_with(".s")) {
      for (double& x : e.values) x += rng.Uniform(-0.3, 0.3);
    }
  }
}

PropertyResult GradientProperty(const std::string& name, Method method,
                                const VerifyOptions& options) {
  const ModelSpec spec = SmallCheckSpec();
  const ParamStore theta = RandomTheta(spec, options.seed);
  RefineSetup setup;
  if (method == Method::kDense) {
    setup.network = Network(spec);
    setup.params = theta;
  } else {
    setup = PrepareRefinement(spec, theta, SmallConfig(method));
  }
  auto rng = Xoshiro256StarStar::ForStream(options.seed, RngStream::kProbe);
  SpreadSmallFactors(setup.params, rng);
  Network net = setup.network;
  if (options.inject_fault == "gradient" && method == Method::kKa) {
    net.SetWeightMap(1, std::make_shared<FaultyWeight>(
                            std::shared_ptr<const WeightMap>(&setup.network.weight_map(1),
                                                             [](const WeightMap*) {})));
  }
  const Dataset data = RandomDataset(spec.input(), 6, spec.num_classes(), options.seed);
  const Batch batch = data.MakeBatch(0, data.size());
  const LossGrad analytic = LossAndGrad(net, setup.params, batch);

  constexpr double kEps = 1e-5;
  double worst = 0.0;
  std::string worst_at;
  std::size_t checked = 0;
  ParamStore probe = setup.params;
  for (const auto& pname : probe.LearnableNames()) {
    auto& values = probe.at(pname).values;
    const auto& g = analytic.grads.at(pname);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double keep = values[k];
      values[k] = keep + kEps;
      const double up = Loss(net, probe, batch);
      values[k] = keep - kEps;
      const double down = Loss(net, probe, batch);
      values[k] = keep;
      const double numeric = (up - down) / (2 * kEps);
      const double err = std::abs(numeric - g[k]);
      const double allowed = std::max(1e-4 * std::max(std::abs(numeric), std::abs(g[k])), 1e-6);
      const double ratio = err / allowed;
      if (ratio > worst) {
        worst = ratio;
        worst_at = pname + "[" + std::to_string(k) + "]";
      }
      ++checked;
    }
  }
  return {name, worst <= 1.0,
          std::to_string(checked) + " scalars, worst error/allowance " + Fmt(worst) +
              (worst_at.empty() ? "" : " at " + worst_at)};
}

template <typename Fn>
PropertyResult Guard(const std::string& name, Fn fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    return {name, false, std::string("threw: ") + e.what()};
  }
}

}  // namespace

ModelSpec SmallCheckSpec() {
  return ModelSpec({1, 8, 8}, {LayerDesc::Conv2D(1, 3, 3, 3, 1, 1), LayerDesc::Relu(),
                               LayerDesc::MaxPool2(), LayerDesc::Conv2D(3, 4, 3, 3, 1, 1),
                               LayerDesc::Relu(), LayerDesc::MaxPool2(), LayerDesc::Flatten(),
                               LayerDesc::FullyConnected(16, 3)});
}

Dataset RandomDataset(const Shape3& shape, std::size_t n, std::size_t classes,
                      std::uint64_t seed) {
  auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kProbe);
  std::vector<std::uint8_t> pixels(n * shape.size());
  for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.Below(256));
  std::vector<std::uint8_t> labels(n);
  for (auto& l : labels) l = static_cast<std::uint8_t>(rng.Below(classes));
  return Dataset(shape, std::move(pixels), std::move(labels), classes, "synthetic");
}

std::vector<PropertyResult> RunVerification(const VerifyOptions& options) {
  std::vector<PropertyResult> out;
  const std::uint64_t seed = options.seed;

  // SVD properties over seeded shapes.
  std::vector<Matrix> matrices;
  {
    auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kProbe);
    for (int k = 0; k < 20; ++k) {
      matrices.push_back(RandomMatrix(1 + rng.Below(12), 1 + rng.Below(16), rng));
    }
  }
  out.push_back(Guard("svd.orthonormality", [&] {
    double worst = 0.0;
    for (const auto& a : matrices) {
      const SvdFactors f = Svd(a);
      const std::size_t m = f.s.size();
      worst = std::max(worst, MaxAbs(Subtract(MatmulTransA(f.u, f.u), Matrix::Identity(m))));
      worst = std::max(worst, MaxAbs(Subtract(MatmulTransA(f.v, f.v), Matrix::Identity(m))));
    }
    return PropertyResult{"svd.orthonormality", worst <= 1e-10, "max |QtQ - I| " + Fmt(worst)};
  }));
  out.push_back(Guard("svd.reconstruction", [&] {
    double worst = 0.0;
    for (const auto& a : matrices) {
      const double rel =
          FrobeniusNorm(Subtract(Reconstruct(Svd(a)), a)) / std::max(FrobeniusNorm(a), 1e-300);
      worst = std::max(worst, rel);
    }
    return PropertyResult{"svd.reconstruction", worst <= 1e-9, "max relative error " + Fmt(worst)};
  }));
  out.push_back(Guard("svd.determinism", [&] {
    bool same = true;
    for (const auto& a : matrices) {
      const SvdFactors x = Svd(a);
      const SvdFactors y = Svd(Matrix(a));
      same = same && x.u == y.u && x.v == y.v && x.s == y.s;
    }
    return PropertyResult{"svd.determinism", same, same ? "bitwise identical" : "factors differ"};
  }));

  // Gradients against central differences.
  out.push_back(Guard("grad.dense", [&] { return GradientProperty("grad.dense", Method::kDense, options); }));
  out.push_back(Guard("grad.lra", [&] { return GradientProperty("grad.lra", Method::kLra, options); }));
  out.push_back(Guard("grad.ml", [&] { return GradientProperty("grad.ml", Method::kMl, options); }));
  out.push_back(Guard("grad.ka", [&] { return GradientProperty("grad.ka", Method::kKa, options); }));
  out.push_back(Guard("grad.lru", [&] { return GradientProperty("grad.lru", Method::kLru, options); }));

  out.push_back(Guard("sgd.momentum", [&] {
    ParamStore p;
    p.Add("x", {1}, {1.0}, ParamClass::kLearnable);
    MomentumSgd sgd(0.1, 0.9);
    sgd.Step(p, {{"x", {1.0}}});
    const double first = p.at("x").values[0] - 1.0;
    sgd.Step(p, {{"x", {1.0}}});
    const double second = p.at("x").values[0] - 1.0;
    const bool ok = std::abs(first + 0.1) <= 1e-15 && std::abs(second + 0.29) <= 1e-15;
    return PropertyResult{"sgd.momentum", ok,
                          "deltas " + Fmt(first) + ", " + Fmt(second) + " (expect -0.1, -0.29)"};
  }));

  const ModelSpec spec = SmallCheckSpec();
  const ParamStore theta = RandomTheta(spec, seed);
  const Dataset data = RandomDataset(spec.input(), 48, spec.num_classes(), seed + 1);
  auto probe_rng = Xoshiro256StarStar::ForStream(seed + 2, RngStream::kProbe);
  std::vector<Batch> probes;
  for (int k = 0; k < 10; ++k) probes.push_back(ProbeBatch(spec.input(), 8, probe_rng));

  out.push_back(Guard("ka.init_preservation", [&] {
    const RefineSetup setup = PrepareRefinement(spec, theta, SmallConfig(Method::kKa));
    double worst = 0.0;
    for (const auto& b : probes) {
      worst = std::max(worst, MaxAbs(Subtract(Logits(setup.network, setup.params, b),
                                              Logits(Network(spec), theta, b))));
    }
    return PropertyResult{"ka.init_preservation", worst <= 1e-6, "max logit change " + Fmt(worst)};
  }));

  // One refinement per method and wire width, shared by the protocol checks.
  struct Run {
    Method method;
    WireFormat wire;
    RefineResult result;
  };
  std::vector<Run> runs;
  for (WireFormat wire : {WireFormat::kFloat32, WireFormat::kFloat64}) {
    for (Method m : AllMethods()) {
      RefineConfig c = SmallConfig(m);
      c.wire = wire;
      runs.push_back({m, wire, CompactRefine(spec, theta, data, c)});
    }
  }

  out.push_back(Guard("count.formula", [&] {
    std::string bad;
    for (const auto& run : runs) {
      const RefineConfig c = SmallConfig(run.method);
      std::size_t expected = 0;
      if (run.method == Method::kRm) {
        expected = MaskSelectedCount(theta.LearnableScalarCount(), c.mask_p);
      } else {
        for (const auto& t : spec.targeted()) {
          expected += ParamCount({run.method, c.HyperFor(t.id)}, t.rows, t.cols, t.has_bias);
        }
      }
      if (run.result.package.ScalarCount() != expected) bad += std::string(MethodName(run.method)) + " ";
    }
    return PropertyResult{"count.formula", bad.empty(),
                          bad.empty() ? "package sizes equal the counting formulas"
                                      : "mismatch for " + bad};
  }));

  out.push_back(Guard("protocol.equivalence", [&] {
    double worst32 = 0.0;
    double worst64 = 0.0;
    for (const auto& run : runs) {
      const Bytes bytes = SerializePackage(run.result.package);
      const ParamStore theta2 = Reconstitute(spec, theta, DeserializePackage(bytes));
      for (const auto& b : probes) {
        const double d = MaxAbs(Subtract(Logits(run.result.network, run.result.params, b),
                                         Logits(Network(spec), theta2, b)));
        (run.wire == WireFormat::kFloat32 ? worst32 : worst64) =
            std::max(run.wire == WireFormat::kFloat32 ? worst32 : worst64, d);
      }
    }
    return PropertyResult{"protocol.equivalence", worst32 <= 1e-6 && worst64 <= 1e-12,
                          "max logit gap 32-bit " + Fmt(worst32) + ", 64-bit " + Fmt(worst64)};
  }));

  out.push_back(Guard("package.roundtrip", [&] {
    bool ok = true;
    for (const auto& run : runs) {
      const Bytes bytes = SerializePackage(run.result.package);
      const UpdatePackage back = DeserializePackage(bytes);
      ok = ok && SerializePackage(back) == bytes &&
           bytes.size() == ComputeWireSize(run.result.package).total();
    }
    return PropertyResult{"package.roundtrip", ok, ok ? "byte-identical, sizes as computed"
                                                       : "round trip changed bytes"};
  }));

  out.push_back(Guard("package.crc_rejection", [&] {
    const Bytes good = SerializePackage(runs[2].result.package);
    std::size_t rejected = 0;
    for (std::size_t k = 0; k < good.size(); ++k) {
      Bytes bad = good;
      bad[k] ^= 0x5a;
      try {
        DeserializePackage(bad);
      } catch (const Error& e) {
        if (e.code() == ErrorCode::kCorruptPackage) ++rejected;
      }
    }
    return PropertyResult{"package.crc_rejection", rejected == good.size(),
                          std::to_string(rejected) + "/" + std::to_string(good.size()) +
                              " single-byte corruptions rejected"};
  }));

  out.push_back(Guard("package.stale_rejection", [&] {
    ParamStore other = theta;
    other.at(WeightName(1)).values[0] += 1e-9;
    EdgeDevice edge(spec, other);
    const ParamStore before = edge.params();
    bool stale = false;
    try {
      edge.Apply(SerializePackage(runs[2].result.package));
    } catch (const Error& e) {
      stale = e.code() == ErrorCode::kStaleModel;
    }
    const bool unchanged = edge.params() == before;
    return PropertyResult{"package.stale_rejection", stale && unchanged,
                          std::string(stale ? "stale model refused" : "not refused as stale") +
                              (unchanged ? ", deployed model untouched" : ", model mutated")};
  }));

  out.push_back(Guard("frozen.unchanged", [&] {
    std::string bad;
    for (const auto& run : runs) {
      const ParamStore& before = run.result.initial.params;
      const ParamStore& after = run.result.params;
      for (const auto& name : before.FrozenNames()) {
        if (!(before.at(name) == after.at(name))) bad += name + " ";
      }
      if (run.method == Method::kRm) {
        for (const auto& [name, mask] : run.result.initial.mask.masks) {
          const auto& a = before.at(name).values;
          const auto& b = after.at(name).values;
          for (std::size_t k = 0; k < mask.size(); ++k) {
            if (!mask[k] && a[k] != b[k]) {
              bad += name + "[" + std::to_string(k) + "] ";
              break;
            }
          }
        }
      }
    }
    return PropertyResult{"frozen.unchanged", bad.empty(),
                          bad.empty() ? "frozen tensors and unselected scalars bit-identical"
                                      : "changed: " + bad};
  }));

  out.push_back(Guard("rm.selected_count", [&] {
    bool ok = true;
    for (double p : {0.01, 0.1, 0.37, 1.0}) {
      const MaskPlan plan = RmPrepare(theta, seed, p);
      std::size_t ones = 0;
      for (const auto& [name, mask] : plan.masks) {
        ones += static_cast<std::size_t>(std::count(mask.begin(), mask.end(), 1));
      }
      ok = ok && ones == static_cast<std::size_t>(
                             std::llround(p * static_cast<double>(theta.LearnableScalarCount())));
    }
    return PropertyResult{"rm.selected_count", ok, "selected = round(P * |theta|)"};
  }));

  out.push_back(Guard("seed.sufficiency", [&] {
    const RefineConfig c = SmallConfig(Method::kLru);
    const auto rights =
        LruRandomFactors(spec, c.seed, std::vector<std::size_t>(spec.targeted().size(), c.rank));
    bool ok = true;
    for (const auto& run : runs) {
      if (run.method == Method::kLru) {
        for (const auto& t : spec.targeted()) {
          ok = ok && run.result.params.GetMatrix(FactorName(t.id, "R")) ==
                         rights[static_cast<std::size_t>(t.id - 1)];
        }
      }
      if (run.method == Method::kRm) {
        ok = ok && RmPrepare(theta, run.result.package.header.seed,
                             run.result.package.header.mask_p)
                           .masks == run.result.initial.mask.masks;
      }
    }
    return PropertyResult{"seed.sufficiency", ok,
                          ok ? "masks and random factors regenerate bit-identically"
                             : "regenerated state differs"};
  }));

  out.push_back(Guard("fraction.monotone", [&] {
    const ModelSpec tiny = ModelSpec::TinyNet();
    const ParamStore total = ZeroParams(tiny);
    bool ok = true;
    for (Method m : {Method::kLra, Method::kMl, Method::kKa, Method::kLru}) {
      double last = -1.0;
      for (std::size_t h = (m == Method::kKa ? 0 : 1); h <= 8; ++h) {
        std::size_t n = 0;
        for (const auto& t : tiny.targeted()) n += ParamCount({m, h}, t.rows, t.cols, t.has_bias);
        const double f = UpdateFraction(n, total.LearnableScalarCount());
        ok = ok && f > last;
        last = f;
      }
    }
    double last = -1.0;
    for (double p : {0.001, 0.01, 0.1, 0.5, 1.0}) {
      const double f = UpdateFraction(MaskSelectedCount(total.LearnableScalarCount(), p),
                                      total.LearnableScalarCount());
      ok = ok && f > last;
      last = f;
    }
    return PropertyResult{"fraction.monotone", ok, "update fraction strictly increasing in r, n, P"};
  }));

  return out;
}

}  // namespace deltaforge
