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

// Acceptance suite. Prints one PASS/FAIL/SKIP line per criterion; pass
// criterion names (A1 ... A8) as arguments to run a subset.

#include <algorithm>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "deltaforge/baselines.h"
#include "deltaforge/checkpoint.h"
#include "deltaforge/config.h"
#include "deltaforge/data.h"
#include "deltaforge/error.h"
#include "deltaforge/package.h"
#include "deltaforge/protocol.h"
#include "deltaforge/verify.h"
#include "test_support.h"

namespace deltaforge {
namespace {

using testing::CentralDifferences;
using testing::GramDeviation;
using testing::MaxAbsDiff;
using testing::NaiveFrobenius;
using testing::NaiveReconstruct;
using testing::SeededMatrix;

enum class Status { kPass, kFail, kSkip };

struct Outcome {
  Status status = Status::kFail;
  std::string detail;
};

class Clock {
 public:
  double Seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

std::string Fmt(double v, int precision = 4) {
  std::ostringstream s;
  s.precision(precision);
  s << v;
  return s.str();
}

Outcome Verdict(bool ok, std::string detail) {
  return {ok ? Status::kPass : Status::kFail, std::move(detail)};
}

bool BitEqual(const std::vector<double>& a, const std::vector<double>& b) {
  return a.size() == b.size() &&
         (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

// A1: SVD orthonormality, reconstruction and bitwise determinism.
Outcome CheckSvd() {
  const Clock clock;
  Xoshiro256StarStar shapes(2024);
  double worst_orth = 0.0, worst_rec = 0.0;
  bool deterministic = true;
  for (int k = 0; k < 200; ++k) {
    const std::size_t rows = 1 + shapes.Below(64);
    const std::size_t cols = 1 + shapes.Below(96);
    const Matrix a = SeededMatrix(rows, cols, 1000 + static_cast<std::uint64_t>(k));
    const SvdFactors f = Svd(a);
    const SvdFactors g = Svd(a);
    deterministic = deterministic && BitEqual(f.u.data(), g.u.data()) &&
                    BitEqual(f.v.data(), g.v.data()) && BitEqual(f.s, g.s);
    worst_orth = std::max({worst_orth, GramDeviation(f.u), GramDeviation(f.v)});
    const double rel =
        NaiveFrobenius(Subtract(NaiveReconstruct(f.u, f.s, f.v), a)) / NaiveFrobenius(a);
    worst_rec = std::max(worst_rec, rel);
  }
  const double t = clock.Seconds();
  return Verdict(worst_orth <= 1e-10 && worst_rec <= 1e-9 && deterministic && t < 10.0,
                 "200 matrices up to 64x96: orthonormality " + Fmt(worst_orth) +
                     " (<= 1e-10), reconstruction " + Fmt(worst_rec) + " (<= 1e-9), " +
                     (deterministic ? "bitwise deterministic" : "NOT deterministic") + ", " +
                     Fmt(t, 3) + " s (< 10 s)");
}

// Moves every learnable factor to a generic point so no gradient term is
// hidden by the near-zero initial augmentation or a zero LRU factor.
void Perturb(ParamStore& params, std::uint64_t seed) {
  Xoshiro256StarStar rng(seed);
  for (const auto& name : params.LearnableNames()) {
    for (double& x : params.at(name).values) x += rng.Uniform(-0.3, 0.3);
  }
}

// A2: analytic gradients against central differences.
Outcome CheckGradients() {
  const Clock clock;
  const ModelSpec spec = SmallCheckSpec();
  auto init = Xoshiro256StarStar::ForStream(11, RngStream::kWeightInit);
  const ParamStore theta = InitializeParams(spec, init);
  const Batch batch = RandomDataset(spec.input(), 8, 3, 12).MakeBatch(0, 8);
  bool ok = true;
  std::string detail;
  for (Method method : {Method::kLra, Method::kMl, Method::kKa, Method::kLru}) {
    RefineConfig config;
    config.method = method;
    config.rank = 2;
    config.aug = 2;
    RefineSetup setup = PrepareRefinement(spec, theta, config);
    Perturb(setup.params, 13);
    const LossGrad lg = LossAndGrad(setup.network, setup.params, batch);
    const auto check = CentralDifferences(
        [&](const ParamStore& p) { return Loss(setup.network, p, batch); }, setup.params,
        lg.grads);
    ok = ok && check.worst_ratio <= 1.0 && check.checked == setup.params.LearnableScalarCount();
    detail += std::string(MethodName(method)) + " " + std::to_string(check.checked) +
              " scalars worst " + Fmt(check.worst_ratio, 3) + "; ";
  }
  const double t = clock.Seconds();
  ok = ok && t < 60.0;
  return Verdict(ok, detail + "error/allowance <= 1 (1e-4 rel, 1e-6 abs), " + Fmt(t, 3) +
                         " s (< 60 s)");
}

struct MnistSetup {
  Dataset train, test;
  ModelSpec spec = ModelSpec::TinyNet();
  ParamStore theta1;
  double initial_accuracy = 0.0;
  double seconds = 0.0;
};

// Trains the deployed model with the default initial-training settings.
std::optional<MnistSetup> TrainDeployed(std::string* why) {
  const auto dir = DataDirFromEnv();
  if (!dir) {
    *why = "DELTAFORGE_DATA_DIR is not set";
    return std::nullopt;
  }
  const Clock clock;
  MnistSetup s;
  try {
    s.train = LoadMnist(*dir, "train");
    s.test = LoadMnist(*dir, "test");
  } catch (const Error& e) {
    *why = e.what();
    return std::nullopt;
  }
  const InitialTraining cfg;
  const Dataset d1 = Subset(s.train, cfg.subset_p, cfg.subset_seed);
  auto rng = Xoshiro256StarStar::ForStream(cfg.seed, RngStream::kWeightInit);
  s.theta1 = InitializeParams(s.spec, rng);
  Train(Network(s.spec), s.theta1, d1,
        TrainOptions{cfg.epochs, cfg.lr, cfg.momentum, cfg.batch_size, cfg.seed});
  s.initial_accuracy = Evaluate(Network(s.spec), s.theta1, s.test);
  s.seconds = clock.Seconds();
  return s;
}

struct EdgeRun {
  double accuracy = 0.0;
  double fraction = 0.0;
  std::size_t scalars = 0;
};

// Server refinement, wire transfer and edge reconstitution; accuracy is that
// of the edge model.
EdgeRun RefineAndDeploy(const MnistSetup& s, const RefineConfig& config) {
  const RefineResult r = CompactRefine(s.spec, s.theta1, s.train, config);
  EdgeDevice edge(s.spec, s.theta1);
  edge.Apply(SerializePackage(r.package));
  return {Evaluate(Network(s.spec), edge.params(), s.test), UpdateFraction(r.package, s.theta1),
          r.package.ScalarCount()};
}

RefineConfig KaConfig(std::vector<std::size_t> widths, std::uint64_t seed) {
  RefineConfig c;
  c.method = Method::kKa;
  c.aug = widths.front();
  for (std::size_t k = 0; k < widths.size(); ++k) c.layer_hyper[static_cast<int>(k + 1)] = widths[k];
  c.seed = seed;
  return c;
}

// A3: initial accuracy and the lift from a KA update within 2% of |theta|.
Outcome CheckMnistLift() {
  const Clock clock;
  std::string why;
  const auto s = TrainDeployed(&why);
  if (!s) return {Status::kSkip, why};
  const EdgeRun ka = RefineAndDeploy(*s, KaConfig({1, 1, 0}, 1));
  const double lift = 100.0 * (ka.accuracy - s->initial_accuracy);
  const double t = clock.Seconds();
  const bool ok = s->initial_accuracy >= 0.93 && ka.fraction <= 0.02 && lift >= 2.0 && t < 900.0;
  return Verdict(ok, "initial " + Fmt(100 * s->initial_accuracy) + "% (>= 93%), KA 1/1/0 " +
                         std::to_string(ka.scalars) + " scalars = " +
                         Fmt(100 * ka.fraction, 3) + "% (<= 2%), after " +
                         Fmt(100 * ka.accuracy) + "%, lift " + Fmt(lift, 3) +
                         " points (>= 2), " + Fmt(t, 4) + " s (< 900 s)");
}

// A4: KA against RM and LRU at about 1% of |theta|, three seeds each.
Outcome CheckMethodOrdering() {
  std::string why;
  const auto s = TrainDeployed(&why);
  if (!s) return {Status::kSkip, why};
  struct Point {
    const char* label;
    std::function<RefineConfig(std::uint64_t)> config;
    double mean = 0.0;
    double fraction = 0.0;
  };
  std::vector<Point> points = {
      {"KA 1/0/0", [](std::uint64_t seed) { return KaConfig({1, 0, 0}, seed); }},
      {"RM P=0.01",
       [](std::uint64_t seed) {
         RefineConfig c;
         c.method = Method::kRm;
         c.mask_p = 0.01;
         c.seed = seed;
         return c;
       }},
      {"LRU 2/2/1",
       [](std::uint64_t seed) {
         RefineConfig c;
         c.method = Method::kLru;
         c.rank = 2;
         c.layer_hyper = {{1, 2}, {2, 2}, {3, 1}};
         c.seed = seed;
         return c;
       }},
  };
  bool matched = true;
  std::string detail;
  for (auto& p : points) {
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const EdgeRun run = RefineAndDeploy(*s, p.config(seed));
      p.mean += run.accuracy / 3.0;
      p.fraction = run.fraction;
    }
    matched = matched && std::abs(p.fraction - 0.01) <= 0.001;
    detail += std::string(p.label) + " " + Fmt(100 * p.fraction, 3) + "% mean " +
              Fmt(100 * p.mean) + "%; ";
  }
  constexpr double kTie = 0.002;
  const bool ordered = points[0].mean + kTie >= points[1].mean && points[0].mean + kTie >= points[2].mean;
  return Verdict(matched && ordered, detail + "budget 1% +- 0.1%, KA >= RM and LRU (0.2 point ties)");
}

// A5: server and edge logits agree for every method at both wire widths.
Outcome CheckEquivalence() {
  const Clock clock;
  const ModelSpec spec = ModelSpec::TinyNet();
  auto init = Xoshiro256StarStar::ForStream(21, RngStream::kWeightInit);
  const ParamStore theta = InitializeParams(spec, init);
  const Dataset d2 = RandomDataset(spec.input(), 256, 10, 22);
  const Dataset probes = RandomDataset(spec.input(), 160, 10, 23);
  double worst32 = 0.0, worst64 = 0.0;
  for (Method method : {Method::kLra, Method::kMl, Method::kKa, Method::kRm, Method::kLru}) {
    for (WireFormat wire : {WireFormat::kFloat32, WireFormat::kFloat64}) {
      RefineConfig c;
      c.method = method;
      c.rank = 2;
      c.aug = 1;
      c.wire = wire;
      c.lr = 0.1;
      const RefineResult r = CompactRefine(spec, theta, d2, c);
      const ParamStore theta2 =
          Reconstitute(spec, theta, DeserializePackage(SerializePackage(r.package)));
      for (std::size_t b = 0; b < 10; ++b) {
        const Batch batch = probes.MakeBatch(16 * b, 16);
        const double diff = MaxAbsDiff(Logits(Network(spec), theta2, batch),
                                       Logits(r.network, r.params, batch));
        double& worst = wire == WireFormat::kFloat32 ? worst32 : worst64;
        worst = std::max(worst, diff);
      }
    }
  }
  const double t = clock.Seconds();
  return Verdict(worst32 <= 1e-6 && worst64 <= 1e-12 && t < 60.0,
                 "5 methods x 10 probe batches: 32-bit wire " + Fmt(worst32) +
                     " (<= 1e-6), 64-bit wire " + Fmt(worst64) + " (<= 1e-12), " + Fmt(t, 3) +
                     " s (< 60 s)");
}

// A6: transmitted scalar counts equal the closed forms on random layers.
Outcome CheckCounts() {
  Xoshiro256StarStar rng(31);
  std::size_t compared = 0, mismatched = 0;
  std::string first_mismatch;
  for (int trial = 0; trial < 50; ++trial) {
    ModelSpec spec;
    if (trial % 2 == 0) {
      const std::size_t i = 1 + rng.Below(40), o = 1 + rng.Below(40);
      spec = ModelSpec({i, 1, 1}, {LayerDesc::FullyConnected(i, o)});
    } else {
      const std::size_t c = 1 + rng.Below(4), k = 1 + rng.Below(3), o = 1 + rng.Below(16);
      spec = ModelSpec({c, k, k}, {LayerDesc::Conv2D(c, o, k, k, 1, 0), LayerDesc::Flatten()});
    }
    const TargetedLayer& t = spec.targeted().front();
    auto init = Xoshiro256StarStar::ForStream(100 + static_cast<std::uint64_t>(trial), RngStream::kWeightInit);
    const ParamStore theta = InitializeParams(spec, init);
    const Dataset d2 = RandomDataset(spec.input(), 4, spec.num_classes(), 7);
    const std::size_t m = std::min(t.rows, t.cols);
    const std::size_t r = 1 + rng.Below(m);
    const std::size_t n = rng.Below(4);
    const double p = 0.05 + 0.9 * rng.NextUnit();
    for (Method method : {Method::kLra, Method::kMl, Method::kKa, Method::kRm, Method::kLru}) {
      RefineConfig c;
      c.method = method;
      c.rank = r;
      c.aug = n;
      c.mask_p = p;
      c.epochs = 0;
      const RefineResult res = CompactRefine(spec, theta, d2, c);
      const Bytes bytes = SerializePackage(res.package);
      const UpdatePackage back = DeserializePackage(bytes);
      std::size_t expected = 0;
      if (method == Method::kRm) {
        expected = BaselineUpdateSize(RmPrepare(theta, c.seed, p));
      } else if (method == Method::kLru) {
        expected = BaselineUpdateSize(LruPrepare(spec, theta, c.seed, r), spec);
      } else {
        expected = ParamCount({method, method == Method::kKa ? n : r}, t.rows, t.cols, t.has_bias);
      }
      const std::size_t payload = ComputeWireSize(back).payload / 4;
      ++compared;
      if (back.ScalarCount() != expected || payload != expected) {
        ++mismatched;
        if (first_mismatch.empty()) {
          first_mismatch = std::string(MethodName(method)) + " on " + std::to_string(t.rows) +
                           "x" + std::to_string(t.cols) + ": " +
                           std::to_string(back.ScalarCount()) + " vs " + std::to_string(expected);
        }
      }
    }
  }
  const double ka = UpdateFraction(127939, 11173962);
  const double lru = UpdateFraction(135670, 11173962);
  const bool arithmetic = std::round(ka * 1e4) / 100 == 1.14 && std::round(lru * 1e4) / 100 == 1.21;
  return Verdict(mismatched == 0 && arithmetic,
                 std::to_string(compared - mismatched) + "/" + std::to_string(compared) +
                     " method x shape counts exact" +
                     (first_mismatch.empty() ? "" : " (first mismatch " + first_mismatch + ")") +
                     "; 127939/11173962 = " + Fmt(100 * ka, 3) + "%, 135670/11173962 = " +
                     Fmt(100 * lru, 3) + "%");
}

// A7: frozen tensors and unselected random-mask scalars are bit-identical
// after refinement; the random mask selects round(P |theta|) scalars.
Outcome CheckFrozen() {
  const ModelSpec spec = ModelSpec::TinyNet();
  auto init = Xoshiro256StarStar::ForStream(41, RngStream::kWeightInit);
  const ParamStore theta = InitializeParams(spec, init);
  const Dataset d2 = RandomDataset(spec.input(), 256, 10, 42);
  bool ok = true;
  std::string detail;
  for (Method method : {Method::kMl, Method::kKa, Method::kLru}) {
    RefineConfig c;
    c.method = method;
    c.rank = 2;
    c.aug = 1;
    c.lr = 0.1;
    const RefineResult r = CompactRefine(spec, theta, d2, c);
    std::size_t tensors = 0;
    for (const auto& name : r.initial.params.FrozenNames()) {
      ok = ok && BitEqual(r.params.at(name).values, r.initial.params.at(name).values);
      ++tensors;
    }
    ok = ok && tensors > 0;
    detail += std::string(MethodName(method)) + " " + std::to_string(tensors) + " frozen tensors; ";
  }
  std::size_t unselected = 0;
  for (double p : {0.01, 0.1, 0.37}) {
    RefineConfig c;
    c.method = Method::kRm;
    c.mask_p = p;
    c.lr = 0.1;
    const RefineResult r = CompactRefine(spec, theta, d2, c);
    const std::size_t expected =
        static_cast<std::size_t>(std::llround(p * static_cast<double>(theta.LearnableScalarCount())));
    std::size_t ones = 0;
    for (const auto& e : theta.entries()) {
      const auto& mask = r.initial.mask.masks.at(e.name);
      const auto& after = r.params.at(e.name).values;
      for (std::size_t k = 0; k < mask.size(); ++k) {
        if (mask[k]) {
          ++ones;
          continue;
        }
        ++unselected;
        ok = ok && std::bit_cast<std::uint64_t>(after[k]) == std::bit_cast<std::uint64_t>(e.values[k]);
      }
    }
    ok = ok && ones == expected && r.package.ScalarCount() == expected;
    detail += "rm P=" + Fmt(p) + " selects " + std::to_string(ones) + " of " +
              std::to_string(theta.LearnableScalarCount()) + "; ";
  }
  return Verdict(ok, detail + std::to_string(unselected) + " unselected scalars checked");
}

// A8: package round trip, corruption, staleness and rejection atomicity.
Outcome CheckPackages() {
  const ModelSpec spec = SmallCheckSpec();
  auto init = Xoshiro256StarStar::ForStream(51, RngStream::kWeightInit);
  const ParamStore theta = InitializeParams(spec, init);
  auto other_init = Xoshiro256StarStar::ForStream(52, RngStream::kWeightInit);
  const ParamStore other = InitializeParams(spec, other_init);
  const Dataset d2 = RandomDataset(spec.input(), 64, 3, 53);
  bool ok = true;
  std::size_t corruptions = 0, rejected = 0;
  for (Method method : {Method::kLra, Method::kMl, Method::kKa, Method::kRm, Method::kLru}) {
    RefineConfig c;
    c.method = method;
    c.rank = 2;
    c.mask_p = 0.2;
    const RefineResult r = CompactRefine(spec, theta, d2, c);
    const Bytes bytes = SerializePackage(r.package);
    ok = ok && SerializePackage(DeserializePackage(bytes)) == bytes;

    EdgeDevice edge(spec, theta);
    const Bytes before = CanonicalParams(edge.params());
    for (std::size_t k = 0; k < bytes.size(); ++k) {
      for (std::uint8_t flip : {std::uint8_t{0x01}, std::uint8_t{0xff}}) {
        Bytes bad = bytes;
        bad[k] ^= flip;
        ++corruptions;
        try {
          edge.Apply(bad);
        } catch (const Error& e) {
          if (e.code() == ErrorCode::kCorruptPackage) ++rejected;
        }
      }
    }
    EdgeDevice stale(spec, other);
    const Bytes stale_before = CanonicalParams(stale.params());
    try {
      stale.Apply(bytes);
      ok = false;
    } catch (const Error& e) {
      ok = ok && e.code() == ErrorCode::kStaleModel;
    }
    ok = ok && CanonicalParams(edge.params()) == before &&
         CanonicalParams(stale.params()) == stale_before &&
         edge.fingerprint() == ModelFingerprint(theta);
  }
  ok = ok && rejected == corruptions;
  return Verdict(ok, "5 methods: byte-identical round trip, " + std::to_string(rejected) + "/" +
                         std::to_string(corruptions) +
                         " single-byte corruptions rejected by CRC, stale fingerprints "
                         "rejected, deployed models bit-unchanged");
}

}  // namespace
}  // namespace deltaforge

int main(int argc, char** argv) {
  using deltaforge::Outcome;
  using deltaforge::Status;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"A1", deltaforge::CheckSvd},        {"A2", deltaforge::CheckGradients},
      {"A3", deltaforge::CheckMnistLift},  {"A4", deltaforge::CheckMethodOrdering},
      {"A5", deltaforge::CheckEquivalence}, {"A6", deltaforge::CheckCounts},
      {"A7", deltaforge::CheckFrozen},     {"A8", deltaforge::CheckPackages},
  };
  std::vector<std::string> wanted(argv + 1, argv + argc);
  for (const auto& w : wanted) {
    if (std::none_of(criteria.begin(), criteria.end(), [&](const auto& c) { return c.first == w; })) {
      std::cerr << "unknown criterion " << w << "\n";
      return 64;
    }
  }
  std::size_t failed = 0, skipped = 0, ran = 0;
  for (const auto& [name, check] : criteria) {
    if (!wanted.empty() && std::find(wanted.begin(), wanted.end(), name) == wanted.end()) continue;
    ++ran;
    Outcome o;
    try {
      o = check();
    } catch (const std::exception& e) {
      o = {Status::kFail, std::string("error: ") + e.what()};
    }
    const char* label = o.status == Status::kPass ? "PASS" : o.status == Status::kSkip ? "SKIP" : "FAIL";
    std::cout << name << " " << label << ": " << o.detail << std::endl;
    if (o.status == Status::kFail) ++failed;
    if (o.status == Status::kSkip) ++skipped;
  }
  if (failed) return 1;
  return skipped == ran ? 77 : 0;
}
