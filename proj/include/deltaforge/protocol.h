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

// Server-side compact refinement and edge-side reconstitution.
//
// The server re-parameterises every targeted layer of the deployed model,
// trains only the new learnable set on fresh data and ships those values in
// an UpdatePackage. The edge re-derives the frozen parts from its own copy of
// the deployed weights, recombines them with the package and folds the
// result back into a plain dense model.

#ifndef DELTAFORGE_PROTOCOL_H_
#define DELTAFORGE_PROTOCOL_H_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <vector>

#include "deltaforge/baselines.h"
#include "deltaforge/netcore.h"
#include "deltaforge/package.h"
#include "deltaforge/reparam.h"

namespace deltaforge {

struct RefineConfig {
  Method method = Method::kKa;
  std::size_t rank = 1;     // LRA, ML, LRU
  std::size_t aug = 1;      // KA
  double mask_p = 0.01;     // RM
  // Per-layer replacement for `rank` or `aug`, keyed by targeted layer id.
  std::map<int, std::size_t> layer_hyper;
  std::size_t epochs = 1;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  std::uint64_t seed = 1;
  WireFormat wire = WireFormat::kFloat32;

  // The rank or augmentation width used for layer `layer_id`.
  std::size_t HyperFor(int layer_id) const;
  // Global hyperparameter recorded in the package header.
  std::size_t HeaderHyper() const;
  // Throws kInvalidInput (or kUsage for a dense method) on bad values.
  void Validate() const;
};

// The re-parameterised model before training.
struct RefineSetup {
  Network network;
  ParamStore params;
  MaskPlan mask;  // RM only
  bool masked = false;
  std::vector<int> dense_fallback_layers;
};

RefineSetup PrepareRefinement(const ModelSpec& spec, const ParamStore& theta1,
                              const RefineConfig& config);

struct RefineResult {
  UpdatePackage package;
  // The server's refined model, learnable values held at wire precision.
  Network network;
  ParamStore params;
  RefineSetup initial;  // state before optimisation, for audits
  TrainReport report;
};

using EpochCallback = std::function<void(std::size_t epoch, double loss)>;

// Throws kDivergence if the loss stops being finite.
RefineResult CompactRefine(const ModelSpec& spec, const ParamStore& theta1,
                           const Dataset& d2, const RefineConfig& config,
                           const EpochCallback& on_epoch = {});

// Builds the package for an already trained setup.
UpdatePackage BuildPackage(const ModelSpec& spec, const ParamStore& theta1,
                           const RefineSetup& setup, const ParamStore& trained,
                           const RefineConfig& config);

// Pure: returns the dense theta2 and never touches theta1. Errors:
// kStaleModel on a fingerprint mismatch (checked first), kIncompatiblePackage
// when the package disagrees with the architecture.
ParamStore Reconstitute(const ModelSpec& spec, const ParamStore& theta1,
                        const UpdatePackage& delta);

// Holds the live model and swaps in a reconstituted one only after the whole
// update has been decoded and rebuilt.
class EdgeDevice {
 public:
  EdgeDevice(ModelSpec spec, ParamStore deployed);

  const ModelSpec& spec() const { return spec_; }
  const ParamStore& params() const { return params_; }
  const Digest& fingerprint() const { return fingerprint_; }

  void Apply(const UpdatePackage& delta);
  void Apply(std::span<const std::uint8_t> package_bytes);

 private:
  ModelSpec spec_;
  ParamStore params_;
  Digest fingerprint_;
};

}  // namespace deltaforge

#endif  // DELTAFORGE_PROTOCOL_H_
