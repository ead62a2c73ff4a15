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

// Competitor update methods from federated learning.
//
// Random Mask (RM): a seeded mask selects round(P * |theta|) scalars of the
// whole model; only those are refined and transmitted.
// Low Rank Update (LRU): each targeted weight becomes phi0 + L R with frozen
// phi0 and a frozen random R regenerated from the seed; only L (initially
// zero) and the untargeted parameters are transmitted.

#ifndef DELTAFORGE_BASELINES_H_
#define DELTAFORGE_BASELINES_H_

#include <cstddef>
#include <cstdint>
#include <vector>

#include "deltaforge/linalg.h"
#include "deltaforge/netcore.h"

namespace deltaforge {

struct MaskPlan {
  std::uint64_t seed = 0;
  double proportion = 1.0;
  std::size_t total = 0;     // |theta|, learnable scalars of the dense model
  std::size_t selected = 0;  // round(P * |theta|)
  ScalarMasks masks;         // one entry per learnable tensor
};

std::size_t MaskSelectedCount(std::size_t total, double proportion);

// Selects the first round(P * |theta|) positions of a seeded permutation of
// the flattened learnable scalars (canonical entry order). 0 < P <= 1.
MaskPlan RmPrepare(const ParamStore& theta, std::uint64_t seed, double proportion);

struct LruLayer {
  int layer_id = 0;
  std::size_t rank = 0;
  Matrix left;   // o x r, learnable, starts at zero
  Matrix right;  // r x i, frozen, uniform in +-1/sqrt(i)
  Matrix base;   // o x i, frozen deployed weight
};

struct LruState {
  std::uint64_t seed = 0;
  std::vector<LruLayer> layers;
};

// `ranks[l - 1]` is the rank for targeted layer l. Throws kRank when a rank
// is 0 or exceeds min(o, i).
LruState LruPrepare(const ModelSpec& spec, const ParamStore& theta, std::uint64_t seed,
                    const std::vector<std::size_t>& ranks);
LruState LruPrepare(const ModelSpec& spec, const ParamStore& theta, std::uint64_t seed,
                    std::size_t rank);

// Frozen random R matrices for every layer, drawn in layer order from the
// seed's LRU stream. Server and edge both call this.
std::vector<Matrix> LruRandomFactors(const ModelSpec& spec, std::uint64_t seed,
                                     const std::vector<std::size_t>& ranks);

// Registers L (learnable), R and base (frozen) for each layer.
void RegisterLru(const LruState& state, ParamStore& params);

class LowRankUpdateWeight : public WeightMap {
 public:
  explicit LowRankUpdateWeight(int layer_id) : layer_id_(layer_id) {}
  Matrix Recover(const ParamStore& params) const override;
  void Backward(const ParamStore& params, const Matrix& weight_grad,
                Gradients& grads) const override;
  std::vector<std::string> LearnableNames() const override;
  std::vector<std::string> FrozenNames() const override;

 private:
  int layer_id_;
};

// phi0 + L R.
Matrix LruRecover(const Matrix& base, const Matrix& left, const Matrix& right);

// Transmitted scalars: RM -> selected count; LRU -> sum o*r over targeted
// layers plus every untargeted learnable scalar. Seeds cost nothing.
std::size_t BaselineUpdateSize(const MaskPlan& plan);
std::size_t BaselineUpdateSize(const LruState& state, const ModelSpec& spec);

}  // namespace deltaforge

#endif  // DELTAFORGE_BASELINES_H_
