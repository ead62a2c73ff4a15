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

#include "deltaforge/baselines.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "deltaforge/error.h"
#include "deltaforge/reparam.h"
#include "deltaforge/rng.h"

namespace deltaforge {

std::size_t MaskSelectedCount(std::size_t total, double proportion) {
  if (!(proportion > 0.0 && proportion <= 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "mask proportion must lie in (0, 1]");
  }
  return static_cast<std::size_t>(std::llround(proportion * static_cast<double>(total)));
}

MaskPlan RmPrepare(const ParamStore& theta, std::uint64_t seed, double proportion) {
  MaskPlan plan;
  plan.seed = seed;
  plan.proportion = proportion;
  plan.total = theta.LearnableScalarCount();
  plan.selected = MaskSelectedCount(plan.total, proportion);

  // Flat index -> (entry, offset) through cumulative sizes.
  std::vector<const ParamEntry*> entries;
  std::vector<std::size_t> starts;
  std::size_t offset = 0;
  for (const auto& e : theta.entries()) {
    if (!e.learnable()) continue;
    entries.push_back(&e);
    starts.push_back(offset);
    offset += e.values.size();
    plan.masks[e.name].assign(e.values.size(), 0);
  }
  auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kRandomMask);
  const std::vector<std::size_t> perm = SeededPermutation(plan.total, rng);
  for (std::size_t k = 0; k < plan.selected; ++k) {
    const std::size_t flat = perm[k];
    const auto it = std::upper_bound(starts.begin(), starts.end(), flat);
    const std::size_t idx = static_cast<std::size_t>(it - starts.begin()) - 1;
    plan.masks[entries[idx]->name][flat - starts[idx]] = 1;
  }
  return plan;
}

std::vector<Matrix> LruRandomFactors(const ModelSpec& spec, std::uint64_t seed,
                                     const std::vector<std::size_t>& ranks) {
  if (ranks.size() != spec.targeted().size()) {
    throw Error(ErrorCode::kInvalidInput, "need one LRU rank per targeted layer");
  }
  auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kLowRankUpdate);
  std::vector<Matrix> out;
  for (const auto& t : spec.targeted()) {
    const std::size_t r = ranks[static_cast<std::size_t>(t.id - 1)];
    if (r < 1 || r > std::min(t.rows, t.cols)) {
      throw Error(ErrorCode::kRank, "LRU rank " + std::to_string(r) + " invalid for layer " +
                                        std::to_string(t.id) + " (" +
                                        std::to_string(t.rows) + "x" +
                                        std::to_string(t.cols) + ")");
    }
    const double a = 1.0 / std::sqrt(static_cast<double>(t.cols));
    Matrix right(r, t.cols);
    for (double& x : right.data()) x = rng.Uniform(-a, a);
    out.push_back(std::move(right));
  }
  return out;
}

LruState LruPrepare(const ModelSpec& spec, const ParamStore& theta, std::uint64_t seed,
                    const std::vector<std::size_t>& ranks) {
  std::vector<Matrix> rights = LruRandomFactors(spec, seed, ranks);
  LruState state;
  state.seed = seed;
  for (const auto& t : spec.targeted()) {
    LruLayer layer;
    layer.layer_id = t.id;
    layer.rank = ranks[static_cast<std::size_t>(t.id - 1)];
    layer.left = Matrix(t.rows, layer.rank);
    layer.right = std::move(rights[static_cast<std::size_t>(t.id - 1)]);
    const ParamEntry& w = theta.at(WeightName(t.id));
    layer.base = Matrix(t.rows, t.cols, w.values);
    state.layers.push_back(std::move(layer));
  }
  return state;
}

LruState LruPrepare(const ModelSpec& spec, const ParamStore& theta, std::uint64_t seed,
                    std::size_t rank) {
  return LruPrepare(spec, theta, seed, std::vector<std::size_t>(spec.targeted().size(), rank));
}

void RegisterLru(const LruState& state, ParamStore& params) {
  for (const auto& layer : state.layers) {
    params.AddMatrix(FactorName(layer.layer_id, "L"), layer.left, ParamClass::kLearnable);
    params.AddMatrix(FactorName(layer.layer_id, "R"), layer.right, ParamClass::kFrozen);
    params.AddMatrix(FactorName(layer.layer_id, "base"), layer.base, ParamClass::kFrozen);
  }
}

Matrix LruRecover(const Matrix& base, const Matrix& left, const Matrix& right) {
  return Add(base, Matmul(left, right));
}

Matrix LowRankUpdateWeight::Recover(const ParamStore& params) const {
  return LruRecover(params.GetMatrix(FactorName(layer_id_, "base")),
                    params.GetMatrix(FactorName(layer_id_, "L")),
                    params.GetMatrix(FactorName(layer_id_, "R")));
}

void LowRankUpdateWeight::Backward(const ParamStore& params, const Matrix& weight_grad,
                                   Gradients& grads) const {
  const Matrix right = params.GetMatrix(FactorName(layer_id_, "R"));
  grads[FactorName(layer_id_, "L")] = MatmulTransB(weight_grad, right).data();
}

std::vector<std::string> LowRankUpdateWeight::LearnableNames() const {
  return LearnableFactorNames(layer_id_, Method::kLru);
}

std::vector<std::string> LowRankUpdateWeight::FrozenNames() const {
  return FrozenFactorNames(layer_id_, Method::kLru);
}

std::size_t BaselineUpdateSize(const MaskPlan& plan) { return plan.selected; }

std::size_t BaselineUpdateSize(const LruState& state, const ModelSpec& spec) {
  std::size_t total = 0;
  for (const auto& layer : state.layers) {
    const TargetedLayer& t = spec.targeted_layer(layer.layer_id);
    total += ParamCount({Method::kLru, layer.rank}, t.rows, t.cols, t.has_bias);
  }
  return total;
}

}  // namespace deltaforge
