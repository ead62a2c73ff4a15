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

// SVD re-parameterisations of a layer weight phi (o x i), phi = U diag(s) V^T:
//
//   LRA  learnable {L, R} with L = U_{1:r} diag(s_{1:r}), R = V_{1:r}^T;
//        phi = L R.
//   ML   learnable L, frozen R; phi = L R.
//   KA   frozen U, V; learnable augment columns U' (o x n), V' (i x n) and the
//        full weight vector s' (m + n); phi = [U, U'] diag(s') [V, V']^T.
//        s'_{1:m} starts at s, everything else uniform in +-kAugmentInitBound.
//
// The learnable part is what an update package carries; the frozen part is
// recomputed on the edge from the deployed weights.

#ifndef DELTAFORGE_REPARAM_H_
#define DELTAFORGE_REPARAM_H_

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "deltaforge/linalg.h"
#include "deltaforge/netcore.h"
#include "deltaforge/rng.h"

namespace deltaforge {

inline constexpr double kAugmentInitBound = 1e-4;

// Update methods. The numeric values are the tags used on the wire.
enum class Method : std::uint8_t {
  kDense = 0,
  kLra = 1,
  kMl = 2,
  kKa = 3,
  kRm = 4,
  kLru = 5,
};

std::string_view MethodName(Method method);
// Accepts "dense", "lra", "ml", "ka", "rm", "lru"; throws kUsage otherwise.
Method ParseMethod(std::string_view name);

struct ReparamMethod {
  Method kind = Method::kDense;
  std::size_t hyper = 0;  // rank r (LRA, ML) or augmentation width n (KA)

  static ReparamMethod Dense() { return {Method::kDense, 0}; }
  static ReparamMethod Lra(std::size_t r) { return {Method::kLra, r}; }
  static ReparamMethod Ml(std::size_t r) { return {Method::kMl, r}; }
  static ReparamMethod Ka(std::size_t n) { return {Method::kKa, n}; }

  friend bool operator==(const ReparamMethod&, const ReparamMethod&) = default;
};

struct ReparamState {
  ReparamMethod method;
  std::size_t rows = 0;  // o
  std::size_t cols = 0;  // i
  Matrix left;           // LRA, ML: o x r
  Matrix right;          // LRA, ML: r x i (frozen for ML)
  Matrix u;              // KA, frozen: o x m
  Matrix v;              // KA, frozen: i x m
  Matrix u_aug;          // KA: o x n
  Matrix v_aug;          // KA: i x n
  std::vector<double> s; // KA: m + n
  Matrix weight;         // Dense

  std::size_t m() const { return rows < cols ? rows : cols; }
};

struct FactorGradients {
  Matrix left;
  Matrix right;
  Matrix u_aug;
  Matrix v_aug;
  std::vector<double> s;
  Matrix weight;
};

// True when LRA/ML are asked for more rank than the layer has; such layers
// are refined densely instead.
bool IsDegenerate(ReparamMethod method, std::size_t rows, std::size_t cols);
ReparamMethod EffectiveMethod(ReparamMethod method, std::size_t rows, std::size_t cols);

// `rng` is only drawn from for KA. `label` names the layer in SVD errors.
ReparamState Reparameterise(const Matrix& phi, ReparamMethod method,
                            Xoshiro256StarStar& rng, const std::string& label = "");

Matrix RecoverWeight(const ReparamState& state);

// d loss / d factor for the learnable factors, given g = d loss / d phi.
FactorGradients GradBackthrough(const ReparamState& state, const Matrix& g);

// Learnable scalars for one layer, including the bias when present.
std::size_t ParamCount(ReparamMethod method, std::size_t rows, std::size_t cols,
                       bool has_bias);

// Learnable tensor names of a layer in wire order (LRA: L, R; ML: L;
// KA: U_aug, s, V_aug; Dense: weight).
std::vector<std::string> LearnableFactorNames(int layer_id, Method method);
std::vector<std::string> FrozenFactorNames(int layer_id, Method method);

// Stores the factors under the layer's names with their learnable/frozen tags.
void RegisterState(const ReparamState& state, int layer_id, ParamStore& params);
ReparamState LoadState(const ParamStore& params, int layer_id, ReparamMethod method,
                       std::size_t rows, std::size_t cols);

class ReparamWeight : public WeightMap {
 public:
  ReparamWeight(int layer_id, ReparamMethod method, std::size_t rows, std::size_t cols)
      : layer_id_(layer_id), method_(method), rows_(rows), cols_(cols) {}

  Matrix Recover(const ParamStore& params) const override;
  void Backward(const ParamStore& params, const Matrix& weight_grad,
                Gradients& grads) const override;
  std::vector<std::string> LearnableNames() const override {
    return LearnableFactorNames(layer_id_, method_.kind);
  }
  std::vector<std::string> FrozenNames() const override {
    return FrozenFactorNames(layer_id_, method_.kind);
  }

 private:
  int layer_id_;
  ReparamMethod method_;
  std::size_t rows_;
  std::size_t cols_;
};

}  // namespace deltaforge

#endif  // DELTAFORGE_REPARAM_H_
