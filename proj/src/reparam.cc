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

#include "deltaforge/reparam.h"

#include <algorithm>
#include <string>

#include "deltaforge/error.h"

namespace deltaforge {
namespace {

void RequireShape(const Matrix& m, std::size_t rows, std::size_t cols, const char* what) {
  if (m.rows() != rows || m.cols() != cols) {
    throw Error(ErrorCode::kShape, std::string(what) + " is " + std::to_string(m.rows()) +
                                       "x" + std::to_string(m.cols()) + ", expected " +
                                       std::to_string(rows) + "x" + std::to_string(cols));
  }
}

Matrix RandomMatrix(std::size_t rows, std::size_t cols, double bound,
                    Xoshiro256StarStar& rng) {
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.Uniform(-bound, bound);
  return m;
}

}  // namespace

std::string_view MethodName(Method method) {
  switch (method) {
    case Method::kDense: return "dense";
    case Method::kLra: return "lra";
    case Method::kMl: return "ml";
    case Method::kKa: return "ka";
    case Method::kRm: return "rm";
    case Method::kLru: return "lru";
  }
  return "unknown";
}

Method ParseMethod(std::string_view name) {
  for (Method m : {Method::kDense, Method::kLra, Method::kMl, Method::kKa, Method::kRm,
                   Method::kLru}) {
    if (MethodName(m) == name) return m;
  }
  throw Error(ErrorCode::kUsage, "unknown method '" + std::string(name) +
                                     "' (expected lra, ml, ka, rm, lru or dense)");
}

bool IsDegenerate(ReparamMethod method, std::size_t rows, std::size_t cols) {
  const std::size_t m = std::min(rows, cols);
  return (method.kind == Method::kLra || method.kind == Method::kMl) && method.hyper > m;
}

ReparamMethod EffectiveMethod(ReparamMethod method, std::size_t rows, std::size_t cols) {
  return IsDegenerate(method, rows, cols) ? ReparamMethod::Dense() : method;
}

ReparamState Reparameterise(const Matrix& phi, ReparamMethod method,
                            Xoshiro256StarStar& rng, const std::string& label) {
  if (!phi.AllFinite()) {
    throw Error(ErrorCode::kInvalidInput, "weight " + label + " is not finite");
  }
  ReparamState state;
  state.method = method;
  state.rows = phi.rows();
  state.cols = phi.cols();
  const std::size_t m = state.m();
  SvdOptions options;
  options.label = label;
  switch (method.kind) {
    case Method::kDense:
      state.weight = phi;
      return state;
    case Method::kLra:
    case Method::kMl: {
      if (method.hyper < 1 || method.hyper > m) {
        throw Error(ErrorCode::kRank, "rank " + std::to_string(method.hyper) +
                                          " invalid for " + std::to_string(phi.rows()) +
                                          "x" + std::to_string(phi.cols()) + " weight " +
                                          label);
      }
      LowRankPair lr = Truncate(Svd(phi, options), method.hyper);
      state.left = std::move(lr.left);
      state.right = std::move(lr.right);
      return state;
    }
    case Method::kKa: {
      SvdFactors f = Svd(phi, options);
      const std::size_t n = method.hyper;
      state.u = std::move(f.u);
      state.v = std::move(f.v);
      state.s = std::move(f.s);
      state.u_aug = RandomMatrix(state.rows, n, kAugmentInitBound, rng);
      state.v_aug = RandomMatrix(state.cols, n, kAugmentInitBound, rng);
      for (std::size_t k = 0; k < n; ++k) {
        state.s.push_back(rng.Uniform(-kAugmentInitBound, kAugmentInitBound));
      }
      return state;
    }
    case Method::kRm:
    case Method::kLru:
      break;
  }
  throw Error(ErrorCode::kInvalidInput,
              std::string(MethodName(method.kind)) + " is not an SVD re-parameterisation");
}

Matrix RecoverWeight(const ReparamState& state) {
  switch (state.method.kind) {
    case Method::kDense:
      RequireShape(state.weight, state.rows, state.cols, "weight");
      return state.weight;
    case Method::kLra:
    case Method::kMl: {
      const std::size_t r = state.method.hyper;
      RequireShape(state.left, state.rows, r, "L");
      RequireShape(state.right, r, state.cols, "R");
      return Matmul(state.left, state.right);
    }
    case Method::kKa: {
      const std::size_t m = state.m();
      const std::size_t n = state.method.hyper;
      RequireShape(state.u, state.rows, m, "U");
      RequireShape(state.v, state.cols, m, "V");
      RequireShape(state.u_aug, state.rows, n, "U'");
      RequireShape(state.v_aug, state.cols, n, "V'");
      if (state.s.size() != m + n) {
        throw Error(ErrorCode::kShape, "s' has " + std::to_string(state.s.size()) +
                                           " entries, expected " + std::to_string(m + n));
      }
      return ScaledOuterSum(ConcatColumns(state.u, state.u_aug), state.s,
                            ConcatColumns(state.v, state.v_aug));
    }
    case Method::kRm:
    case Method::kLru:
      break;
  }
  throw Error(ErrorCode::kInvalidInput, "state does not hold an SVD re-parameterisation");
}

FactorGradients GradBackthrough(const ReparamState& state, const Matrix& g) {
  RequireShape(g, state.rows, state.cols, "weight gradient");
  FactorGradients out;
  switch (state.method.kind) {
    case Method::kDense:
      out.weight = g;
      return out;
    case Method::kLra:
      out.left = MatmulTransB(g, state.right);
      out.right = MatmulTransA(state.left, g);
      return out;
    case Method::kMl:
      out.left = MatmulTransB(g, state.right);
      return out;
    case Method::kKa: {
      const std::size_t m = state.m();
      const std::size_t n = state.method.hyper;
      const Matrix u_full = ConcatColumns(state.u, state.u_aug);
      const Matrix gv = Matmul(g, ConcatColumns(state.v, state.v_aug));  // o x (m+n)
      out.s.assign(m + n, 0.0);
      for (std::size_t r = 0; r < state.rows; ++r) {
        for (std::size_t k = 0; k < m + n; ++k) out.s[k] += u_full(r, k) * gv(r, k);
      }
      // dU' = G V' diag(s'_aug), dV' = G^T U' diag(s'_aug).
      out.u_aug = ColumnBlock(gv, m, n);
      out.v_aug = MatmulTransA(g, state.u_aug);
      for (std::size_t k = 0; k < n; ++k) {
        const double scale = state.s[m + k];
        for (std::size_t r = 0; r < state.rows; ++r) out.u_aug(r, k) *= scale;
        for (std::size_t r = 0; r < state.cols; ++r) out.v_aug(r, k) *= scale;
      }
      return out;
    }
    case Method::kRm:
    case Method::kLru:
      break;
  }
  throw Error(ErrorCode::kInvalidInput, "state does not hold an SVD re-parameterisation");
}

std::size_t ParamCount(ReparamMethod method, std::size_t rows, std::size_t cols,
                       bool has_bias) {
  const std::size_t bias = has_bias ? rows : 0;
  const std::size_t m = std::min(rows, cols);
  const std::size_t h = method.hyper;
  switch (EffectiveMethod(method, rows, cols).kind) {
    case Method::kDense: return rows * cols + bias;
    case Method::kLra: return h * (rows + cols) + bias;
    case Method::kMl: return h * rows + bias;
    case Method::kKa: return h * (rows + cols) + (m + h) + bias;
    case Method::kLru: return h * rows + bias;
    case Method::kRm: break;
  }
  throw Error(ErrorCode::kInvalidInput, "random-mask sizes are not per-layer");
}

std::vector<std::string> LearnableFactorNames(int layer_id, Method method) {
  switch (method) {
    case Method::kDense:
    case Method::kRm: return {WeightName(layer_id)};
    case Method::kLra: return {FactorName(layer_id, "L"), FactorName(layer_id, "R")};
    case Method::kMl:
    case Method::kLru: return {FactorName(layer_id, "L")};
    case Method::kKa:
      return {FactorName(layer_id, "U_aug"), FactorName(layer_id, "s"),
              FactorName(layer_id, "V_aug")};
  }
  return {};
}

std::vector<std::string> FrozenFactorNames(int layer_id, Method method) {
  switch (method) {
    case Method::kMl: return {FactorName(layer_id, "R")};
    case Method::kKa: return {FactorName(layer_id, "U"), FactorName(layer_id, "V")};
    case Method::kLru: return {FactorName(layer_id, "R"), FactorName(layer_id, "base")};
    default: return {};
  }
}

void RegisterState(const ReparamState& state, int layer_id, ParamStore& params) {
  constexpr auto kL = ParamClass::kLearnable;
  constexpr auto kF = ParamClass::kFrozen;
  switch (state.method.kind) {
    case Method::kDense:
      params.AddMatrix(WeightName(layer_id), state.weight, kL);
      return;
    case Method::kLra:
      params.AddMatrix(FactorName(layer_id, "L"), state.left, kL);
      params.AddMatrix(FactorName(layer_id, "R"), state.right, kL);
      return;
    case Method::kMl:
      params.AddMatrix(FactorName(layer_id, "L"), state.left, kL);
      params.AddMatrix(FactorName(layer_id, "R"), state.right, kF);
      return;
    case Method::kKa:
      params.AddMatrix(FactorName(layer_id, "U"), state.u, kF);
      params.AddMatrix(FactorName(layer_id, "V"), state.v, kF);
      params.AddMatrix(FactorName(layer_id, "U_aug"), state.u_aug, kL);
      params.Add(FactorName(layer_id, "s"), {state.s.size()}, state.s, kL);
      params.AddMatrix(FactorName(layer_id, "V_aug"), state.v_aug, kL);
      return;
    case Method::kRm:
    case Method::kLru:
      break;
  }
  throw Error(ErrorCode::kInvalidInput, "state does not hold an SVD re-parameterisation");
}

ReparamState LoadState(const ParamStore& params, int layer_id, ReparamMethod method,
                       std::size_t rows, std::size_t cols) {
  ReparamState state;
  state.method = method;
  state.rows = rows;
  state.cols = cols;
  switch (method.kind) {
    case Method::kDense: {
      const ParamEntry& e = params.at(WeightName(layer_id));
      state.weight = Matrix(rows, cols, e.values);
      break;
    }
    case Method::kLra:
    case Method::kMl:
      state.left = params.GetMatrix(FactorName(layer_id, "L"));
      state.right = params.GetMatrix(FactorName(layer_id, "R"));
      break;
    case Method::kKa:
      state.u = params.GetMatrix(FactorName(layer_id, "U"));
      state.v = params.GetMatrix(FactorName(layer_id, "V"));
      state.u_aug = params.GetMatrix(FactorName(layer_id, "U_aug"));
      state.v_aug = params.GetMatrix(FactorName(layer_id, "V_aug"));
      state.s = params.at(FactorName(layer_id, "s")).values;
      break;
    case Method::kRm:
    case Method::kLru:
      throw Error(ErrorCode::kInvalidInput, "not an SVD re-parameterisation");
  }
  return state;
}

Matrix ReparamWeight::Recover(const ParamStore& params) const {
  return RecoverWeight(LoadState(params, layer_id_, method_, rows_, cols_));
}

void ReparamWeight::Backward(const ParamStore& params, const Matrix& weight_grad,
                             Gradients& grads) const {
  const ReparamState state = LoadState(params, layer_id_, method_, rows_, cols_);
  FactorGradients g = GradBackthrough(state, weight_grad);
  switch (method_.kind) {
    case Method::kDense:
      grads[WeightName(layer_id_)] = std::move(g.weight.data());
      break;
    case Method::kLra:
      grads[FactorName(layer_id_, "L")] = std::move(g.left.data());
      grads[FactorName(layer_id_, "R")] = std::move(g.right.data());
      break;
    case Method::kMl:
      grads[FactorName(layer_id_, "L")] = std::move(g.left.data());
      break;
    case Method::kKa:
      grads[FactorName(layer_id_, "U_aug")] = std::move(g.u_aug.data());
      grads[FactorName(layer_id_, "s")] = std::move(g.s);
      grads[FactorName(layer_id_, "V_aug")] = std::move(g.v_aug.data());
      break;
    case Method::kRm:
    case Method::kLru:
      break;
  }
}

}  // namespace deltaforge
