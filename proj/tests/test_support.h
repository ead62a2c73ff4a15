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

// Oracles written directly from the layer and formula definitions, kept
// independent of the library's implementations.

#ifndef DELTAFORGE_TESTS_TEST_SUPPORT_H_
#define DELTAFORGE_TESTS_TEST_SUPPORT_H_

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "deltaforge/dataset.h"
#include "deltaforge/linalg.h"
#include "deltaforge/netcore.h"
#include "deltaforge/rng.h"

namespace deltaforge::testing {

inline Matrix SeededMatrix(std::size_t rows, std::size_t cols, std::uint64_t seed,
                           double lo = -1.0, double hi = 1.0) {
  Xoshiro256StarStar rng(seed);
  Matrix m(rows, cols);
  for (double& x : m.data()) x = rng.Uniform(lo, hi);
  return m;
}

inline double NaiveFrobenius(const Matrix& a) {
  double s = 0.0;
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < a.cols(); ++c) s += a(r, c) * a(r, c);
  }
  return std::sqrt(s);
}

// U diag(s) V^T by explicit triple loop.
inline Matrix NaiveReconstruct(const Matrix& u, const std::vector<double>& s, const Matrix& v) {
  Matrix out(u.rows(), v.rows());
  for (std::size_t r = 0; r < u.rows(); ++r) {
    for (std::size_t c = 0; c < v.rows(); ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < s.size(); ++k) acc += u(r, k) * s[k] * v(c, k);
      out(r, c) = acc;
    }
  }
  return out;
}

inline Matrix NaiveProduct(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(r, k) * b(k, c);
      out(r, c) = acc;
    }
  }
  return out;
}

// max |Q^T Q - I|.
inline double GramDeviation(const Matrix& q) {
  double worst = 0.0;
  for (std::size_t a = 0; a < q.cols(); ++a) {
    for (std::size_t b = 0; b < q.cols(); ++b) {
      double dot = 0.0;
      for (std::size_t r = 0; r < q.rows(); ++r) dot += q(r, a) * q(r, b);
      worst = std::max(worst, std::abs(dot - (a == b ? 1.0 : 0.0)));
    }
  }
  return worst;
}

inline double MaxAbsDiff(const Matrix& a, const Matrix& b) {
  double worst = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k) {
    worst = std::max(worst, std::abs(a.data()[k] - b.data()[k]));
  }
  return worst;
}

// Straight-line forward pass over one example, written from the layer
// definitions with direct convolution loops. Weights come from `weight(id)`
// as o x (c_in * k_h * k_w) matrices, biases from `bias(id)`.
inline std::vector<double> ReferenceForward(
    const ModelSpec& spec, std::span<const double> image,
    const std::function<Matrix(int)>& weight,
    const std::function<std::vector<double>(int)>& bias) {
  std::vector<double> x(image.begin(), image.end());
  Shape3 s = spec.input();
  int id = 0;
  for (const auto& layer : spec.layers()) {
    switch (layer.kind) {
      case LayerKind::kConv2D: {
        ++id;
        const Matrix w = weight(id);
        const std::vector<double> b = layer.has_bias ? bias(id) : std::vector<double>();
        const std::size_t kh = layer.kernel_h, kw = layer.kernel_w, st = layer.stride,
                          pad = layer.padding;
        const std::size_t oh = (s.h + 2 * pad - kh) / st + 1;
        const std::size_t ow = (s.w + 2 * pad - kw) / st + 1;
        std::vector<double> y(layer.out_channels * oh * ow, 0.0);
        for (std::size_t o = 0; o < layer.out_channels; ++o) {
          for (std::size_t py = 0; py < oh; ++py) {
            for (std::size_t px = 0; px < ow; ++px) {
              double acc = layer.has_bias ? b[o] : 0.0;
              for (std::size_t c = 0; c < s.c; ++c) {
                for (std::size_t dy = 0; dy < kh; ++dy) {
                  for (std::size_t dx = 0; dx < kw; ++dx) {
                    const long iy = static_cast<long>(py * st + dy) - static_cast<long>(pad);
                    const long ix = static_cast<long>(px * st + dx) - static_cast<long>(pad);
                    if (iy < 0 || ix < 0 || iy >= static_cast<long>(s.h) ||
                        ix >= static_cast<long>(s.w)) {
                      continue;
                    }
                    acc += w(o, (c * kh + dy) * kw + dx) *
                           x[(c * s.h + static_cast<std::size_t>(iy)) * s.w +
                             static_cast<std::size_t>(ix)];
                  }
                }
              }
              y[(o * oh + py) * ow + px] = acc;
            }
          }
        }
        x = std::move(y);
        s = {layer.out_channels, oh, ow};
        break;
      }
      case LayerKind::kFullyConnected: {
        ++id;
        const Matrix w = weight(id);
        std::vector<double> y(layer.out_channels);
        for (std::size_t o = 0; o < layer.out_channels; ++o) {
          double acc = layer.has_bias ? bias(id)[o] : 0.0;
          for (std::size_t k = 0; k < x.size(); ++k) acc += w(o, k) * x[k];
          y[o] = acc;
        }
        x = std::move(y);
        s = {layer.out_channels, 1, 1};
        break;
      }
      case LayerKind::kRelu:
        for (double& v : x) v = std::max(v, 0.0);
        break;
      case LayerKind::kMaxPool2: {
        const std::size_t oh = s.h / 2, ow = s.w / 2;
        std::vector<double> y(s.c * oh * ow);
        for (std::size_t c = 0; c < s.c; ++c) {
          for (std::size_t py = 0; py < oh; ++py) {
            for (std::size_t px = 0; px < ow; ++px) {
              double best = -INFINITY;
              for (std::size_t dy = 0; dy < 2; ++dy) {
                for (std::size_t dx = 0; dx < 2; ++dx) {
                  best = std::max(best, x[(c * s.h + 2 * py + dy) * s.w + 2 * px + dx]);
                }
              }
              y[(c * oh + py) * ow + px] = best;
            }
          }
        }
        x = std::move(y);
        s = {s.c, oh, ow};
        break;
      }
      case LayerKind::kFlatten:
        s = {s.size(), 1, 1};
        break;
    }
  }
  return x;
}

// Mean softmax cross-entropy computed from scratch.
inline double ReferenceLoss(const std::vector<std::vector<double>>& logits,
                            const std::vector<int>& labels) {
  double total = 0.0;
  for (std::size_t n = 0; n < logits.size(); ++n) {
    const double mx = *std::max_element(logits[n].begin(), logits[n].end());
    double z = 0.0;
    for (double v : logits[n]) z += std::exp(v - mx);
    total += std::log(z) + mx - logits[n][static_cast<std::size_t>(labels[n])];
  }
  return total / static_cast<double>(logits.size());
}

struct GradCheck {
  double worst_ratio = 0.0;  // error / allowance; <= 1 passes
  std::string worst_at;
  std::size_t checked = 0;
};

// Central differences (eps = 1e-5) on every learnable scalar; allowance is
// max(1e-4 * max(|analytic|, |numeric|), 1e-6).
inline GradCheck CentralDifferences(const std::function<double(const ParamStore&)>& loss,
                                    const ParamStore& params, const Gradients& analytic) {
  constexpr double kEps = 1e-5;
  GradCheck out;
  ParamStore probe = params;
  for (const auto& name : params.LearnableNames()) {
    auto& values = probe.at(name).values;
    const auto& g = analytic.at(name);
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double keep = values[k];
      values[k] = keep + kEps;
      const double up = loss(probe);
      values[k] = keep - kEps;
      const double down = loss(probe);
      values[k] = keep;
      const double numeric = (up - down) / (2 * kEps);
      const double allowance =
          std::max(1e-4 * std::max(std::abs(numeric), std::abs(g[k])), 1e-6);
      const double ratio = std::abs(numeric - g[k]) / allowance;
      if (ratio > out.worst_ratio) {
        out.worst_ratio = ratio;
        out.worst_at = name + "[" + std::to_string(k) + "]";
      }
      ++out.checked;
    }
  }
  return out;
}

}  // namespace deltaforge::testing

#endif  // DELTAFORGE_TESTS_TEST_SUPPORT_H_
