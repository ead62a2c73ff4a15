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

// Portable pseudo-random generation. The standard library distributions are
// implementation-defined, so masks and random matrices that the edge device
// must regenerate from a seed are drawn through these routines only.

#ifndef DELTAFORGE_RNG_H_
#define DELTAFORGE_RNG_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <vector>

namespace deltaforge {

// Identifier written into package headers for splitmix64 -> xoshiro256**.
inline constexpr std::uint8_t kPrngXoshiro256StarStar = 1;

// Independent streams derived from one run seed.
enum class RngStream : std::uint64_t {
  kAugmentInit = 1,
  kRandomMask = 2,
  kLowRankUpdate = 3,
  kBatchOrder = 4,
  kSubset = 5,
  kWeightInit = 6,
  kProbe = 7,
};

class SplitMix64 {
 public:
  explicit SplitMix64(std::uint64_t seed) : state_(seed) {}

  std::uint64_t Next() {
    std::uint64_t z = (state_ += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }

 private:
  std::uint64_t state_;
};

class Xoshiro256StarStar {
 public:
  explicit Xoshiro256StarStar(std::uint64_t seed) {
    SplitMix64 sm(seed);
    for (auto& word : s_) word = sm.Next();
  }

  static Xoshiro256StarStar ForStream(std::uint64_t seed, RngStream stream) {
    SplitMix64 mix(static_cast<std::uint64_t>(stream));
    return Xoshiro256StarStar(seed ^ mix.Next());
  }

  std::uint64_t Next() {
    const std::uint64_t result = Rotl(s_[1] * 5, 7) * 9;
    const std::uint64_t t = s_[1] << 17;
    s_[2] ^= s_[0];
    s_[3] ^= s_[1];
    s_[1] ^= s_[2];
    s_[0] ^= s_[3];
    s_[2] ^= t;
    s_[3] = Rotl(s_[3], 45);
    return result;
  }

  // Uniform in [0, 1) with 53 random bits.
  double NextUnit() { return static_cast<double>(Next() >> 11) * 0x1.0p-53; }

  // Uniform in [lo, hi].
  double Uniform(double lo, double hi) { return lo + (hi - lo) * NextUnit(); }

  // Uniform integer in [0, n) by rejection, so no modulo bias. n > 0.
  std::uint64_t Below(std::uint64_t n) {
    const std::uint64_t threshold = (0 - n) % n;
    while (true) {
      const std::uint64_t x = Next();
      if (x >= threshold) return x % n;
    }
  }

 private:
  static std::uint64_t Rotl(std::uint64_t x, int k) {
    return (x << k) | (x >> (64 - k));
  }

  std::array<std::uint64_t, 4> s_{};
};

// Fisher-Yates permutation of 0..n-1.
inline std::vector<std::size_t> SeededPermutation(std::size_t n,
                                                  Xoshiro256StarStar& rng) {
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.Below(i));
    std::swap(perm[i - 1], perm[j]);
  }
  return perm;
}

}  // namespace deltaforge

#endif  // DELTAFORGE_RNG_H_
