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

// Self-contained invariant suite behind `deltaforge verify`. Every property
// runs on seeded synthetic inputs, so no data set is needed.

#ifndef DELTAFORGE_VERIFY_H_
#define DELTAFORGE_VERIFY_H_

#include <cstdint>
#include <string>
#include <vector>

#include "deltaforge/dataset.h"
#include "deltaforge/netcore.h"

namespace deltaforge {

struct PropertyResult {
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 7;
  // "gradient" swaps in a knowingly wrong KA backward pass for layer 1 so
  // the report can be seen to catch it.
  std::string inject_fault;
};

std::vector<PropertyResult> RunVerification(const VerifyOptions& options = {});

// Three targeted layers (conv 3x9, conv 4x27, fc 3x16) over 1x8x8 inputs.
ModelSpec SmallCheckSpec();
// `n` examples of uniformly random pixels and labels.
Dataset RandomDataset(const Shape3& shape, std::size_t n, std::size_t classes,
                      std::uint64_t seed);

}  // namespace deltaforge

#endif  // DELTAFORGE_VERIFY_H_
