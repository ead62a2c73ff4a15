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

// MNIST ingestion (IDX files) and nested seeded subsets.

#ifndef DELTAFORGE_DATA_H_
#define DELTAFORGE_DATA_H_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "deltaforge/dataset.h"

namespace deltaforge {

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;
inline constexpr char kDataDirEnv[] = "DELTAFORGE_DATA_DIR";

// Parses an IDX3 image file and its IDX1 label file. Pixels are kept as raw
// bytes; batches scale them by 1/255.
Dataset LoadIdx(const std::filesystem::path& images, const std::filesystem::path& labels,
                std::string split = "idx");

// Loads "train" or "test" from the standard MNIST file names in `dir`.
Dataset LoadMnist(const std::filesystem::path& dir, const std::string& split);

// Value of DELTAFORGE_DATA_DIR, if set.
std::optional<std::filesystem::path> DataDirFromEnv();

// First round(p * n) entries of a seeded permutation of 0..n-1. Prefixes of
// the same permutation make subsets nested in p.
std::vector<std::size_t> SubsetIndices(std::size_t n, double p, std::uint64_t seed);
Dataset Subset(const Dataset& data, double p, std::uint64_t seed);

// Classes in [0, num_classes) without any example.
std::vector<std::size_t> MissingClasses(const Dataset& data);

// Writes IDX files; used for fixtures and tests.
void WriteIdx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const Dataset& data);

}  // namespace deltaforge

#endif  // DELTAFORGE_DATA_H_
