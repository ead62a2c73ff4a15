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

#ifndef DELTAFORGE_DATASET_H_
#define DELTAFORGE_DATASET_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace deltaforge {

struct Shape3 {
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return c * h * w; }
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

// A minibatch in (n, c, h, w) layout, one contiguous block per example.
struct Batch {
  std::size_t n = 0;
  Shape3 shape;
  std::vector<double> images;
  std::vector<int> labels;  // empty for unlabeled probe batches

  std::span<const double> example(std::size_t k) const {
    return {images.data() + k * shape.size(), shape.size()};
  }
};

// Raw 8-bit images with labels. Pixels are scaled by 1/255 when batches are
// materialised, so the full training set stays compact in memory.
class Dataset {
 public:
  Dataset() = default;
  Dataset(Shape3 shape, std::vector<std::uint8_t> pixels, std::vector<std::uint8_t> labels,
          std::size_t num_classes, std::string split);

  std::size_t size() const { return labels_.size(); }
  const Shape3& shape() const { return shape_; }
  std::size_t num_classes() const { return num_classes_; }
  const std::string& split() const { return split_; }
  const std::vector<std::uint8_t>& labels() const { return labels_; }
  const std::vector<std::uint8_t>& pixels() const { return pixels_; }

  Batch MakeBatch(std::span<const std::size_t> indices) const;
  Batch MakeBatch(std::size_t first, std::size_t count) const;
  Dataset Select(std::span<const std::size_t> indices, std::string split) const;

 private:
  Shape3 shape_;
  std::vector<std::uint8_t> pixels_;
  std::vector<std::uint8_t> labels_;
  std::size_t num_classes_ = 0;
  std::string split_;
};

}  // namespace deltaforge

#endif  // DELTAFORGE_DATASET_H_
