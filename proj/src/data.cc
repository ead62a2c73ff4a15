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

#include "deltaforge/data.h"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iterator>

#include "deltaforge/error.h"
#include "deltaforge/rng.h"

namespace deltaforge {
namespace {

constexpr std::size_t kMnistClasses = 10;

std::vector<std::uint8_t> ReadFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

std::uint32_t ReadBigEndian32(const std::vector<std::uint8_t>& bytes, std::size_t offset,
                              const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) {
    throw Error(ErrorCode::kFormat, path.string() + ": truncated header");
  }
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void AppendBigEndian32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

void WriteFile(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

}  // namespace

Dataset::Dataset(Shape3 shape, std::vector<std::uint8_t> pixels,
                 std::vector<std::uint8_t> labels, std::size_t num_classes,
                 std::string split)
    : shape_(shape),
      pixels_(std::move(pixels)),
      labels_(std::move(labels)),
      num_classes_(num_classes),
      split_(std::move(split)) {
  if (pixels_.size() != labels_.size() * shape_.size()) {
    throw Error(ErrorCode::kShape, "dataset pixel count does not match label count");
  }
  for (std::uint8_t l : labels_) {
    if (l >= num_classes_) {
      throw Error(ErrorCode::kInvalidInput, "label " + std::to_string(l) +
                                                " outside class range");
    }
  }
}

Batch Dataset::MakeBatch(std::span<const std::size_t> indices) const {
  Batch b;
  b.n = indices.size();
  b.shape = shape_;
  const std::size_t per = shape_.size();
  b.images.resize(b.n * per);
  b.labels.resize(b.n);
  for (std::size_t k = 0; k < b.n; ++k) {
    const std::size_t src = indices[k];
    if (src >= size()) throw Error(ErrorCode::kInvalidInput, "example index out of range");
    for (std::size_t j = 0; j < per; ++j) {
      b.images[k * per + j] = static_cast<double>(pixels_[src * per + j]) / 255.0;
    }
    b.labels[k] = labels_[src];
  }
  return b;
}

Batch Dataset::MakeBatch(std::size_t first, std::size_t count) const {
  std::vector<std::size_t> idx(count);
  for (std::size_t k = 0; k < count; ++k) idx[k] = first + k;
  return MakeBatch(idx);
}

Dataset Dataset::Select(std::span<const std::size_t> indices, std::string split) const {
  const std::size_t per = shape_.size();
  std::vector<std::uint8_t> pixels(indices.size() * per);
  std::vector<std::uint8_t> labels(indices.size());
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const std::size_t src = indices[k];
    if (src >= size()) throw Error(ErrorCode::kInvalidInput, "example index out of range");
    std::copy_n(pixels_.begin() + static_cast<std::ptrdiff_t>(src * per), per,
                pixels.begin() + static_cast<std::ptrdiff_t>(k * per));
    labels[k] = labels_[src];
  }
  return Dataset(shape_, std::move(pixels), std::move(labels), num_classes_,
                 std::move(split));
}

Dataset LoadIdx(const std::filesystem::path& images, const std::filesystem::path& labels,
                std::string split) {
  const std::vector<std::uint8_t> img = ReadFile(images);
  const std::vector<std::uint8_t> lab = ReadFile(labels);

  const std::uint32_t img_magic = ReadBigEndian32(img, 0, images);
  if (img_magic != kIdxImagesMagic) {
    throw Error(ErrorCode::kFormat, images.string() + ": bad magic for IDX images");
  }
  const std::uint32_t lab_magic = ReadBigEndian32(lab, 0, labels);
  if (lab_magic != kIdxLabelsMagic) {
    throw Error(ErrorCode::kFormat, labels.string() + ": bad magic for IDX labels");
  }
  const std::size_t n = ReadBigEndian32(img, 4, images);
  const std::size_t rows = ReadBigEndian32(img, 8, images);
  const std::size_t cols = ReadBigEndian32(img, 12, images);
  const std::size_t n_labels = ReadBigEndian32(lab, 4, labels);
  if (n != n_labels) {
    throw Error(ErrorCode::kFormat, "image count " + std::to_string(n) +
                                        " does not match label count " +
                                        std::to_string(n_labels));
  }
  if (img.size() != 16 + n * rows * cols) {
    throw Error(ErrorCode::kFormat, images.string() + ": payload length " +
                                        std::to_string(img.size() - 16) +
                                        " does not match header");
  }
  if (lab.size() != 8 + n) {
    throw Error(ErrorCode::kFormat, labels.string() + ": payload length does not match header");
  }
  std::vector<std::uint8_t> pixels(img.begin() + 16, img.end());
  std::vector<std::uint8_t> label_bytes(lab.begin() + 8, lab.end());
  return Dataset({1, rows, cols}, std::move(pixels), std::move(label_bytes), kMnistClasses,
                 std::move(split));
}

Dataset LoadMnist(const std::filesystem::path& dir, const std::string& split) {
  if (split == "train") {
    return LoadIdx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", split);
  }
  if (split == "test") {
    return LoadIdx(dir / "t10k-images-idx3-ubyte", dir / "t10k-labels-idx1-ubyte", split);
  }
  throw Error(ErrorCode::kInvalidInput, "unknown MNIST split " + split);
}

std::optional<std::filesystem::path> DataDirFromEnv() {
  const char* value = std::getenv(kDataDirEnv);
  if (value == nullptr || *value == '\0') return std::nullopt;
  return std::filesystem::path(value);
}

std::vector<std::size_t> SubsetIndices(std::size_t n, double p, std::uint64_t seed) {
  if (!(p > 0.0 && p <= 1.0)) {
    throw Error(ErrorCode::kInvalidInput, "subset fraction must lie in (0, 1]");
  }
  auto rng = Xoshiro256StarStar::ForStream(seed, RngStream::kSubset);
  std::vector<std::size_t> perm = SeededPermutation(n, rng);
  perm.resize(static_cast<std::size_t>(std::llround(p * static_cast<double>(n))));
  return perm;
}

Dataset Subset(const Dataset& data, double p, std::uint64_t seed) {
  return data.Select(SubsetIndices(data.size(), p, seed), data.split() + "-subset");
}

std::vector<std::size_t> MissingClasses(const Dataset& data) {
  std::vector<bool> seen(data.num_classes(), false);
  for (std::uint8_t l : data.labels()) seen[l] = true;
  std::vector<std::size_t> missing;
  for (std::size_t c = 0; c < seen.size(); ++c) {
    if (!seen[c]) missing.push_back(c);
  }
  return missing;
}

void WriteIdx(const std::filesystem::path& images, const std::filesystem::path& labels,
              const Dataset& data) {
  std::vector<std::uint8_t> img;
  AppendBigEndian32(img, kIdxImagesMagic);
  AppendBigEndian32(img, static_cast<std::uint32_t>(data.size()));
  AppendBigEndian32(img, static_cast<std::uint32_t>(data.shape().h));
  AppendBigEndian32(img, static_cast<std::uint32_t>(data.shape().w));
  img.insert(img.end(), data.pixels().begin(), data.pixels().end());
  std::vector<std::uint8_t> lab;
  AppendBigEndian32(lab, kIdxLabelsMagic);
  AppendBigEndian32(lab, static_cast<std::uint32_t>(data.size()));
  lab.insert(lab.end(), data.labels().begin(), data.labels().end());
  WriteFile(images, img);
  WriteFile(labels, lab);
}

}  // namespace deltaforge
