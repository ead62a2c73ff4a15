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

// Little-endian byte codec shared by the checkpoint and update-package
// containers, plus the checksum and digest they carry.

#ifndef DELTAFORGE_WIRE_H_
#define DELTAFORGE_WIRE_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "deltaforge/error.h"

namespace deltaforge {

using Bytes = std::vector<std::uint8_t>;
using Digest = std::array<std::uint8_t, 32>;

class ByteWriter {
 public:
  void U8(std::uint8_t v) { out_.push_back(v); }
  void U16(std::uint16_t v) { Little(v, 2); }
  void U32(std::uint32_t v) { Little(v, 4); }
  void U64(std::uint64_t v) { Little(v, 8); }
  void F32(float v);
  void F64(double v);
  void Raw(std::span<const std::uint8_t> bytes) {
    out_.insert(out_.end(), bytes.begin(), bytes.end());
  }
  // u16 length prefix.
  void String(const std::string& s);

  std::size_t size() const { return out_.size(); }
  const Bytes& bytes() const { return out_; }
  Bytes Take() { return std::move(out_); }

 private:
  void Little(std::uint64_t v, int n) {
    for (int k = 0; k < n; ++k) out_.push_back(static_cast<std::uint8_t>(v >> (8 * k)));
  }
  Bytes out_;
};

// Reads fail with `error_code` (a format or corruption code chosen by the
// container) when the input is exhausted.
class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, ErrorCode error_code)
      : bytes_(bytes), error_code_(error_code) {}

  std::uint8_t U8() { return static_cast<std::uint8_t>(Little(1)); }
  std::uint16_t U16() { return static_cast<std::uint16_t>(Little(2)); }
  std::uint32_t U32() { return static_cast<std::uint32_t>(Little(4)); }
  std::uint64_t U64() { return Little(8); }
  float F32();
  double F64();
  std::span<const std::uint8_t> Raw(std::size_t n);
  std::string String();

  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  std::uint64_t Little(int n);
  void Need(std::size_t n) const;

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
  ErrorCode error_code_;
};

// CRC-32 (IEEE 802.3, as in zlib/PNG).
std::uint32_t Crc32(std::span<const std::uint8_t> bytes);
Digest Sha256(std::span<const std::uint8_t> bytes);
std::string HexDigest(const Digest& d);

Bytes ReadBinaryFile(const std::filesystem::path& path);
// Writes to a temporary sibling and renames it into place.
void WriteBinaryFileAtomic(const std::filesystem::path& path, const Bytes& bytes);

}  // namespace deltaforge

#endif  // DELTAFORGE_WIRE_H_
