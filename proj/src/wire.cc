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

#include "deltaforge/wire.h"

#include <openssl/evp.h>
#include <zlib.h>

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>

namespace deltaforge {

void ByteWriter::F32(float v) { U32(std::bit_cast<std::uint32_t>(v)); }
void ByteWriter::F64(double v) { U64(std::bit_cast<std::uint64_t>(v)); }

void ByteWriter::String(const std::string& s) {
  if (s.size() > 0xffff) throw Error(ErrorCode::kInvalidInput, "string too long to encode");
  U16(static_cast<std::uint16_t>(s.size()));
  Raw({reinterpret_cast<const std::uint8_t*>(s.data()), s.size()});
}

void ByteReader::Need(std::size_t n) const {
  if (remaining() < n) {
    throw Error(error_code_, "truncated input: need " + std::to_string(n) +
                                 " bytes at offset " + std::to_string(pos_) + ", have " +
                                 std::to_string(remaining()));
  }
}

std::uint64_t ByteReader::Little(int n) {
  Need(static_cast<std::size_t>(n));
  std::uint64_t v = 0;
  for (int k = 0; k < n; ++k) v |= std::uint64_t{bytes_[pos_ + k]} << (8 * k);
  pos_ += static_cast<std::size_t>(n);
  return v;
}

float ByteReader::F32() { return std::bit_cast<float>(U32()); }
double ByteReader::F64() { return std::bit_cast<double>(U64()); }

std::span<const std::uint8_t> ByteReader::Raw(std::size_t n) {
  Need(n);
  auto out = bytes_.subspan(pos_, n);
  pos_ += n;
  return out;
}

std::string ByteReader::String() {
  const std::size_t n = U16();
  auto raw = Raw(n);
  return std::string(raw.begin(), raw.end());
}

std::uint32_t Crc32(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  // zlib takes uInt lengths; feed in chunks.
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const std::size_t n = std::min<std::size_t>(bytes.size() - pos, 1u << 30);
    crc = crc32(crc, bytes.data() + pos, static_cast<uInt>(n));
    pos += n;
  }
  return static_cast<std::uint32_t>(crc);
}

Digest Sha256(std::span<const std::uint8_t> bytes) {
  Digest d{};
  unsigned int len = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), d.data(), &len, EVP_sha256(), nullptr) != 1 ||
      len != d.size()) {
    throw Error(ErrorCode::kIo, "SHA-256 computation failed");
  }
  return d;
}

std::string HexDigest(const Digest& d) {
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (std::uint8_t b : d) {
    out.push_back(kHex[b >> 4]);
    out.push_back(kHex[b & 0xf]);
  }
  return out;
}

Bytes ReadBinaryFile(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return Bytes(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void WriteBinaryFileAtomic(const std::filesystem::path& path, const Bytes& bytes) {
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::kIo, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::kIo, "short write to " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorCode::kIo, "cannot move " + tmp.string() + ": " + ec.message());
}

}  // namespace deltaforge
