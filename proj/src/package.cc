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

#include "deltaforge/package.h"

#include <algorithm>
#include <string>

#include "deltaforge/error.h"

namespace deltaforge {
namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'L', 'T', 'A'};

std::uint32_t Count32(std::size_t n) {
  if (n > 0xffffffffu) throw Error(ErrorCode::kInvalidInput, "package section too large");
  return static_cast<std::uint32_t>(n);
}

void WriteScalars(ByteWriter& w, WireFormat wire, const std::vector<double>& values) {
  w.U32(Count32(values.size()));
  for (double v : values) {
    if (wire == WireFormat::kFloat32) {
      w.F32(static_cast<float>(v));
    } else {
      w.F64(v);
    }
  }
}

std::vector<double> ReadScalars(ByteReader& in, WireFormat wire) {
  const std::size_t n = in.U32();
  const std::size_t width = static_cast<std::size_t>(wire);
  if (n > in.remaining() / width) {
    throw Error(ErrorCode::kFormat, "scalar block runs past the end of the package");
  }
  std::vector<double> out(n);
  for (double& v : out) {
    v = wire == WireFormat::kFloat32 ? static_cast<double>(in.F32()) : in.F64();
  }
  return out;
}

Method ReadMethod(std::uint8_t tag) {
  if (tag > static_cast<std::uint8_t>(Method::kLru)) {
    throw Error(ErrorCode::kFormat, "unknown method tag " + std::to_string(tag));
  }
  return static_cast<Method>(tag);
}

}  // namespace

double ToWire(double v, WireFormat wire) {
  return wire == WireFormat::kFloat32 ? static_cast<double>(static_cast<float>(v)) : v;
}

std::size_t UpdatePackage::ScalarCount() const {
  std::size_t n = 0;
  for (const auto& r : layers) n += r.values.size();
  for (const auto& t : untargeted) n += t.values.size();
  return n;
}

std::vector<int> UpdatePackage::DenseFallbackLayers() const {
  std::vector<int> out;
  if (header.method != Method::kLra && header.method != Method::kMl &&
      header.method != Method::kKa) {
    return out;
  }
  for (const auto& r : layers) {
    if (r.method == Method::kDense) out.push_back(r.layer_id);
  }
  return out;
}

WireSize ComputeWireSize(const UpdatePackage& package) {
  WireSize size;
  size.header = kPackageHeaderBytes + kLayerRecordOverhead * package.layers.size();
  size.payload = static_cast<std::size_t>(package.header.wire) * package.ScalarCount();
  size.trailer = 4 + 4;
  for (const auto& t : package.untargeted) size.trailer += 2 + t.name.size() + 4;
  return size;
}

Bytes SerializePackage(const UpdatePackage& package) {
  const PackageHeader& h = package.header;
  if (h.wire != WireFormat::kFloat32 && h.wire != WireFormat::kFloat64) {
    throw Error(ErrorCode::kInvalidInput, "unsupported wire scalar width");
  }
  ByteWriter w;
  w.Raw(kMagic);
  w.U16(h.version);
  w.U8(static_cast<std::uint8_t>(h.method));
  w.U8(static_cast<std::uint8_t>(h.wire));
  w.U32(h.hyper);
  w.F64(h.mask_p);
  w.U8(h.prng_id);
  w.U64(h.seed);
  w.Raw(h.fingerprint);
  w.U16(h.targeted_layers);
  w.U32(h.epochs);
  w.F64(h.lr);
  w.F64(h.momentum);
  w.U32(h.batch_size);
  w.U32(Count32(package.layers.size()));
  for (const auto& r : package.layers) {
    w.U16(r.layer_id);
    w.U8(static_cast<std::uint8_t>(r.method));
    w.U32(r.hyper);
    w.U32(r.rows);
    w.U32(r.cols);
    WriteScalars(w, h.wire, r.values);
  }
  w.U32(Count32(package.untargeted.size()));
  for (const auto& t : package.untargeted) {
    w.String(t.name);
    WriteScalars(w, h.wire, t.values);
  }
  w.U32(Crc32(w.bytes()));
  return w.Take();
}

UpdatePackage DeserializePackage(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kPackageHeaderBytes + 8) {
    throw Error(ErrorCode::kFormat, "package truncated: " + std::to_string(bytes.size()) +
                                        " bytes is shorter than the minimum");
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader crc_reader(bytes.last(4), ErrorCode::kFormat);
  const std::uint32_t stored = crc_reader.U32();
  const std::uint32_t actual = Crc32(body);
  if (stored != actual) {
    const bool magic_ok = std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin());
    throw Error(ErrorCode::kCorruptPackage,
                std::string("CRC-32 mismatch") + (magic_ok ? "" : " (not a DLTA package?)"));
  }

  ByteReader in(body, ErrorCode::kFormat);
  const auto magic = in.Raw(4);
  if (!std::equal(magic.begin(), magic.end(), std::begin(kMagic))) {
    throw Error(ErrorCode::kFormat, "bad magic");
  }
  UpdatePackage p;
  PackageHeader& h = p.header;
  h.version = in.U16();
  if (h.version != kPackageVersion) {
    throw Error(ErrorCode::kFormat, "unsupported package version " + std::to_string(h.version));
  }
  h.method = ReadMethod(in.U8());
  const std::uint8_t width = in.U8();
  if (width != 4 && width != 8) {
    throw Error(ErrorCode::kFormat, "unsupported scalar width " + std::to_string(width));
  }
  h.wire = static_cast<WireFormat>(width);
  h.hyper = in.U32();
  h.mask_p = in.F64();
  h.prng_id = in.U8();
  h.seed = in.U64();
  const auto fp = in.Raw(h.fingerprint.size());
  std::copy(fp.begin(), fp.end(), h.fingerprint.begin());
  h.targeted_layers = in.U16();
  h.epochs = in.U32();
  h.lr = in.F64();
  h.momentum = in.F64();
  h.batch_size = in.U32();

  const std::size_t records = in.U32();
  if (records > in.remaining() / kLayerRecordOverhead) {
    throw Error(ErrorCode::kFormat, "record count exceeds package size");
  }
  for (std::size_t k = 0; k < records; ++k) {
    LayerRecord r;
    r.layer_id = in.U16();
    r.method = ReadMethod(in.U8());
    r.hyper = in.U32();
    r.rows = in.U32();
    r.cols = in.U32();
    r.values = ReadScalars(in, h.wire);
    p.layers.push_back(std::move(r));
  }
  const std::size_t tensors = in.U32();
  if (tensors > in.remaining() / 6) {
    throw Error(ErrorCode::kFormat, "tensor count exceeds package size");
  }
  for (std::size_t k = 0; k < tensors; ++k) {
    TensorRecord t;
    t.name = in.String();
    t.values = ReadScalars(in, h.wire);
    p.untargeted.push_back(std::move(t));
  }
  if (in.remaining() != 0) throw Error(ErrorCode::kFormat, "trailing bytes after trailer");
  return p;
}

double UpdateFraction(std::size_t transmitted, std::size_t total) {
  if (total == 0) throw Error(ErrorCode::kInvalidInput, "model has no learnable parameters");
  return static_cast<double>(transmitted) / static_cast<double>(total);
}

double UpdateFraction(const UpdatePackage& package, const ParamStore& theta) {
  return UpdateFraction(package.ScalarCount(), theta.LearnableScalarCount());
}

}  // namespace deltaforge
