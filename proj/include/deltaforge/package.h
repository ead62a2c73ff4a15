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

// "DLTA" update package: everything the edge needs to rebuild the refined
// model from its deployed weights.
//
//   header   magic "DLTA", u16 version, u8 method, u8 scalar width (4 or 8),
//            u32 hyper (r or n), f64 mask proportion, u8 PRNG id, u64 seed,
//            32-byte fingerprint of the deployed model, u16 targeted-layer
//            count, u32 epochs, f64 lr, f64 momentum, u32 batch size,
//            u32 record count                                    (91 bytes)
//   records  per targeted layer: u16 layer id, u8 method, u32 hyper,
//            u32 rows, u32 cols, u32 scalar count, scalars        (19 bytes + scalars)
//   trailer  u32 tensor count; per tensor u16 name length, name, u32 scalar
//            count, scalars; then the CRC-32 of every preceding byte
//
// All integers and reals are little-endian. Scalars are IEEE binary32 unless
// the package was built in the 64-bit debug mode.

#ifndef DELTAFORGE_PACKAGE_H_
#define DELTAFORGE_PACKAGE_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "deltaforge/reparam.h"
#include "deltaforge/wire.h"

namespace deltaforge {

inline constexpr std::uint16_t kPackageVersion = 1;
inline constexpr std::size_t kPackageHeaderBytes = 91;
inline constexpr std::size_t kLayerRecordOverhead = 19;

enum class WireFormat : std::uint8_t { kFloat32 = 4, kFloat64 = 8 };

// Rounds through binary32 for kFloat32; identity for kFloat64.
double ToWire(double v, WireFormat wire);

struct PackageHeader {
  std::uint16_t version = kPackageVersion;
  Method method = Method::kKa;
  WireFormat wire = WireFormat::kFloat32;
  std::uint32_t hyper = 0;
  double mask_p = 0.0;
  std::uint8_t prng_id = kPrngXoshiro256StarStar;
  std::uint64_t seed = 0;
  Digest fingerprint{};
  std::uint16_t targeted_layers = 0;
  std::uint32_t epochs = 0;
  double lr = 0.0;
  double momentum = 0.0;
  std::uint32_t batch_size = 0;

  friend bool operator==(const PackageHeader&, const PackageHeader&) = default;
};

struct LayerRecord {
  std::uint16_t layer_id = 0;
  Method method = Method::kDense;  // kDense marks a degenerate-layer fallback
  std::uint32_t hyper = 0;
  std::uint32_t rows = 0;
  std::uint32_t cols = 0;
  std::vector<double> values;

  friend bool operator==(const LayerRecord&, const LayerRecord&) = default;
};

struct TensorRecord {
  std::string name;
  std::vector<double> values;

  friend bool operator==(const TensorRecord&, const TensorRecord&) = default;
};

struct UpdatePackage {
  PackageHeader header;
  std::vector<LayerRecord> layers;
  std::vector<TensorRecord> untargeted;

  // Transmitted learnable scalars (records plus trailer tensors).
  std::size_t ScalarCount() const;
  std::vector<int> DenseFallbackLayers() const;

  friend bool operator==(const UpdatePackage&, const UpdatePackage&) = default;
};

struct WireSize {
  std::size_t header = 0;   // fixed header plus per-record framing
  std::size_t payload = 0;  // scalar bytes
  std::size_t trailer = 0;  // trailer framing plus CRC
  std::size_t total() const { return header + payload + trailer; }
};

WireSize ComputeWireSize(const UpdatePackage& package);

// Values are narrowed to the header's wire format on the way out.
Bytes SerializePackage(const UpdatePackage& package);

// Errors: kFormat for truncation, bad magic, unsupported version or
// malformed fields; kCorruptPackage when the CRC does not match. The CRC is
// checked before any field is interpreted.
UpdatePackage DeserializePackage(std::span<const std::uint8_t> bytes);

// Transmitted scalars divided by |theta| (learnable scalars of the dense
// model).
double UpdateFraction(const UpdatePackage& package, const ParamStore& theta);
double UpdateFraction(std::size_t transmitted, std::size_t total);

}  // namespace deltaforge

#endif  // DELTAFORGE_PACKAGE_H_
