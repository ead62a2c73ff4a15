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

// "DMDL" model checkpoint: an architecture description followed by every
// parameter tensor in canonical order, closed by a CRC-32.
//
// The canonical parameter encoding (entry count, then name, class, shape and
// f64 values of each entry) is also the input of the model fingerprint that
// update packages use to name the model they apply to.

#ifndef DELTAFORGE_CHECKPOINT_H_
#define DELTAFORGE_CHECKPOINT_H_

#include <filesystem>
#include <span>

#include "deltaforge/netcore.h"
#include "deltaforge/wire.h"

namespace deltaforge {

inline constexpr std::uint16_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelSpec spec;
  ParamStore params;
};

void EncodeModelSpec(const ModelSpec& spec, ByteWriter& out);
ModelSpec DecodeModelSpec(ByteReader& in);
void EncodeParams(const ParamStore& params, ByteWriter& out);
ParamStore DecodeParams(ByteReader& in);

Bytes CanonicalParams(const ParamStore& params);
// SHA-256 of CanonicalParams.
Digest ModelFingerprint(const ParamStore& params);

Bytes SerializeCheckpoint(const ModelSpec& spec, const ParamStore& params);
// Throws kFormat on bad magic, version or truncation and kCorruptPackage on a
// checksum mismatch. Parameters are checked against the architecture.
Checkpoint DeserializeCheckpoint(std::span<const std::uint8_t> bytes);

void SaveCheckpoint(const std::filesystem::path& path, const ModelSpec& spec,
                    const ParamStore& params);
Checkpoint LoadCheckpoint(const std::filesystem::path& path);

}  // namespace deltaforge

#endif  // DELTAFORGE_CHECKPOINT_H_
