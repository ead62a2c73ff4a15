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

#include "deltaforge/checkpoint.h"

#include <string>

#include "deltaforge/error.h"

namespace deltaforge {
namespace {

constexpr std::uint8_t kMagic[4] = {'D', 'M', 'D', 'L'};

std::uint32_t Narrow32(std::size_t v, const char* what) {
  if (v > 0xffffffffu) throw Error(ErrorCode::kInvalidInput, std::string(what) + " too large");
  return static_cast<std::uint32_t>(v);
}

void CheckAgainstSpec(const ModelSpec& spec, const ParamStore& params) {
  std::size_t expected = 0;
  for (const auto& t : spec.targeted()) {
    const LayerDesc& layer = spec.layers()[t.layer_index];
    const std::string w = WeightName(t.id);
    if (!params.Contains(w) || params.at(w).shape != WeightShape(layer)) {
      throw Error(ErrorCode::kFormat, "checkpoint lacks a well-shaped " + w);
    }
    ++expected;
    if (t.has_bias) {
      const std::string b = BiasName(t.id);
      if (!params.Contains(b) || params.at(b).values.size() != t.rows) {
        throw Error(ErrorCode::kFormat, "checkpoint lacks a well-shaped " + b);
      }
      ++expected;
    }
  }
  if (params.entries().size() != expected) {
    throw Error(ErrorCode::kFormat, "checkpoint carries tensors the architecture does not use");
  }
}

}  // namespace

void EncodeModelSpec(const ModelSpec& spec, ByteWriter& out) {
  out.U32(Narrow32(spec.input().c, "input"));
  out.U32(Narrow32(spec.input().h, "input"));
  out.U32(Narrow32(spec.input().w, "input"));
  if (spec.layers().size() > 0xffff) throw Error(ErrorCode::kInvalidInput, "too many layers");
  out.U16(static_cast<std::uint16_t>(spec.layers().size()));
  for (const auto& l : spec.layers()) {
    out.U8(static_cast<std::uint8_t>(l.kind));
    out.U32(Narrow32(l.in_channels, "layer width"));
    out.U32(Narrow32(l.out_channels, "layer width"));
    out.U32(Narrow32(l.kernel_h, "kernel"));
    out.U32(Narrow32(l.kernel_w, "kernel"));
    out.U32(Narrow32(l.stride, "stride"));
    out.U32(Narrow32(l.padding, "padding"));
    out.U8(l.has_bias ? 1 : 0);
  }
}

ModelSpec DecodeModelSpec(ByteReader& in) {
  Shape3 input;
  input.c = in.U32();
  input.h = in.U32();
  input.w = in.U32();
  const std::size_t n = in.U16();
  std::vector<LayerDesc> layers;
  for (std::size_t k = 0; k < n; ++k) {
    LayerDesc l;
    const std::uint8_t kind = in.U8();
    if (kind < 1 || kind > 5) {
      throw Error(ErrorCode::kFormat, "unknown layer kind " + std::to_string(kind));
    }
    l.kind = static_cast<LayerKind>(kind);
    l.in_channels = in.U32();
    l.out_channels = in.U32();
    l.kernel_h = in.U32();
    l.kernel_w = in.U32();
    l.stride = in.U32();
    l.padding = in.U32();
    l.has_bias = in.U8() != 0;
    layers.push_back(l);
  }
  try {
    return ModelSpec(input, std::move(layers));
  } catch (const Error& e) {
    throw Error(ErrorCode::kFormat, std::string("stored architecture is invalid: ") + e.what());
  }
}

void EncodeParams(const ParamStore& params, ByteWriter& out) {
  out.U32(Narrow32(params.entries().size(), "entry count"));
  for (const auto& e : params.entries()) {
    out.String(e.name);
    out.U8(static_cast<std::uint8_t>(e.cls));
    if (e.shape.size() > 0xff) throw Error(ErrorCode::kInvalidInput, "tensor rank too large");
    out.U8(static_cast<std::uint8_t>(e.shape.size()));
    for (std::size_t d : e.shape) out.U32(Narrow32(d, "dimension"));
    for (double v : e.values) out.F64(v);
  }
}

ParamStore DecodeParams(ByteReader& in) {
  ParamStore params;
  const std::size_t n = in.U32();
  for (std::size_t k = 0; k < n; ++k) {
    std::string name = in.String();
    const std::uint8_t cls = in.U8();
    if (cls > 1) throw Error(ErrorCode::kFormat, "bad parameter class for " + name);
    std::vector<std::size_t> shape(in.U8());
    for (auto& d : shape) d = in.U32();
    const std::size_t count = ShapeSize(shape);
    if (count > in.remaining() / 8) {
      throw Error(ErrorCode::kFormat, "tensor " + name + " runs past the end of the input");
    }
    std::vector<double> values(count);
    for (double& v : values) v = in.F64();
    if (params.Contains(name)) throw Error(ErrorCode::kFormat, "duplicate tensor " + name);
    params.Add(std::move(name), std::move(shape), std::move(values),
               static_cast<ParamClass>(cls));
  }
  return params;
}

Bytes CanonicalParams(const ParamStore& params) {
  ByteWriter w;
  EncodeParams(params, w);
  return w.Take();
}

Digest ModelFingerprint(const ParamStore& params) { return Sha256(CanonicalParams(params)); }

Bytes SerializeCheckpoint(const ModelSpec& spec, const ParamStore& params) {
  CheckAgainstSpec(spec, params);
  ByteWriter w;
  w.Raw(kMagic);
  w.U16(kCheckpointVersion);
  EncodeModelSpec(spec, w);
  EncodeParams(params, w);
  w.U32(Crc32(w.bytes()));
  return w.Take();
}

Checkpoint DeserializeCheckpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic) + 2 + 4) {
    throw Error(ErrorCode::kFormat, "checkpoint truncated");
  }
  if (!std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::kFormat, "not a checkpoint (bad magic)");
  }
  const auto body = bytes.first(bytes.size() - 4);
  ByteReader crc_reader(bytes.last(4), ErrorCode::kFormat);
  if (crc_reader.U32() != Crc32(body)) {
    throw Error(ErrorCode::kCorruptPackage, "checkpoint checksum mismatch");
  }
  ByteReader in(body, ErrorCode::kFormat);
  in.Raw(sizeof(kMagic));
  const std::uint16_t version = in.U16();
  if (version != kCheckpointVersion) {
    throw Error(ErrorCode::kFormat,
                "unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint cp;
  cp.spec = DecodeModelSpec(in);
  cp.params = DecodeParams(in);
  if (in.remaining() != 0) throw Error(ErrorCode::kFormat, "trailing bytes in checkpoint");
  CheckAgainstSpec(cp.spec, cp.params);
  return cp;
}

void SaveCheckpoint(const std::filesystem::path& path, const ModelSpec& spec,
                    const ParamStore& params) {
  WriteBinaryFileAtomic(path, SerializeCheckpoint(spec, params));
}

Checkpoint LoadCheckpoint(const std::filesystem::path& path) {
  return DeserializeCheckpoint(ReadBinaryFile(path));
}

}  // namespace deltaforge
