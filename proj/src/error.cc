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

#include "deltaforge/error.h"

namespace deltaforge {

std::string_view ErrorCodeName(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid input";
    case ErrorCode::kShape: return "shape error";
    case ErrorCode::kRank: return "rank error";
    case ErrorCode::kConvergence: return "convergence error";
    case ErrorCode::kConsistency: return "consistency error";
    case ErrorCode::kDivergence: return "training diverged";
    case ErrorCode::kFormat: return "format error";
    case ErrorCode::kCorruptPackage: return "corrupt package";
    case ErrorCode::kStaleModel: return "stale model";
    case ErrorCode::kIncompatiblePackage: return "incompatible package";
    case ErrorCode::kIo: return "i/o error";
    case ErrorCode::kUsage: return "usage error";
  }
  return "error";
}

}  // namespace deltaforge
