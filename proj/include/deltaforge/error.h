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

#ifndef DELTAFORGE_ERROR_H_
#define DELTAFORGE_ERROR_H_

#include <stdexcept>
#include <string>
#include <string_view>

namespace deltaforge {

enum class ErrorCode {
  kInvalidInput,
  kShape,
  kRank,
  kConvergence,
  kConsistency,
  kDivergence,
  kFormat,
  kCorruptPackage,
  kStaleModel,
  kIncompatiblePackage,
  kIo,
  kUsage,
};

std::string_view ErrorCodeName(ErrorCode code);

// All library failures are reported as an Error carrying a code that callers
// (the CLI in particular) map to exit statuses.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(ErrorCodeName(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace deltaforge

#endif  // DELTAFORGE_ERROR_H_
