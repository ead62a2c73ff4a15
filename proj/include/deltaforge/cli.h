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

// The `deltaforge` command line: train-initial, refine, reconstitute,
// evaluate, sweep and verify.

#ifndef DELTAFORGE_CLI_H_
#define DELTAFORGE_CLI_H_

#include <ostream>

#include "deltaforge/error.h"

namespace deltaforge {

// 0 ok, 2 stale model, 3 corrupt or malformed package, 4 shape mismatch,
// 64 usage error, 1 anything else.
int ExitCodeFor(ErrorCode code);

int RunCli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace deltaforge

#endif  // DELTAFORGE_CLI_H_
