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

// Run settings shared by the command-line tools.
//
// Config files are flat "key = value" lines; '#' starts a comment. Every key
// is listed in README.md, and unknown keys are rejected. Hyperparameters
// accept either one value for every targeted layer ("2") or one value per
// targeted layer separated by '/' ("2/1/0"); sweep grids are comma-separated
// lists of such values.

#ifndef DELTAFORGE_CONFIG_H_
#define DELTAFORGE_CONFIG_H_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deltaforge/protocol.h"

namespace deltaforge {

struct InitialTraining {
  double subset_p = 0.02;
  std::uint64_t subset_seed = 1;
  std::size_t epochs = 10;
  double lr = 0.05;
  double momentum = 0.9;
  std::size_t batch_size = 32;
  std::uint64_t seed = 1;
};

struct SweepGrid {
  std::map<Method, std::vector<std::string>> points;  // empty list -> skipped
  std::size_t seeds = 3;
};

struct Settings {
  std::string data_dir;  // empty -> DELTAFORGE_DATA_DIR
  std::string checkpoint;
  double refine_p = 1.0;  // fraction of the training split used as D2
  InitialTraining initial;
  // Method, mask proportion, optimiser and wire settings. Ranks and widths
  // live in rank_spec / aug_spec until Resolve picks one by method.
  RefineConfig refine;
  std::vector<std::size_t> rank_spec{1};
  std::vector<std::size_t> aug_spec{1};
  SweepGrid sweep;

  RefineConfig Resolve(std::size_t targeted_layers) const;
};

using ConfigMap = std::map<std::string, std::string>;

// Throws kUsage naming the file and line for malformed lines, duplicate keys
// and unknown keys.
ConfigMap ParseConfigText(const std::string& text, const std::string& source = "config");
ConfigMap LoadConfigFile(const std::filesystem::path& path);

// Applies recognised keys on top of `settings`; throws kUsage on bad values.
void ApplyConfig(const ConfigMap& config, Settings& settings);

const std::vector<std::string>& ConfigKeys();

// "3" -> {3}; "2/1/0" -> {2, 1, 0}.
std::vector<std::size_t> ParseHyper(const std::string& text);
// Installs a ParseHyper result as the config's rank or width (by method),
// with per-layer overrides when it lists one value per layer.
void SetHyper(RefineConfig& config, const std::vector<std::size_t>& hyper,
              std::size_t targeted_layers);
std::vector<std::string> SplitList(const std::string& text, char sep);

}  // namespace deltaforge

#endif  // DELTAFORGE_CONFIG_H_
