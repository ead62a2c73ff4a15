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

#include "deltaforge/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "deltaforge/error.h"

namespace deltaforge {
namespace {

std::string Trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r");
  return s.substr(first, last - first + 1);
}

[[noreturn]] void Bad(const std::string& key, const std::string& value,
                      const std::string& why) {
  throw Error(ErrorCode::kUsage, "config key '" + key + "' = '" + value + "': " + why);
}

template <typename T>
T ParseInteger(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) Bad(key, value, "expected a non-negative integer");
  return out;
}

double ParseReal(const std::string& key, const std::string& value) {
  double out = 0.0;
  const auto* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end || !std::isfinite(out)) {
    Bad(key, value, "expected a real number");
  }
  return out;
}

const std::map<std::string, Method>& SweepKeys() {
  static const std::map<std::string, Method> kKeys = {
      {"sweep_lra", Method::kLra}, {"sweep_ml", Method::kMl}, {"sweep_ka", Method::kKa},
      {"sweep_rm", Method::kRm},   {"sweep_lru", Method::kLru}};
  return kKeys;
}

}  // namespace

const std::vector<std::string>& ConfigKeys() {
  static const std::vector<std::string> kKeys = {
      "data_dir",      "checkpoint",     "subset_p",   "subset_seed", "init_epochs",
      "init_lr",       "init_momentum",  "init_batch_size", "init_seed", "refine_p",
      "method",        "rank",           "aug",        "mask_p",      "seed",
      "epochs",        "lr",             "momentum",   "batch_size",  "wire_bits",
      "sweep_lra",     "sweep_ml",       "sweep_ka",   "sweep_rm",    "sweep_lru",
      "sweep_seeds"};
  return kKeys;
}

std::vector<std::string> SplitList(const std::string& text, char sep) {
  std::vector<std::string> out;
  if (Trim(text).empty()) return out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, sep)) out.push_back(Trim(item));
  if (!text.empty() && text.back() == sep) out.push_back("");
  return out;
}

std::vector<std::size_t> ParseHyper(const std::string& text) {
  std::vector<std::size_t> out;
  for (const auto& part : SplitList(text, '/')) {
    out.push_back(ParseInteger<std::size_t>("hyper", part));
  }
  if (out.empty()) Bad("hyper", text, "empty hyperparameter");
  return out;
}

void SetHyper(RefineConfig& config, const std::vector<std::size_t>& hyper,
              std::size_t targeted_layers) {
  if (hyper.size() != 1 && hyper.size() != targeted_layers) {
    throw Error(ErrorCode::kUsage, "hyperparameter lists " + std::to_string(hyper.size()) +
                                       " values for " + std::to_string(targeted_layers) +
                                       " targeted layers");
  }
  std::size_t& global = config.method == Method::kKa ? config.aug : config.rank;
  global = hyper.front();
  config.layer_hyper.clear();
  if (hyper.size() > 1) {
    for (std::size_t k = 0; k < hyper.size(); ++k) {
      config.layer_hyper[static_cast<int>(k + 1)] = hyper[k];
    }
  }
}

RefineConfig Settings::Resolve(std::size_t targeted_layers) const {
  RefineConfig out = refine;
  if (out.method == Method::kKa) {
    SetHyper(out, aug_spec, targeted_layers);
  } else if (out.method != Method::kRm) {
    SetHyper(out, rank_spec, targeted_layers);
  }
  return out;
}

ConfigMap ParseConfigText(const std::string& text, const std::string& source) {
  ConfigMap out;
  std::stringstream in(text);
  std::string line;
  for (std::size_t number = 1; std::getline(in, line); ++number) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const std::string where = source + ":" + std::to_string(number);
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw Error(ErrorCode::kUsage, where + ": expected 'key = value'");
    }
    const std::string key = Trim(line.substr(0, eq));
    const std::string value = Trim(line.substr(eq + 1));
    const auto& keys = ConfigKeys();
    if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
      throw Error(ErrorCode::kUsage, where + ": unknown key '" + key + "'");
    }
    if (!out.emplace(key, value).second) {
      throw Error(ErrorCode::kUsage, where + ": duplicate key '" + key + "'");
    }
  }
  return out;
}

ConfigMap LoadConfigFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config " + path.string());
  std::stringstream text;
  text << in.rdbuf();
  return ParseConfigText(text.str(), path.string());
}

void ApplyConfig(const ConfigMap& config, Settings& s) {
  for (const auto& [key, value] : config) {
    if (key == "data_dir") {
      s.data_dir = value;
    } else if (key == "checkpoint") {
      s.checkpoint = value;
    } else if (key == "subset_p") {
      s.initial.subset_p = ParseReal(key, value);
      if (!(s.initial.subset_p > 0.0 && s.initial.subset_p <= 1.0)) {
        Bad(key, value, "must lie in (0, 1]");
      }
    } else if (key == "subset_seed") {
      s.initial.subset_seed = ParseInteger<std::uint64_t>(key, value);
    } else if (key == "init_epochs") {
      s.initial.epochs = ParseInteger<std::size_t>(key, value);
    } else if (key == "init_lr") {
      s.initial.lr = ParseReal(key, value);
    } else if (key == "init_momentum") {
      s.initial.momentum = ParseReal(key, value);
    } else if (key == "init_batch_size") {
      s.initial.batch_size = ParseInteger<std::size_t>(key, value);
    } else if (key == "init_seed") {
      s.initial.seed = ParseInteger<std::uint64_t>(key, value);
    } else if (key == "refine_p") {
      s.refine_p = ParseReal(key, value);
      if (!(s.refine_p > 0.0 && s.refine_p <= 1.0)) Bad(key, value, "must lie in (0, 1]");
    } else if (key == "method") {
      s.refine.method = ParseMethod(value);
    } else if (key == "rank") {
      s.rank_spec = ParseHyper(value);
    } else if (key == "aug") {
      s.aug_spec = ParseHyper(value);
    } else if (key == "mask_p") {
      s.refine.mask_p = ParseReal(key, value);
    } else if (key == "seed") {
      s.refine.seed = ParseInteger<std::uint64_t>(key, value);
    } else if (key == "epochs") {
      s.refine.epochs = ParseInteger<std::size_t>(key, value);
    } else if (key == "lr") {
      s.refine.lr = ParseReal(key, value);
    } else if (key == "momentum") {
      s.refine.momentum = ParseReal(key, value);
    } else if (key == "batch_size") {
      s.refine.batch_size = ParseInteger<std::size_t>(key, value);
    } else if (key == "wire_bits") {
      if (value == "32") {
        s.refine.wire = WireFormat::kFloat32;
      } else if (value == "64") {
        s.refine.wire = WireFormat::kFloat64;
      } else {
        Bad(key, value, "must be 32 or 64");
      }
    } else if (key == "sweep_seeds") {
      s.sweep.seeds = ParseInteger<std::size_t>(key, value);
      if (s.sweep.seeds == 0) Bad(key, value, "must be positive");
    } else if (const auto it = SweepKeys().find(key); it != SweepKeys().end()) {
      std::vector<std::string> points = SplitList(value, ',');
      for (const auto& p : points) {
        if (it->second == Method::kRm) {
          ParseReal(key, p);
        } else {
          ParseHyper(p);
        }
      }
      s.sweep.points[it->second] = std::move(points);
    } else {
      throw Error(ErrorCode::kUsage, "unknown config key '" + key + "'");
    }
  }
}

}  // namespace deltaforge
