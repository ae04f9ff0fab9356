// Copyright 2026 The exitrec Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// INI run configuration shared by every command.
//
//   [world]  synthetic world (WorldConfig)
//   [model]  network sizes (ModelConfig without the field schema)
//   [train]  TrainConfig
//   [eval]   exposure simulation, split and ablation settings
//   [paths]  data and output directories

#ifndef EXITREC_CONFIG_H_
#define EXITREC_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "exitrec/datagen.h"
#include "exitrec/model.h"
#include "exitrec/training.h"

namespace exitrec {

struct EvalConfig {
  ExposureOptions exposure;
  ExperimentOptions experiment;
  std::vector<Variant> variants = AllVariants();
  bool parallel = false;
};

struct PathsConfig {
  std::filesystem::path data_dir = "data";
  std::filesystem::path out_dir = "run";
};

struct RunConfig {
  WorldConfig world;
  ModelConfig model;  // `fields` is filled from the world by ResolvedModel()
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  // Unknown sections or keys and malformed values raise ConfigError.
  static RunConfig Parse(std::string_view text, const std::string& source);
  static RunConfig Load(const std::filesystem::path& path);

  // Sets both the world and the training seed.
  void SetSeed(std::uint64_t seed);
  void Validate() const;
  ModelConfig ResolvedModel() const;

  // Every key with its resolved value; Parse(ToIni()) round-trips.
  std::string ToIni() const;
  // Writes ToIni() to dir/config.ini, creating dir.
  void Echo(const std::filesystem::path& dir) const;
};

}  // namespace exitrec

#endif  // EXITREC_CONFIG_H_
