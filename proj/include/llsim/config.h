/*
 * Copyright 2026 The llsim Authors
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

#ifndef LLSIM_CONFIG_H_
#define LLSIM_CONFIG_H_

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "llsim/metrics.h"
#include "llsim/model.h"
#include "llsim/secure_agg.h"

namespace llsim {

enum class DatasetKind { kSynthetic, kIdx, kCifar10, kCifar100 };

struct DatasetSpec {
  DatasetKind kind = DatasetKind::kSynthetic;
  std::filesystem::path path;
  std::filesystem::path labels_path;  // IDX only

  std::string Name() const;
  bool operator==(const DatasetSpec&) const = default;
};

// Parses "synthetic", "idx:<images>[,<labels>]", "cifar:<file>" and
// "cifar100:<file>". Without an explicit labels file the IDX label path is
// derived by replacing "images" with "labels" in the file name.
DatasetSpec ParseDataset(const std::string& text);

struct ExperimentConfig {
  AttackConfig attack;
  // Picks the trap scale in 0.90, 0.91, ..., 0.99 whose activation oracle
  // leaks the most images, then runs once with it.
  bool trap_scale_auto = false;
  DatasetSpec dataset;
  bool sa_enabled = true;
  FieldParams field;
  int local_steps = 1;
  double learning_rate = 0.01;
  std::vector<int> sweep_clients;
  std::vector<double> sweep_ratios;
  std::vector<Variant> sweep_variants;
  std::filesystem::path output;
  // 0 selects max(1000, 16 * FC1 units) so that quantile noise stays small
  // next to the bin width even for wide shared layers.
  int calibration_size = 0;
  double brightness_spread = 0.4;
  bool force_max_pixel = false;
  int workers = 0;  // 0 selects the hardware concurrency
  bool timing = false;
  int timing_repetitions = 5;
  PayloadSpec payload;

  // Throws kConfigError naming the offending field.
  void Validate() const;
  int EffectiveWorkers() const;
  int EffectiveCalibrationSize() const;
};

using ConfigMap = std::map<std::string, std::string>;

// key=value lines; '#' starts a comment; blank lines are skipped.
ConfigMap ParseConfigText(const std::string& text);
ConfigMap LoadConfigFile(const std::filesystem::path& path);

// Applies entries on top of cfg. Unknown keys and malformed values throw
// kConfigError.
void ApplyConfig(ExperimentConfig& cfg, const ConfigMap& entries);

std::vector<std::string> KnownConfigKeys();

}  // namespace llsim

#endif  // LLSIM_CONFIG_H_
