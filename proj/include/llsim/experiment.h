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

#ifndef LLSIM_EXPERIMENT_H_
#define LLSIM_EXPERIMENT_H_

#include <optional>
#include <string>
#include <vector>

#include "llsim/config.h"
#include "llsim/metrics.h"
#include "llsim/reconstruction.h"

namespace llsim {

struct RunResult {
  ExperimentConfig config;  // the resolved cell, including a tuned trap scale
  LeakageReport leakage;
  OracleResult oracle;
  ResourceReport resources;
  std::vector<BinRecovery> recoveries;
  std::optional<double> update_seconds;
};

// One server round: build models, collect client updates, aggregate,
// reconstruct and score. Deterministic for a fixed seed and any worker
// count.
RunResult RunExperiment(const ExperimentConfig& cfg);

// Cells of the cartesian product of the sweep axes, ordered by
// (variant, N, ratio). An empty axis falls back to the base value.
std::vector<ExperimentConfig> SweepCells(const ExperimentConfig& cfg);

// Throws kBudgetExceeded naming the first cell whose model would not fit.
void CheckSweepBudget(const std::vector<ExperimentConfig>& cells);

std::vector<RunResult> RunSweep(const ExperimentConfig& cfg);

std::string CsvHeader();
std::string CsvRow(const RunResult& result);
std::string ToCsv(const std::vector<RunResult>& results);

struct SizeRow {
  std::string dataset;
  int num_clients = 0;
  std::uint64_t rtf_bytes = 0;
  std::uint64_t dense_bytes = 0;
  std::uint64_t sparse_bytes = 0;
  std::uint64_t sparse_csr_bytes = 0;
};

// Server-to-client model sizes for MNIST, CIFAR-100, Tiny ImageNet and
// ImageNet at 100 and 1000 clients, B = 64, 4 units per image.
std::vector<SizeRow> SizeTable();
std::string SizeTableCsv(const std::vector<SizeRow>& rows);

// Writes text to path, creating parent directories. Throws kIoError.
void WriteTextFile(const std::filesystem::path& path, const std::string& text);

}  // namespace llsim

#endif  // LLSIM_EXPERIMENT_H_
