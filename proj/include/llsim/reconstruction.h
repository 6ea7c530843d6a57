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

#ifndef LLSIM_RECONSTRUCTION_H_
#define LLSIM_RECONSTRUCTION_H_

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "llsim/client.h"
#include "llsim/model.h"
#include "llsim/secure_agg.h"
#include "llsim/tensors.h"

namespace llsim {

// Client index used for recoveries from a layer shared by every client.
inline constexpr int kAllClients = -1;

enum class BinStatus { kRecovered, kEmptyBin, kSuspectedCollision };

struct BinRecovery {
  int client_index = 0;
  int bin_index = 0;
  std::vector<double> raw_delta;
  std::optional<std::vector<double>> image_estimate;  // C*H*W in [0, 1]
  BinStatus status = BinStatus::kEmptyBin;
};

struct Fc1Block {
  int client_index = 0;    // kAllClients for a shared layer
  DenseMatrix weight_grad;  // U x C*H*W
};

struct DemuxResult {
  std::vector<Fc1Block> blocks;
  std::vector<double> bias_grads;
  // True when the bias gradients are summed across clients, so only the
  // weight-only reconstruction applies to per-client blocks.
  bool biases_aggregated = false;
};

// Splits a flat update (individual or aggregate) into per-client FC1
// weight-gradient blocks. Throws kLayoutMismatch if the vector does not
// match the layouts.
DemuxResult Demux(std::span<const double> flat_update,
                  const BlockLayout& layout, const FlatLayout& flat_layout,
                  bool biases_aggregated);

struct Thresholds {
  double bin = 1e-9;  // minimum |bias-gradient difference|
  double act = 1e-9;  // minimum max |weight-gradient difference|

  static Thresholds Exact() { return {}; }
  // 4 * N / scale, well above the rounding dust N fixed-point updates leave.
  static Thresholds ForQuantized(int num_clients, const FieldParams& fp);
};

// Adjacent-bin differences divided by the matching bias-gradient
// differences. The top unit has no successor and is used directly.
std::vector<BinRecovery> ReconstructBinned(const Fc1Block& block,
                                           std::span<const double> bias_grads,
                                           const Thresholds& eps);

// Uses weight gradients only: |row_i - row_{i+1}| scaled to a maximum of 1.
std::vector<BinRecovery> ReconstructWeightOnly(const Fc1Block& block,
                                               const Thresholds& eps);

// Per-neuron weight/bias gradient ratio with no neighbour subtraction.
std::vector<BinRecovery> ReconstructTrap(const Fc1Block& block,
                                         std::span<const double> bias_grads,
                                         const Thresholds& eps);

}  // namespace llsim

#endif  // LLSIM_RECONSTRUCTION_H_
