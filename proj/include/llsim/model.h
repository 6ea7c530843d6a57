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

#ifndef LLSIM_MODEL_H_
#define LLSIM_MODEL_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <variant>
#include <vector>

#include "llsim/data.h"
#include "llsim/tensors.h"

namespace llsim {

// kMandrakeSparse and kMandrakeDense build the same per-client conv+FC
// module and differ only in how FC1 is stored. kRtfDense is the binning
// baseline that sizes one shared FC layer for every image in the aggregate;
// kTrapWeights uses the same shared layout with trap-weight rows.
enum class Variant { kMandrakeSparse, kMandrakeDense, kRtfDense, kTrapWeights };

std::string_view VariantName(Variant v);
Variant ParseVariant(std::string_view name);  // throws kConfigError

inline bool IsPerClient(Variant v) {
  return v == Variant::kMandrakeSparse || v == Variant::kMandrakeDense;
}
inline bool IsBinning(Variant v) { return v != Variant::kTrapWeights; }

enum class Storage { kDense, kCoo };

struct AttackConfig {
  int num_clients = 20;
  int batch_size = 16;
  ImageShape shape;
  double neurons_per_image = 4.0;
  int kernel_size = 3;
  Variant variant = Variant::kMandrakeSparse;
  double trap_scale = 0.95;
  int num_classes = 10;
  std::uint64_t seed = 0;
  // Upper bound on bytes a single instantiated model may occupy in memory.
  std::uint64_t memory_budget_bytes = std::uint64_t{2} << 30;

  std::size_t InputDim() const { return shape.Dim(); }
  // FC1 units each client's images are binned into.
  std::size_t UnitsPerClient() const;
  // FC1 units actually present in the layer.
  std::size_t Fc1Units() const;
  std::size_t ConvOutChannels() const;
  std::size_t Fc1InputCols() const;

  // Throws kConfigError naming the first violated field.
  void Validate() const;
};

// Per-client channel blocks [m*C, (m+1)*C) and their FC1 column ranges. For
// the shared variants there is a single block spanning the image itself.
struct BlockLayout {
  int num_clients = 1;
  bool shared = false;
  std::size_t block_width = 0;  // C*H*W
  int channels = 1;
  std::size_t fc1_units = 0;

  int NumBlocks() const { return shared ? 1 : num_clients; }
  std::size_t Fc1InputCols() const { return block_width * NumBlocks(); }
  std::pair<std::size_t, std::size_t> ColumnRange(int block) const {
    return {block * block_width, (block + 1) * block_width};
  }
  std::pair<int, int> ChannelBlock(int block) const {
    return {block * channels, (block + 1) * channels};
  }
  bool operator==(const BlockLayout&) const = default;
};

BlockLayout MakeLayout(const AttackConfig& cfg);

struct ParameterCounts {
  std::uint64_t fc1_weights = 0;
  std::uint64_t fc2_weights = 0;
  std::uint64_t total_weights = 0;    // FC1 + FC2, zero and nonzero
  std::uint64_t nonzero_weights = 0;  // per client
  std::uint64_t fc1_nonzero = 0;      // per client
  std::uint64_t conv_params = 0;      // kernel weights
  std::uint64_t bias_params = 0;      // conv, FC1 and FC2 biases

  std::uint64_t Total() const {
    return total_weights + conv_params + bias_params;
  }
};

// Pure arithmetic; never allocates tensors. Counts the attack module only
// (the downstream classifier stub stands in for the host network).
ParameterCounts CountParameters(const AttackConfig& cfg);

// Bytes one instantiated model occupies in memory (64-bit values).
std::uint64_t ModelMemoryBytes(const AttackConfig& cfg);

using Fc1Weights = std::variant<DenseMatrix, SparseMatrixCOO>;

struct MaliciousModel {
  AttackConfig config;
  int client_index = 0;
  BlockLayout layout;
  bool conv_bypass = false;
  std::vector<double> conv_kernels;  // out x in x k x k
  std::vector<double> conv_biases;   // out
  Fc1Weights fc1_weights;            // U x Fc1InputCols
  std::vector<double> fc1_biases;    // U
  DenseMatrix fc2_weights;           // C*H*W x U
  std::vector<double> fc2_biases;    // C*H*W
  DenseMatrix stub_weights;          // num_classes x C*H*W
  std::vector<double> cutoffs;       // binning variants only

  Storage fc1_storage() const {
    return std::holds_alternative<SparseMatrixCOO>(fc1_weights)
               ? Storage::kCoo
               : Storage::kDense;
  }
  // Output channels whose kernel or bias has a nonzero entry.
  std::vector<int> ActiveConvChannels() const;
};

// c_i is the linearly interpolated empirical quantile of the calibration
// sample at i/units. Throws kDegenerateCalibration when all values are equal.
std::vector<double> BuildBinningCutoffs(const CalibrationSample& calib,
                                        std::size_t units);

// cutoffs is ignored for kTrapWeights and must have Fc1Units() entries
// otherwise.
MaliciousModel BuildModel(const AttackConfig& cfg, int client_index,
                          std::span<const double> cutoffs);

}  // namespace llsim

#endif  // LLSIM_MODEL_H_
