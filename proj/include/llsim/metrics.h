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

#ifndef LLSIM_METRICS_H_
#define LLSIM_METRICS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "llsim/data.h"
#include "llsim/model.h"
#include "llsim/reconstruction.h"
#include "llsim/tensors.h"

namespace llsim {

// Evaluator-side ground truth: which images a perfect server could recover.
struct OracleResult {
  std::vector<std::vector<bool>> leaked;  // [client][image]
  std::vector<std::vector<int>> bin;      // [client][image], -1 if no unit fires
  std::size_t leaked_count = 0;
  std::size_t total_images = 0;

  double rate() const {
    return total_images == 0
               ? 0.0
               : static_cast<double>(leaked_count) / total_images;
  }
};

// Each image falls into the bin of the highest unit it activates, i.e. the
// largest i with brightness > c_i. Sole occupants leak. Bins are per client
// for per-client layouts and pooled over all clients for a shared layer.
OracleResult OccupancyOracle(std::span<const ImageBatch> batches,
                             std::span<const double> cutoffs,
                             const BlockLayout& layout);

// Trap-weight counterpart: an image leaks when it is the only image in the
// aggregate that activates some unit. preacts[m] holds client m's FC1
// pre-activations (B x U).
OracleResult ActivationOracle(std::span<const DenseMatrix> preacts);

// 8x8 uniform windows, stride 4, K1 = 0.01, K2 = 0.03, L = 1, averaged over
// windows and then channels. Throws kShapeMismatch on size mismatch.
double Ssim(std::span<const double> a, std::span<const double> b,
            const ImageShape& shape);

struct MatchTolerances {
  double max_abs = 1e-2;
  double ssim = 0.95;
  // Candidates whose pooled thumbnails correlate below this are not scored
  // in full.
  double thumbnail_correlation = 0.8;
};

struct MatchPair {
  int recovery_client = 0;
  int bin_index = 0;
  int image_client = 0;
  int image_index = 0;
  double scale = 0.0;  // least-squares positive rescaling of the estimate
  double max_abs_error = 0.0;
  double ssim = 0.0;
};

struct ClientLeakage {
  std::size_t leaked = 0;
  std::size_t total = 0;
};

struct LeakageReport {
  std::size_t total_images = 0;
  std::size_t leaked_count = 0;
  double leakage_rate = 0.0;
  std::vector<ClientLeakage> per_client;
  std::vector<MatchPair> matches;
  std::vector<std::vector<bool>> leaked;  // [client][image]
  std::size_t oracle_leaked_count = 0;
  std::size_t suspected_collisions = 0;
  double mean_ssim = 0.0;
};

// Greedy one-to-one matching of recovered estimates to ground-truth images
// of the same client (any client for kAllClients recoveries). Recovered
// estimates left unmatched are marked kSuspectedCollision.
LeakageReport MatchAndScore(std::vector<BinRecovery>& recoveries,
                            std::span<const ImageBatch> batches,
                            const MatchTolerances& tol,
                            const OracleResult* oracle = nullptr);

struct TensorBytes {
  std::string name;
  Storage storage = Storage::kDense;
  std::uint64_t entries = 0;  // stored values
  std::uint64_t bytes = 0;
};

struct UpdateTiming {
  double sparse = 0.0;
  double dense = 0.0;
  double rtf = 0.0;
};

struct ResourceReport {
  std::uint64_t server_to_client_bytes = 0;
  std::uint64_t client_to_server_bytes = 0;
  // Server-to-client size with FC1 in CSR instead of COO (mandrake_sparse).
  std::uint64_t server_to_client_csr_bytes = 0;
  ParameterCounts params;
  std::vector<TensorBytes> breakdown;
};

// Pure arithmetic over the attack module, 4-byte values and 8-byte indices.
// With SA the client's masked update is always the dense parameter vector.
ResourceReport ComputeResourceReport(const AttackConfig& cfg,
                                     bool sa_enabled = true);

// Dense MLP standing in for the host network's own update cost.
struct PayloadSpec {
  int hidden_units = 256;
  int layers = 2;
};

// Median wall-clock seconds of one client update (forward, loss, backward
// plus the payload MLP) for the sparse, dense and shared-layer variants of
// cfg on identical inputs. Runs on the calling thread.
UpdateTiming TimeUpdate(const AttackConfig& cfg, const PayloadSpec& payload,
                        int repetitions);

}  // namespace llsim

#endif  // LLSIM_METRICS_H_
