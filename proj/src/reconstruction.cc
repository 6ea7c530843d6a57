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

#include "llsim/reconstruction.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "llsim/error.h"

namespace llsim {
namespace {

std::vector<double> Difference(const DenseMatrix& w, std::size_t i) {
  const auto a = w.row(i);
  std::vector<double> d(a.begin(), a.end());
  if (i + 1 < w.rows()) {
    const auto b = w.row(i + 1);
    for (std::size_t k = 0; k < d.size(); ++k) d[k] -= b[k];
  }
  return d;
}

BinRecovery RatioRecovery(int client, int bin, std::vector<double> delta,
                          double bias_delta, double eps) {
  BinRecovery r;
  r.client_index = client;
  r.bin_index = bin;
  if (std::abs(bias_delta) > eps) {
    std::vector<double> est(delta.size());
    for (std::size_t k = 0; k < est.size(); ++k) {
      est[k] = std::clamp(delta[k] / bias_delta, 0.0, 1.0);
    }
    r.image_estimate = std::move(est);
    r.status = BinStatus::kRecovered;
  }
  r.raw_delta = std::move(delta);
  return r;
}

void CheckBias(const Fc1Block& block, std::span<const double> bias_grads) {
  if (bias_grads.size() != block.weight_grad.rows()) {
    throw Error(ErrorCode::kLayoutMismatch,
                std::to_string(bias_grads.size()) + " bias gradients for " +
                    std::to_string(block.weight_grad.rows()) + " units");
  }
}

}  // namespace

Thresholds Thresholds::ForQuantized(int num_clients, const FieldParams& fp) {
  const double eps = 4.0 * num_clients / fp.scale();
  return {eps, eps};
}

DemuxResult Demux(std::span<const double> flat_update,
                  const BlockLayout& layout, const FlatLayout& flat_layout,
                  bool biases_aggregated) {
  if (flat_update.size() != flat_layout.total ||
      layout.fc1_units != flat_layout.fc1_units ||
      layout.Fc1InputCols() != flat_layout.fc1_cols) {
    throw Error(ErrorCode::kLayoutMismatch,
                "update of length " + std::to_string(flat_update.size()) +
                    " does not match the block layout");
  }
  DemuxResult out;
  out.biases_aggregated = biases_aggregated;
  const std::size_t units = layout.fc1_units;
  const std::size_t cols = flat_layout.fc1_cols;
  const double* fc1 = flat_update.data() + flat_layout.fc1_weights;
  for (int b = 0; b < layout.NumBlocks(); ++b) {
    const auto [first, last] = layout.ColumnRange(b);
    Fc1Block block{layout.shared ? kAllClients : b,
                   DenseMatrix(units, last - first)};
    for (std::size_t i = 0; i < units; ++i) {
      std::copy(fc1 + i * cols + first, fc1 + i * cols + last,
                block.weight_grad.row(i).begin());
    }
    out.blocks.push_back(std::move(block));
  }
  out.bias_grads.assign(flat_update.begin() + flat_layout.fc1_biases,
                        flat_update.begin() + flat_layout.fc1_biases + units);
  return out;
}

std::vector<BinRecovery> ReconstructBinned(const Fc1Block& block,
                                           std::span<const double> bias_grads,
                                           const Thresholds& eps) {
  CheckBias(block, bias_grads);
  const std::size_t units = block.weight_grad.rows();
  std::vector<BinRecovery> out;
  out.reserve(units);
  for (std::size_t i = 0; i < units; ++i) {
    const double bias_delta =
        bias_grads[i] - (i + 1 < units ? bias_grads[i + 1] : 0.0);
    out.push_back(RatioRecovery(block.client_index, static_cast<int>(i),
                                Difference(block.weight_grad, i), bias_delta,
                                eps.bin));
  }
  return out;
}

std::vector<BinRecovery> ReconstructWeightOnly(const Fc1Block& block,
                                               const Thresholds& eps) {
  const std::size_t units = block.weight_grad.rows();
  std::vector<BinRecovery> out;
  out.reserve(units);
  for (std::size_t i = 0; i < units; ++i) {
    BinRecovery r;
    r.client_index = block.client_index;
    r.bin_index = static_cast<int>(i);
    r.raw_delta = Difference(block.weight_grad, i);
    double peak = 0.0;
    for (double v : r.raw_delta) peak = std::max(peak, std::abs(v));
    if (peak > eps.act) {
      std::vector<double> est(r.raw_delta.size());
      for (std::size_t k = 0; k < est.size(); ++k) {
        est[k] = std::abs(r.raw_delta[k]) / peak;
      }
      r.image_estimate = std::move(est);
      r.status = BinStatus::kRecovered;
    }
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<BinRecovery> ReconstructTrap(const Fc1Block& block,
                                         std::span<const double> bias_grads,
                                         const Thresholds& eps) {
  CheckBias(block, bias_grads);
  const std::size_t units = block.weight_grad.rows();
  std::vector<BinRecovery> out;
  out.reserve(units);
  for (std::size_t i = 0; i < units; ++i) {
    const auto row = block.weight_grad.row(i);
    out.push_back(RatioRecovery(block.client_index, static_cast<int>(i),
                                {row.begin(), row.end()}, bias_grads[i],
                                eps.bin));
  }
  return out;
}

}  // namespace llsim
