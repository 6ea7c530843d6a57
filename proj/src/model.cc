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

#include "llsim/model.h"

#include <algorithm>
#include <cmath>
#include <string>

#include "llsim/error.h"
#include "llsim/rng.h"

namespace llsim {
namespace {

// Stream ids for Rng::Derive so that each tensor family has its own
// reproducible sequence independent of construction order.
constexpr std::uint64_t kStubStream = 0x5157'0001;
constexpr std::uint64_t kTrapStream = 0x5157'0002;

void Require(bool ok, const std::string& field, const std::string& why) {
  if (!ok) throw Error(ErrorCode::kConfigError, field + ": " + why);
}

// Column sums of the stub carry a class-alternating sign, so every image's
// downstream factor dL/da is bounded away from zero and of similar size
// across images whatever the label.
// Half the range of the FC2 pre-bias output v = sum_i relu(b - c_i) / sqrt(dim)
// over the calibrated brightness range [c_0, b_hi].
double BinningOutputHalfRange(std::span<const double> cutoffs,
                              std::size_t dim) {
  const std::size_t u = cutoffs.size();
  double b_hi = 1.0;
  if (u > 1) {
    b_hi = std::min(1.0, cutoffs.back() + (cutoffs.back() - cutoffs.front()) /
                                              static_cast<double>(u - 1));
  }
  double v = 0.0;
  for (double c : cutoffs) v += std::max(0.0, b_hi - c);
  return 0.5 * v / std::sqrt(static_cast<double>(dim));
}

constexpr double kLogitSpan = 0.25;

DenseMatrix BuildStub(const AttackConfig& cfg, double scale) {
  const std::size_t dim = cfg.InputDim();
  DenseMatrix stub(cfg.num_classes, dim);
  Rng rng = Rng::Derive(cfg.seed, kStubStream);
  for (int c = 0; c < cfg.num_classes; ++c) {
    const double sign = (c % 2 == 0) ? 1.0 : -1.0;
    for (std::size_t j = 0; j < dim; ++j) {
      stub.at(c, j) =
          sign * scale * rng.Uniform(0.5, 1.5) / static_cast<double>(dim);
    }
  }
  return stub;
}

DenseMatrix BuildTrapRows(const AttackConfig& cfg, std::size_t units) {
  const std::size_t dim = cfg.InputDim();
  const double sigma = 1.0 / static_cast<double>(dim);
  DenseMatrix w(units, dim);
  Rng rng = Rng::Derive(cfg.seed, kTrapStream);
  std::vector<std::size_t> perm(dim);
  for (std::size_t i = 0; i < units; ++i) {
    for (std::size_t j = 0; j < dim; ++j) perm[j] = j;
    // Partial Fisher-Yates: the first dim/2 positions become negative and
    // each is paired with one of the next dim/2 positions.
    const std::size_t negatives = dim / 2;
    for (std::size_t j = 0; j < negatives; ++j) {
      std::swap(perm[j], perm[j + rng.Below(dim - j)]);
    }
    // Each negative entry mirrors the magnitude of its positive partner, so
    // the row sum is -(1/s - 1) times the paired positive mass for every
    // row rather than a random quantity shared by all images.
    auto row = w.row(i);
    for (std::size_t j = 0; j < negatives; ++j) {
      double mag = std::abs(rng.Normal()) * sigma;
      if (mag == 0.0) mag = sigma;
      row[perm[j]] = -mag / cfg.trap_scale;
      row[perm[negatives + j]] = mag;
    }
    for (std::size_t j = 2 * negatives; j < dim; ++j) {
      row[perm[j]] = std::max(std::abs(rng.Normal()), 1e-12) * sigma;
    }
  }
  return w;
}

}  // namespace

std::string_view VariantName(Variant v) {
  switch (v) {
    case Variant::kMandrakeSparse: return "mandrake_sparse";
    case Variant::kMandrakeDense: return "mandrake_dense";
    case Variant::kRtfDense: return "rtf_dense";
    case Variant::kTrapWeights: return "trap_weights";
  }
  return "unknown";
}

Variant ParseVariant(std::string_view name) {
  for (Variant v : {Variant::kMandrakeSparse, Variant::kMandrakeDense,
                    Variant::kRtfDense, Variant::kTrapWeights}) {
    if (VariantName(v) == name) return v;
  }
  throw Error(ErrorCode::kConfigError,
              "variant: unknown value '" + std::string(name) + "'");
}

std::size_t AttackConfig::UnitsPerClient() const {
  return static_cast<std::size_t>(std::llround(batch_size * neurons_per_image));
}

std::size_t AttackConfig::Fc1Units() const {
  if (IsPerClient(variant)) return UnitsPerClient();
  return static_cast<std::size_t>(
      std::llround(static_cast<double>(num_clients) * batch_size *
                   neurons_per_image));
}

std::size_t AttackConfig::ConvOutChannels() const {
  return IsPerClient(variant)
             ? static_cast<std::size_t>(num_clients) * shape.channels
             : 0;
}

std::size_t AttackConfig::Fc1InputCols() const {
  return IsPerClient(variant) ? InputDim() * num_clients : InputDim();
}

void AttackConfig::Validate() const {
  Require(num_clients >= 1, "num_clients", "must be >= 1");
  Require(batch_size >= 1, "batch_size", "must be >= 1");
  Require(shape.channels == 1 || shape.channels == 3, "channels",
          "must be 1 or 3");
  Require(shape.height >= 1 && shape.width >= 1, "height/width",
          "must be >= 1");
  Require(neurons_per_image > 0.0 && std::isfinite(neurons_per_image),
          "neurons_per_image", "must be > 0");
  Require(Fc1Units() >= 1, "neurons_per_image",
          "rounds to zero FC1 units for this batch size");
  Require(kernel_size >= 1 && kernel_size % 2 == 1, "kernel_size",
          "must be odd and >= 1");
  Require(trap_scale >= 0.90 && trap_scale <= 0.99, "trap_scale",
          "must lie in [0.90, 0.99]");
  Require(num_classes >= 2, "num_classes", "must be >= 2");
}

BlockLayout MakeLayout(const AttackConfig& cfg) {
  BlockLayout layout;
  layout.num_clients = cfg.num_clients;
  layout.shared = !IsPerClient(cfg.variant);
  layout.block_width = cfg.InputDim();
  layout.channels = cfg.shape.channels;
  layout.fc1_units = cfg.Fc1Units();
  return layout;
}

ParameterCounts CountParameters(const AttackConfig& cfg) {
  const std::uint64_t dim = cfg.InputDim();
  const std::uint64_t units = cfg.Fc1Units();
  const std::uint64_t k2 =
      static_cast<std::uint64_t>(cfg.kernel_size) * cfg.kernel_size;
  ParameterCounts p;
  p.fc1_weights = units * cfg.Fc1InputCols();
  p.fc2_weights = dim * units;
  p.total_weights = p.fc1_weights + p.fc2_weights;
  if (IsPerClient(cfg.variant)) {
    p.fc1_nonzero = units * dim;
    p.conv_params = cfg.ConvOutChannels() * cfg.shape.channels * k2;
    p.bias_params = cfg.ConvOutChannels() + units + dim;
  } else {
    p.fc1_nonzero = p.fc1_weights;
    p.bias_params = units + dim;
  }
  p.nonzero_weights = p.fc1_nonzero + p.fc2_weights;
  return p;
}

std::uint64_t ModelMemoryBytes(const AttackConfig& cfg) {
  const ParameterCounts p = CountParameters(cfg);
  const std::uint64_t fc1 = cfg.variant == Variant::kMandrakeSparse
                                ? 3 * p.fc1_nonzero
                                : p.fc1_weights;
  const std::uint64_t stub =
      static_cast<std::uint64_t>(cfg.num_classes) * cfg.InputDim();
  return 8 * (fc1 + p.fc2_weights + p.conv_params + p.bias_params + stub);
}

std::vector<int> MaliciousModel::ActiveConvChannels() const {
  std::vector<int> active;
  if (conv_bypass) return active;
  const std::size_t per_out = conv_biases.empty()
                                  ? 0
                                  : conv_kernels.size() / conv_biases.size();
  for (std::size_t o = 0; o < conv_biases.size(); ++o) {
    bool nonzero = conv_biases[o] != 0.0;
    for (std::size_t k = 0; k < per_out && !nonzero; ++k) {
      nonzero = conv_kernels[o * per_out + k] != 0.0;
    }
    if (nonzero) active.push_back(static_cast<int>(o));
  }
  return active;
}

std::vector<double> BuildBinningCutoffs(const CalibrationSample& calib,
                                        std::size_t units) {
  const auto& v = calib.brightness_values;
  if (units < 1) {
    throw Error(ErrorCode::kConfigError, "cutoffs: need at least one unit");
  }
  if (v.size() < 2 || !std::is_sorted(v.begin(), v.end())) {
    throw Error(ErrorCode::kDegenerateCalibration,
                "calibration sample must be sorted with at least 2 values");
  }
  if (v.front() == v.back()) {
    throw Error(ErrorCode::kDegenerateCalibration,
                "all calibration values are equal");
  }
  std::vector<double> cutoffs(units);
  const double last = static_cast<double>(v.size() - 1);
  for (std::size_t i = 0; i < units; ++i) {
    const double pos = last * static_cast<double>(i) / units;
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    cutoffs[i] = v[lo] + frac * (v[hi] - v[lo]);
  }
  return cutoffs;
}

MaliciousModel BuildModel(const AttackConfig& cfg, int client_index,
                          std::span<const double> cutoffs) {
  cfg.Validate();
  if (client_index < 0 || client_index >= cfg.num_clients) {
    throw Error(ErrorCode::kConfigError,
                "client_index " + std::to_string(client_index) +
                    " outside [0, " + std::to_string(cfg.num_clients) + ")");
  }
  if (ModelMemoryBytes(cfg) > cfg.memory_budget_bytes) {
    throw Error(ErrorCode::kLayoutOverflow,
                "model needs " + std::to_string(ModelMemoryBytes(cfg)) +
                    " bytes, budget is " +
                    std::to_string(cfg.memory_budget_bytes));
  }
  const std::size_t units = cfg.Fc1Units();
  if (IsBinning(cfg.variant) && cutoffs.size() != units) {
    throw Error(ErrorCode::kShapeMismatch,
                "expected " + std::to_string(units) + " cutoffs, got " +
                    std::to_string(cutoffs.size()));
  }

  const std::size_t dim = cfg.InputDim();
  const double brightness_weight = 1.0 / static_cast<double>(dim);

  MaliciousModel model;
  model.config = cfg;
  model.client_index = client_index;
  model.layout = MakeLayout(cfg);
  model.conv_bypass = !IsPerClient(cfg.variant);

  if (!model.conv_bypass) {
    const std::size_t out = cfg.ConvOutChannels();
    const std::size_t in = cfg.shape.channels;
    const std::size_t k = cfg.kernel_size;
    model.conv_kernels.assign(out * in * k * k, 0.0);
    model.conv_biases.assign(out, 0.0);
    const std::size_t center = (k / 2) * k + k / 2;
    for (std::size_t c = 0; c < in; ++c) {
      const std::size_t o = client_index * in + c;
      model.conv_kernels[((o * in) + c) * k * k + center] = 1.0;
    }
  }

  const std::size_t cols = cfg.Fc1InputCols();
  switch (cfg.variant) {
    case Variant::kMandrakeSparse: {
      std::vector<std::int64_t> r;
      std::vector<std::int64_t> c;
      r.reserve(units * dim);
      c.reserve(units * dim);
      const auto [first, last] = model.layout.ColumnRange(client_index);
      for (std::size_t i = 0; i < units; ++i) {
        for (std::size_t j = first; j < last; ++j) {
          r.push_back(static_cast<std::int64_t>(i));
          c.push_back(static_cast<std::int64_t>(j));
        }
      }
      model.fc1_weights = SparseMatrixCOO(
          units, cols, std::move(r), std::move(c),
          std::vector<double>(units * dim, brightness_weight));
      break;
    }
    case Variant::kMandrakeDense: {
      DenseMatrix w(units, cols);
      const auto [first, last] = model.layout.ColumnRange(client_index);
      for (std::size_t i = 0; i < units; ++i) {
        for (std::size_t j = first; j < last; ++j) w.at(i, j) = brightness_weight;
      }
      model.fc1_weights = std::move(w);
      break;
    }
    case Variant::kRtfDense: {
      model.fc1_weights = DenseMatrix(
          units, cols, std::vector<double>(units * cols, brightness_weight));
      break;
    }
    case Variant::kTrapWeights:
      model.fc1_weights = BuildTrapRows(cfg, units);
      break;
  }

  if (IsBinning(cfg.variant)) {
    model.cutoffs.assign(cutoffs.begin(), cutoffs.end());
    model.fc1_biases.resize(units);
    for (std::size_t i = 0; i < units; ++i) model.fc1_biases[i] = -cutoffs[i];
  } else {
    model.fc1_biases.assign(units, 0.0);
  }

  model.fc2_weights =
      DenseMatrix(dim, units,
                  std::vector<double>(dim * units,
                                      1.0 / std::sqrt(static_cast<double>(dim))));
  // Logits move by about scale * (v - half) per class, so centring v and
  // capping the scale keeps every image's downstream factor of similar
  // size. Collision blends then stay blends instead of collapsing onto one
  // dominant image.
  double half = 0.0;
  if (IsBinning(cfg.variant)) half = BinningOutputHalfRange(cutoffs, dim);
  model.fc2_biases.assign(dim, -half);
  model.stub_weights =
      BuildStub(cfg, half > kLogitSpan ? kLogitSpan / half : 1.0);
  return model;
}

}  // namespace llsim
