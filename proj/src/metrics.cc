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

#include "llsim/metrics.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <string>
#include <tuple>

#include "llsim/client.h"
#include "llsim/error.h"
#include "llsim/rng.h"

namespace llsim {
namespace {

constexpr int kSsimWindow = 8;
constexpr int kSsimStride = 4;
constexpr double kSsimC1 = 0.01 * 0.01;
constexpr double kSsimC2 = 0.03 * 0.03;

// Per-channel block means on a grid of at most 4x4 cells.
std::vector<double> Thumbnail(std::span<const double> img,
                              const ImageShape& s) {
  const int gh = std::min(4, s.height);
  const int gw = std::min(4, s.width);
  std::vector<double> out(static_cast<std::size_t>(s.channels) * gh * gw, 0.0);
  std::vector<int> counts(out.size(), 0);
  for (int c = 0; c < s.channels; ++c) {
    for (int y = 0; y < s.height; ++y) {
      const int cy = y * gh / s.height;
      for (int x = 0; x < s.width; ++x) {
        const std::size_t cell = (c * gh + cy) * gw + x * gw / s.width;
        out[cell] += img[(c * s.height + y) * s.width + x];
        ++counts[cell];
      }
    }
  }
  for (std::size_t i = 0; i < out.size(); ++i) out[i] /= counts[i];
  return out;
}

// Pearson correlation; invariant to the positive rescaling of an estimate.
double Correlation(std::span<const double> a, std::span<const double> b) {
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ab += (a[i] - ma) * (b[i] - mb);
    aa += (a[i] - ma) * (a[i] - ma);
    bb += (b[i] - mb) * (b[i] - mb);
  }
  if (aa == 0.0 || bb == 0.0) return 1.0;  // flat thumbnails: do not filter
  return ab / std::sqrt(aa * bb);
}

struct Candidate {
  std::size_t recovery;
  int image_client;
  int image_index;
  MatchPair pair;
};

double SecondsSince(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() -
                                       start)
      .count();
}

// Forward and backward through a ReLU MLP; the gradients are discarded.
class PayloadMlp {
 public:
  PayloadMlp(std::size_t input, const PayloadSpec& spec, int classes,
             std::uint64_t seed) {
    Rng rng(seed);
    std::size_t fan_in = input;
    for (int l = 0; l <= spec.layers; ++l) {
      const std::size_t fan_out =
          l == spec.layers ? static_cast<std::size_t>(classes)
                           : static_cast<std::size_t>(spec.hidden_units);
      DenseMatrix w(fan_out, fan_in);
      const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
      for (double& v : w.values()) v = sd * rng.Normal();
      weights_.push_back(std::move(w));
      fan_in = fan_out;
    }
  }

  double Step(const ImageBatch& batch) {
    double checksum = 0.0;
    for (std::size_t b = 0; b < batch.size(); ++b) {
      std::vector<std::vector<double>> acts{
          {batch.image(b).begin(), batch.image(b).end()}};
      for (const auto& w : weights_) {
        std::vector<double> next(w.rows(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
          const auto row = w.row(i);
          double acc = 0.0;
          for (std::size_t j = 0; j < row.size(); ++j) acc += row[j] * acts.back()[j];
          next[i] = std::max(acc, 0.0);
        }
        acts.push_back(std::move(next));
      }
      std::vector<double> delta(acts.back().size(), 1e-3);
      for (std::size_t l = weights_.size(); l-- > 0;) {
        const auto& w = weights_[l];
        std::vector<double> prev(w.cols(), 0.0);
        for (std::size_t i = 0; i < w.rows(); ++i) {
          if (acts[l + 1][i] <= 0.0) continue;
          const auto row = w.row(i);
          for (std::size_t j = 0; j < row.size(); ++j) {
            checksum += delta[i] * acts[l][j];  // weight gradient entry
            prev[j] += row[j] * delta[i];
          }
        }
        delta = std::move(prev);
      }
    }
    return checksum;
  }

 private:
  std::vector<DenseMatrix> weights_;
};

}  // namespace

OracleResult OccupancyOracle(std::span<const ImageBatch> batches,
                             std::span<const double> cutoffs,
                             const BlockLayout& layout) {
  OracleResult r;
  r.leaked.resize(batches.size());
  r.bin.resize(batches.size());
  for (std::size_t m = 0; m < batches.size(); ++m) {
    r.leaked[m].assign(batches[m].size(), false);
    r.bin[m].assign(batches[m].size(), -1);
    r.total_images += batches[m].size();
    for (std::size_t i = 0; i < batches[m].size(); ++i) {
      const double b = Brightness(batches[m].image(i));
      const auto first_not_below =
          std::lower_bound(cutoffs.begin(), cutoffs.end(), b);
      r.bin[m][i] =
          static_cast<int>(std::distance(cutoffs.begin(), first_not_below)) - 1;
    }
  }
  // Occupancy counts per (group, bin); a group is one client or everyone.
  const std::size_t groups = layout.shared ? 1 : batches.size();
  std::vector<std::vector<int>> counts(groups,
                                       std::vector<int>(cutoffs.size(), 0));
  for (std::size_t m = 0; m < batches.size(); ++m) {
    for (int bin : r.bin[m]) {
      if (bin >= 0) ++counts[layout.shared ? 0 : m][bin];
    }
  }
  for (std::size_t m = 0; m < batches.size(); ++m) {
    for (std::size_t i = 0; i < batches[m].size(); ++i) {
      const int bin = r.bin[m][i];
      if (bin >= 0 && counts[layout.shared ? 0 : m][bin] == 1) {
        r.leaked[m][i] = true;
        ++r.leaked_count;
      }
    }
  }
  return r;
}

OracleResult ActivationOracle(std::span<const DenseMatrix> preacts) {
  OracleResult r;
  if (preacts.empty()) return r;
  const std::size_t units = preacts.front().cols();
  std::vector<int> counts(units, 0);
  std::vector<std::pair<int, int>> sole(units, {-1, -1});
  for (std::size_t m = 0; m < preacts.size(); ++m) {
    r.total_images += preacts[m].rows();
    r.leaked.emplace_back(preacts[m].rows(), false);
    r.bin.emplace_back(preacts[m].rows(), -1);
    for (std::size_t i = 0; i < preacts[m].rows(); ++i) {
      const auto row = preacts[m].row(i);
      for (std::size_t u = 0; u < units; ++u) {
        if (row[u] > 0.0) {
          ++counts[u];
          sole[u] = {static_cast<int>(m), static_cast<int>(i)};
        }
      }
    }
  }
  for (std::size_t u = 0; u < units; ++u) {
    if (counts[u] != 1) continue;
    const auto [m, i] = sole[u];
    if (!r.leaked[m][i]) {
      r.leaked[m][i] = true;
      r.bin[m][i] = static_cast<int>(u);
      ++r.leaked_count;
    }
  }
  return r;
}

double Ssim(std::span<const double> a, std::span<const double> b,
            const ImageShape& shape) {
  if (a.size() != b.size() || a.size() != shape.Dim()) {
    throw Error(ErrorCode::kShapeMismatch, "SSIM inputs differ in size");
  }
  const int wh = std::min(kSsimWindow, shape.height);
  const int ww = std::min(kSsimWindow, shape.width);
  const double n = static_cast<double>(wh) * ww;
  double total = 0.0;
  for (int c = 0; c < shape.channels; ++c) {
    const std::size_t base = static_cast<std::size_t>(c) * shape.height * shape.width;
    double channel_sum = 0.0;
    int windows = 0;
    for (int y0 = 0; y0 + wh <= shape.height; y0 += kSsimStride) {
      for (int x0 = 0; x0 + ww <= shape.width; x0 += kSsimStride) {
        double sa = 0, sb = 0, saa = 0, sbb = 0, sab = 0;
        for (int y = y0; y < y0 + wh; ++y) {
          for (int x = x0; x < x0 + ww; ++x) {
            const double va = a[base + y * shape.width + x];
            const double vb = b[base + y * shape.width + x];
            sa += va;
            sb += vb;
            saa += va * va;
            sbb += vb * vb;
            sab += va * vb;
          }
        }
        const double ma = sa / n;
        const double mb = sb / n;
        const double va = saa / n - ma * ma;
        const double vb = sbb / n - mb * mb;
        const double cov = sab / n - ma * mb;
        channel_sum += ((2 * ma * mb + kSsimC1) * (2 * cov + kSsimC2)) /
                       ((ma * ma + mb * mb + kSsimC1) * (va + vb + kSsimC2));
        ++windows;
      }
    }
    total += channel_sum / windows;
  }
  return total / shape.channels;
}

LeakageReport MatchAndScore(std::vector<BinRecovery>& recoveries,
                            std::span<const ImageBatch> batches,
                            const MatchTolerances& tol,
                            const OracleResult* oracle) {
  LeakageReport report;
  report.per_client.resize(batches.size());
  report.leaked.resize(batches.size());
  std::vector<std::vector<std::vector<double>>> thumbs(batches.size());
  for (std::size_t m = 0; m < batches.size(); ++m) {
    report.per_client[m].total = batches[m].size();
    report.total_images += batches[m].size();
    report.leaked[m].assign(batches[m].size(), false);
    for (std::size_t i = 0; i < batches[m].size(); ++i) {
      thumbs[m].push_back(Thumbnail(batches[m].image(i), batches[m].shape()));
    }
  }
  if (oracle != nullptr) report.oracle_leaked_count = oracle->leaked_count;

  std::vector<Candidate> candidates;
  for (std::size_t r = 0; r < recoveries.size(); ++r) {
    const BinRecovery& rec = recoveries[r];
    if (rec.status != BinStatus::kRecovered || !rec.image_estimate) continue;
    const auto& est = *rec.image_estimate;
    const std::size_t lo = rec.client_index == kAllClients ? 0 : rec.client_index;
    const std::size_t hi =
        rec.client_index == kAllClients ? batches.size() : rec.client_index + 1;
    if (hi > batches.size()) {
      throw Error(ErrorCode::kShapeMismatch, "recovery for unknown client");
    }
    if (lo == hi) continue;
    const ImageShape& shape = batches[lo].shape();
    const auto thumb = Thumbnail(est, shape);
    double ee = 0.0;
    for (double v : est) ee += v * v;
    if (ee == 0.0) continue;
    for (std::size_t m = lo; m < hi; ++m) {
      for (std::size_t i = 0; i < batches[m].size(); ++i) {
        if (Correlation(thumb, thumbs[m][i]) < tol.thumbnail_correlation) continue;
        const auto img = batches[m].image(i);
        double ex = 0.0;
        for (std::size_t k = 0; k < est.size(); ++k) ex += est[k] * img[k];
        const double scale = ex / ee;
        if (!(scale > 0.0)) continue;
        std::vector<double> scaled(est.size());
        double err = 0.0;
        for (std::size_t k = 0; k < est.size(); ++k) {
          scaled[k] = scale * est[k];
          err = std::max(err, std::abs(scaled[k] - img[k]));
        }
        const double s = Ssim(scaled, img, shape);
        if (err < tol.max_abs || s > tol.ssim) {
          candidates.push_back(
              {r, static_cast<int>(m), static_cast<int>(i),
               {rec.client_index, rec.bin_index, static_cast<int>(m),
                static_cast<int>(i), scale, err, s}});
        }
      }
    }
  }

  // Best SSIM first; ties go to the lower bin, then to the earlier image.
  std::sort(candidates.begin(), candidates.end(),
            [](const Candidate& a, const Candidate& b) {
              return std::make_tuple(-a.pair.ssim, a.pair.bin_index,
                                     a.recovery, a.image_client,
                                     a.image_index) <
                     std::make_tuple(-b.pair.ssim, b.pair.bin_index,
                                     b.recovery, b.image_client,
                                     b.image_index);
            });
  std::vector<bool> used(recoveries.size(), false);
  double ssim_sum = 0.0;
  for (const Candidate& c : candidates) {
    if (used[c.recovery] || report.leaked[c.image_client][c.image_index]) {
      continue;
    }
    used[c.recovery] = true;
    report.leaked[c.image_client][c.image_index] = true;
    ++report.per_client[c.image_client].leaked;
    ++report.leaked_count;
    ssim_sum += c.pair.ssim;
    report.matches.push_back(c.pair);
  }
  for (std::size_t r = 0; r < recoveries.size(); ++r) {
    if (recoveries[r].status == BinStatus::kRecovered && !used[r]) {
      recoveries[r].status = BinStatus::kSuspectedCollision;
      ++report.suspected_collisions;
    }
  }
  report.leakage_rate =
      report.total_images == 0
          ? 0.0
          : static_cast<double>(report.leaked_count) / report.total_images;
  report.mean_ssim =
      report.matches.empty() ? 0.0 : ssim_sum / report.matches.size();
  return report;
}

ResourceReport ComputeResourceReport(const AttackConfig& cfg,
                                     bool sa_enabled) {
  ResourceReport r;
  r.params = CountParameters(cfg);
  const ParameterCounts& p = r.params;
  const std::uint64_t units = cfg.Fc1Units();
  const std::uint64_t dim = cfg.InputDim();
  const bool sparse = cfg.variant == Variant::kMandrakeSparse;

  auto dense = [&](std::string name, std::uint64_t count) {
    r.breakdown.push_back({std::move(name), Storage::kDense, count,
                           DenseByteSize(count)});
  };
  dense("conv_kernels", p.conv_params);
  dense("conv_biases", IsPerClient(cfg.variant) ? cfg.ConvOutChannels() : 0);
  if (sparse) {
    r.breakdown.push_back({"fc1_weights", Storage::kCoo, p.fc1_nonzero,
                           CooByteSize(p.fc1_nonzero)});
  } else {
    dense("fc1_weights", p.fc1_weights);
  }
  dense("fc1_biases", units);
  dense("fc2_weights", p.fc2_weights);
  dense("fc2_biases", dim);

  for (const auto& t : r.breakdown) r.server_to_client_bytes += t.bytes;
  r.server_to_client_csr_bytes = r.server_to_client_bytes;
  if (sparse) {
    r.server_to_client_csr_bytes += CsrByteSize(units, p.fc1_nonzero);
    r.server_to_client_csr_bytes -= CooByteSize(p.fc1_nonzero);
  }
  r.client_to_server_bytes =
      sa_enabled ? DenseByteSize(p.Total()) : r.server_to_client_bytes;
  return r;
}

UpdateTiming TimeUpdate(const AttackConfig& cfg, const PayloadSpec& payload,
                        int repetitions) {
  if (repetitions < 5) {
    throw Error(ErrorCode::kConfigError, "timing_repetitions: must be >= 5");
  }
  const ImageBatch batch = SynthBatch({.seed = cfg.seed,
                                       .batch_size = cfg.batch_size,
                                       .shape = cfg.shape,
                                       .num_classes = cfg.num_classes});
  const CalibrationSample calib = Calibrate(SynthBatch(
      {.seed = cfg.seed + 1, .batch_size = 256, .shape = cfg.shape}));

  std::vector<MaliciousModel> models;
  for (Variant v :
       {Variant::kMandrakeSparse, Variant::kMandrakeDense, Variant::kRtfDense}) {
    AttackConfig c = cfg;
    c.variant = v;
    models.push_back(
        BuildModel(c, 0, BuildBinningCutoffs(calib, c.Fc1Units())));
  }
  PayloadMlp mlp(cfg.InputDim(), payload, cfg.num_classes, cfg.seed);

  std::vector<std::vector<double>> samples(models.size());
  double sink = 0.0;
  for (int rep = 0; rep < repetitions; ++rep) {
    for (std::size_t v = 0; v < models.size(); ++v) {
      const auto start = std::chrono::steady_clock::now();
      const ClientUpdate g = Backward(models[v], batch);
      sink += g.fc1_biases.front();
      sink += mlp.Step(batch);
      samples[v].push_back(SecondsSince(start));
    }
  }
  auto median = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  };
  UpdateTiming t{median(samples[0]), median(samples[1]), median(samples[2])};
  // Keeps the timed work observable to the optimiser.
  if (std::isnan(sink)) t.sparse += 0.0;
  return t;
}

}  // namespace llsim
