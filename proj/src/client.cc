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

#include "llsim/client.h"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

#include "llsim/error.h"

namespace llsim {
namespace {

// Four independent partial sums hide floating-point add latency; the
// summation order is fixed, so results stay deterministic.
// 2048 doubles per image row; a batch of 64 slices fits in 1 MiB.
constexpr std::size_t kColumnTile = 2048;

double Dot(const double* a, const double* b, std::size_t n) {
  double s0 = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
  std::size_t j = 0;
  for (; j + 4 <= n; j += 4) {
    s0 += a[j] * b[j];
    s1 += a[j + 1] * b[j + 1];
    s2 += a[j + 2] * b[j + 2];
    s3 += a[j + 3] * b[j + 3];
  }
  for (; j < n; ++j) s0 += a[j] * b[j];
  return (s0 + s1) + (s2 + s3);
}

void CheckBatch(const MaliciousModel& model, const ImageBatch& batch) {
  if (!(batch.shape() == model.config.shape)) {
    throw Error(ErrorCode::kShapeMismatch,
                "batch images are " + std::to_string(batch.shape().channels) +
                    "x" + std::to_string(batch.shape().height) + "x" +
                    std::to_string(batch.shape().width) +
                    ", model expects " +
                    std::to_string(model.config.shape.channels) + "x" +
                    std::to_string(model.config.shape.height) + "x" +
                    std::to_string(model.config.shape.width));
  }
  for (int label : batch.labels()) {
    if (label < 0 || label >= model.config.num_classes) {
      throw Error(ErrorCode::kShapeMismatch,
                  "label " + std::to_string(label) + " outside [0, " +
                      std::to_string(model.config.num_classes) + ")");
    }
  }
}

// Output channels the convolution is evaluated on. COO models skip the
// all-zero kernels; dense models evaluate every kernel.
std::vector<int> ConvChannels(const MaliciousModel& model) {
  if (model.conv_bypass) return {};
  if (model.fc1_storage() == Storage::kCoo) return model.ActiveConvChannels();
  std::vector<int> all(model.conv_biases.size());
  for (std::size_t o = 0; o < all.size(); ++o) all[o] = static_cast<int>(o);
  return all;
}

// Same-padded, stride-1 convolution of one output channel.
void ConvolveChannel(const MaliciousModel& model, int out_channel,
                     std::span<const double> image, std::span<double> out) {
  const ImageShape& s = model.config.shape;
  const int k = model.config.kernel_size;
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  const double* kernel =
      model.conv_kernels.data() +
      static_cast<std::size_t>(out_channel) * s.channels * k * k;
  std::fill(out.begin(), out.end(), model.conv_biases[out_channel]);
  for (int ci = 0; ci < s.channels; ++ci) {
    const double* in = image.data() + ci * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double w = kernel[(ci * k + ky) * k + kx];
        const int dy = ky - pad;
        const int dx = kx - pad;
        for (int y = std::max(0, -dy); y < std::min(s.height, s.height - dy);
             ++y) {
          const double* src = in + (y + dy) * s.width + dx;
          double* dst = out.data() + y * s.width;
          for (int x = std::max(0, -dx); x < std::min(s.width, s.width - dx);
               ++x) {
            dst[x] += w * src[x];
          }
        }
      }
    }
  }
}

// Accumulates dK and db for one output channel given dL/d(conv output).
void ConvolveChannelBackward(const MaliciousModel& model, int out_channel,
                             std::span<const double> image,
                             std::span<const double> grad_out,
                             ClientUpdate& grad) {
  const ImageShape& s = model.config.shape;
  const int k = model.config.kernel_size;
  const int pad = k / 2;
  const std::size_t plane = static_cast<std::size_t>(s.height) * s.width;
  double* dkernel =
      grad.conv_kernels.data() +
      static_cast<std::size_t>(out_channel) * s.channels * k * k;
  double bias = 0.0;
  for (double g : grad_out) bias += g;
  grad.conv_biases[out_channel] += bias;
  for (int ci = 0; ci < s.channels; ++ci) {
    const double* in = image.data() + ci * plane;
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const int dy = ky - pad;
        const int dx = kx - pad;
        double acc = 0.0;
        for (int y = std::max(0, -dy); y < std::min(s.height, s.height - dy);
             ++y) {
          const double* src = in + (y + dy) * s.width + dx;
          const double* g = grad_out.data() + y * s.width;
          for (int x = std::max(0, -dx); x < std::min(s.width, s.width - dx);
               ++x) {
            acc += g[x] * src[x];
          }
        }
        dkernel[(ci * k + ky) * k + kx] += acc;
      }
    }
  }
}

std::vector<double> Softmax(std::span<const double> logits) {
  const double peak = *std::max_element(logits.begin(), logits.end());
  std::vector<double> p(logits.size());
  double sum = 0.0;
  for (std::size_t c = 0; c < logits.size(); ++c) {
    p[c] = std::exp(logits[c] - peak);
    sum += p[c];
  }
  for (double& v : p) v /= sum;
  return p;
}

// Column ranges of FC1's input that can be nonzero for this model.
std::vector<std::pair<std::size_t, std::size_t>> ActiveColumnRanges(
    const MaliciousModel& model) {
  if (model.conv_bypass) return {{0, model.layout.Fc1InputCols()}};
  const std::size_t plane =
      static_cast<std::size_t>(model.config.shape.height) *
      model.config.shape.width;
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  for (int o : model.ActiveConvChannels()) {
    const std::size_t first = o * plane;
    if (!ranges.empty() && ranges.back().second == first) {
      ranges.back().second = first + plane;
    } else {
      ranges.emplace_back(first, first + plane);
    }
  }
  return ranges;
}

// Maps FC1 input columns to the columns a forward pass actually stores.
// COO models keep only the ranges their conv output can reach, so per-call
// work does not grow with the width of the shared input.
struct ColumnMap {
  static constexpr std::size_t kOutside = static_cast<std::size_t>(-1);

  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::size_t width = 0;
  bool compact = false;

  std::size_t ToStored(std::size_t col) const {
    std::size_t offset = 0;
    for (const auto& [first, last] : ranges) {
      if (col >= first && col < last) return offset + (col - first);
      offset += last - first;
    }
    return kOutside;
  }
};

ColumnMap MakeColumnMap(const MaliciousModel& model) {
  ColumnMap map;
  map.compact =
      model.fc1_storage() == Storage::kCoo && !model.conv_bypass;
  map.ranges = map.compact
                   ? ActiveColumnRanges(model)
                   : std::vector<std::pair<std::size_t, std::size_t>>{
                         {0, model.layout.Fc1InputCols()}};
  for (const auto& [first, last] : map.ranges) map.width += last - first;
  return map;
}

std::vector<std::size_t> StoredColumns(const SparseMatrixCOO& coo,
                                       const ColumnMap& map) {
  std::vector<std::size_t> out(coo.nnz());
  const auto ci = coo.col_indices();
  for (std::size_t k = 0; k < out.size(); ++k) {
    out[k] = map.ToStored(static_cast<std::size_t>(ci[k]));
  }
  return out;
}

// Scatters stored columns back to the full FC1 input width.
DenseMatrix ExpandColumns(const DenseMatrix& stored, const ColumnMap& map,
                          std::size_t cols) {
  if (!map.compact) return stored;
  DenseMatrix full(stored.rows(), cols);
  for (std::size_t b = 0; b < stored.rows(); ++b) {
    const auto src = stored.row(b);
    auto dst = full.row(b);
    std::size_t k = 0;
    for (const auto& [first, last] : map.ranges) {
      for (std::size_t j = first; j < last; ++j) dst[j] = src[k++];
    }
  }
  return full;
}

void AddVector(std::vector<double>& acc, std::span<const double> v,
               double scale = 1.0) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += scale * v[i];
}

void AddMatrix(DenseMatrix& acc, const DenseMatrix& v, double scale = 1.0) {
  auto a = acc.values();
  auto b = v.values();
  for (std::size_t i = 0; i < a.size(); ++i) a[i] += scale * b[i];
}

// acc + scale * v for FC1 tensors of matching storage.
Fc1Weights AddFc1(const Fc1Weights& acc, const Fc1Weights& v, double scale) {
  if (acc.index() != v.index()) {
    throw Error(ErrorCode::kShapeMismatch, "FC1 storage mismatch");
  }
  if (const auto* dense = std::get_if<DenseMatrix>(&acc)) {
    DenseMatrix out = *dense;
    AddMatrix(out, std::get<DenseMatrix>(v), scale);
    return out;
  }
  const auto& a = std::get<SparseMatrixCOO>(acc);
  const auto& b = std::get<SparseMatrixCOO>(v);
  std::vector<Triplet> t;
  t.reserve(a.nnz() + b.nnz());
  for (std::size_t k = 0; k < a.nnz(); ++k) {
    t.push_back({a.row_indices()[k], a.col_indices()[k], a.values()[k]});
  }
  for (std::size_t k = 0; k < b.nnz(); ++k) {
    t.push_back({b.row_indices()[k], b.col_indices()[k], scale * b.values()[k]});
  }
  return SparseMatrixCOO::FromTriplets(a.rows(), a.cols(), std::move(t));
}

void AddInto(ClientUpdate& acc, const ClientUpdate& g) {
  AddVector(acc.conv_kernels, g.conv_kernels);
  AddVector(acc.conv_biases, g.conv_biases);
  acc.fc1_weights = AddFc1(acc.fc1_weights, g.fc1_weights, 1.0);
  AddVector(acc.fc1_biases, g.fc1_biases);
  AddMatrix(acc.fc2_weights, g.fc2_weights);
  AddVector(acc.fc2_biases, g.fc2_biases);
  AddMatrix(acc.stub_weights, g.stub_weights);
}

}  // namespace

FlatLayout MakeFlatLayout(const AttackConfig& cfg) {
  const ParameterCounts p = CountParameters(cfg);
  const std::size_t dim = cfg.InputDim();
  const std::size_t units = cfg.Fc1Units();
  FlatLayout f;
  f.fc1_units = units;
  f.fc1_cols = cfg.Fc1InputCols();
  f.conv_kernels = 0;
  f.conv_biases = f.conv_kernels + p.conv_params;
  f.fc1_weights = f.conv_biases + cfg.ConvOutChannels();
  f.fc1_biases = f.fc1_weights + p.fc1_weights;
  f.fc2_weights = f.fc1_biases + units;
  f.fc2_biases = f.fc2_weights + p.fc2_weights;
  f.stub_weights = f.fc2_biases + dim;
  f.total = f.stub_weights + static_cast<std::size_t>(cfg.num_classes) * dim;
  return f;
}

void FlattenInto(const ClientUpdate& update, const FlatLayout& layout,
                 std::span<double> out) {
  if (out.size() != layout.total) {
    throw Error(ErrorCode::kShapeMismatch, "flat buffer has wrong length");
  }
  auto put = [&](std::size_t offset, std::span<const double> v) {
    std::copy(v.begin(), v.end(), out.begin() + offset);
  };
  put(layout.conv_kernels, update.conv_kernels);
  put(layout.conv_biases, update.conv_biases);
  if (const auto* dense = std::get_if<DenseMatrix>(&update.fc1_weights)) {
    put(layout.fc1_weights, dense->values());
  } else {
    const auto& coo = std::get<SparseMatrixCOO>(update.fc1_weights);
    std::fill(out.begin() + layout.fc1_weights,
              out.begin() + layout.fc1_biases, 0.0);
    for (std::size_t k = 0; k < coo.nnz(); ++k) {
      out[layout.fc1_weights + coo.row_indices()[k] * layout.fc1_cols +
          coo.col_indices()[k]] = coo.values()[k];
    }
  }
  put(layout.fc1_biases, update.fc1_biases);
  put(layout.fc2_weights, update.fc2_weights.values());
  put(layout.fc2_biases, update.fc2_biases);
  put(layout.stub_weights, update.stub_weights.values());
}

std::vector<double> Flatten(const ClientUpdate& update,
                            const FlatLayout& layout) {
  std::vector<double> out(layout.total);
  FlattenInto(update, layout, out);
  return out;
}

std::vector<double> FlattenParameters(const MaliciousModel& model) {
  ClientUpdate view;
  view.conv_kernels = model.conv_kernels;
  view.conv_biases = model.conv_biases;
  view.fc1_weights = model.fc1_weights;
  view.fc1_biases = model.fc1_biases;
  view.fc2_weights = model.fc2_weights;
  view.fc2_biases = model.fc2_biases;
  view.stub_weights = model.stub_weights;
  return Flatten(view, MakeFlatLayout(model.config));
}

void AssignParameters(MaliciousModel& model, std::span<const double> flat) {
  const FlatLayout f = MakeFlatLayout(model.config);
  if (flat.size() != f.total) {
    throw Error(ErrorCode::kShapeMismatch, "flat parameter vector length");
  }
  auto* fc1 = std::get_if<DenseMatrix>(&model.fc1_weights);
  if (fc1 == nullptr) {
    throw Error(ErrorCode::kShapeMismatch,
                "AssignParameters needs dense FC1 storage");
  }
  auto take = [&](std::size_t offset, std::span<double> dst) {
    std::copy(flat.begin() + offset, flat.begin() + offset + dst.size(),
              dst.begin());
  };
  take(f.conv_kernels, model.conv_kernels);
  take(f.conv_biases, model.conv_biases);
  take(f.fc1_weights, fc1->values());
  take(f.fc1_biases, model.fc1_biases);
  take(f.fc2_weights, model.fc2_weights.values());
  take(f.fc2_biases, model.fc2_biases);
  take(f.stub_weights, model.stub_weights.values());
}

namespace {

// Forward pass whose conv_out holds only the columns named by map.
ForwardTrace ForwardStored(const MaliciousModel& model, const ImageBatch& batch,
                           const ColumnMap& map) {
  CheckBatch(model, batch);
  const std::size_t n = batch.size();
  const std::size_t cols = map.width;
  const std::size_t units = model.layout.fc1_units;
  const std::size_t dim = model.config.InputDim();
  const std::size_t classes = model.config.num_classes;
  const std::size_t plane =
      static_cast<std::size_t>(model.config.shape.height) *
      model.config.shape.width;

  ForwardTrace t{DenseMatrix(n, cols), DenseMatrix(n, units),
                 DenseMatrix(n, units), DenseMatrix(n, dim),
                 DenseMatrix(n, classes), 0.0};
  const std::vector<int> channels = ConvChannels(model);

  for (std::size_t b = 0; b < n; ++b) {
    const auto image = batch.image(b);
    auto h = t.conv_out.row(b);
    if (model.conv_bypass) {
      std::copy(image.begin(), image.end(), h.begin());
    } else {
      for (int o : channels) {
        ConvolveChannel(model, o, image,
                        h.subspan(map.ToStored(o * plane), plane));
      }
    }
    auto pre = t.fc1_preact.row(b);
    std::copy(model.fc1_biases.begin(), model.fc1_biases.end(), pre.begin());
  }

  // Column tiles keep the batch's slice of conv_out in cache while every
  // weight row passes over it.
  if (const auto* w = std::get_if<DenseMatrix>(&model.fc1_weights)) {
    for (std::size_t j0 = 0; j0 < cols; j0 += kColumnTile) {
      const std::size_t len = std::min(kColumnTile, cols - j0);
      for (std::size_t i = 0; i < units; ++i) {
        const double* row = w->row(i).data() + j0;
        for (std::size_t b = 0; b < n; ++b) {
          t.fc1_preact.at(b, i) += Dot(row, t.conv_out.row(b).data() + j0, len);
        }
      }
    }
  } else {
    const auto& coo = std::get<SparseMatrixCOO>(model.fc1_weights);
    const auto ri = coo.row_indices();
    const std::vector<std::size_t> ci = StoredColumns(coo, map);
    const auto v = coo.values();
    // Entries are row-sorted, so each row's sum is formed locally. Entries
    // outside the stored columns multiply a zero activation.
    for (std::size_t b = 0; b < n; ++b) {
      const auto h = t.conv_out.row(b);
      auto pre = t.fc1_preact.row(b);
      std::size_t k = 0;
      while (k < coo.nnz()) {
        const std::int64_t r = ri[k];
        double acc = 0.0;
        for (; k < coo.nnz() && ri[k] == r; ++k) {
          if (ci[k] != ColumnMap::kOutside) acc += v[k] * h[ci[k]];
        }
        pre[r] += acc;
      }
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    const auto pre = t.fc1_preact.row(b);
    auto act = t.fc1_act.row(b);
    for (std::size_t i = 0; i < units; ++i) act[i] = std::max(pre[i], 0.0);
  }

  for (std::size_t j = 0; j < dim; ++j) {
    const auto row = model.fc2_weights.row(j);
    for (std::size_t b = 0; b < n; ++b) {
      const auto act = t.fc1_act.row(b);
      t.fc2_out.at(b, j) =
          model.fc2_biases[j] + Dot(row.data(), act.data(), units);
    }
  }

  for (std::size_t b = 0; b < n; ++b) {
    const auto z = t.fc2_out.row(b);
    auto logits = t.logits.row(b);
    for (std::size_t c = 0; c < classes; ++c) {
      const auto row = model.stub_weights.row(c);
      logits[c] = Dot(row.data(), z.data(), dim);
    }
    const double peak = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - peak);
    t.loss += peak + std::log(sum) - logits[batch.labels()[b]];
  }
  t.loss /= static_cast<double>(n);
  return t;
}

}  // namespace

ForwardTrace Forward(const MaliciousModel& model, const ImageBatch& batch) {
  const ColumnMap map = MakeColumnMap(model);
  ForwardTrace t = ForwardStored(model, batch, map);
  t.conv_out = ExpandColumns(t.conv_out, map, model.layout.Fc1InputCols());
  return t;
}

ClientUpdate Backward(const MaliciousModel& model, const ImageBatch& batch,
                      ForwardTrace* trace_out) {
  const ColumnMap map = MakeColumnMap(model);
  ForwardTrace t = ForwardStored(model, batch, map);
  const std::size_t n = batch.size();
  const std::size_t cols = model.layout.Fc1InputCols();
  const std::size_t stored = map.width;
  const std::size_t units = model.layout.fc1_units;
  const std::size_t dim = model.config.InputDim();
  const std::size_t classes = model.config.num_classes;
  const std::size_t plane =
      static_cast<std::size_t>(model.config.shape.height) *
      model.config.shape.width;
  const double inv_n = 1.0 / static_cast<double>(n);

  ClientUpdate g;
  g.client_index = model.client_index;
  g.conv_kernels.assign(model.conv_kernels.size(), 0.0);
  g.conv_biases.assign(model.conv_biases.size(), 0.0);
  g.fc1_biases.assign(units, 0.0);
  g.fc2_weights = DenseMatrix(dim, units);
  g.fc2_biases.assign(dim, 0.0);
  g.stub_weights = DenseMatrix(classes, dim);

  const bool sparse = model.fc1_storage() == Storage::kCoo;
  // Dense models accumulate the full FC1 gradient; COO models only the
  // columns their conv output can reach.
  DenseMatrix fc1_grad(units, stored);
  const std::vector<int> channels = ConvChannels(model);

  DenseMatrix dlogits(n, classes);
  for (std::size_t b = 0; b < n; ++b) {
    const std::vector<double> p = Softmax(t.logits.row(b));
    auto d = dlogits.row(b);
    for (std::size_t c = 0; c < classes; ++c) d[c] = p[c] * inv_n;
    d[batch.labels()[b]] -= inv_n;
  }

  DenseMatrix dz(n, dim);
  for (std::size_t c = 0; c < classes; ++c) {
    const auto srow = model.stub_weights.row(c);
    auto grow = g.stub_weights.row(c);
    for (std::size_t b = 0; b < n; ++b) {
      const double d = dlogits.at(b, c);
      const auto z = t.fc2_out.row(b);
      auto dzb = dz.row(b);
      for (std::size_t j = 0; j < dim; ++j) {
        grow[j] += d * z[j];
        dzb[j] += srow[j] * d;
      }
    }
  }

  DenseMatrix dpre(n, units);
  for (std::size_t j = 0; j < dim; ++j) {
    const auto wrow = model.fc2_weights.row(j);
    auto grow = g.fc2_weights.row(j);
    for (std::size_t b = 0; b < n; ++b) {
      const double d = dz.at(b, j);
      g.fc2_biases[j] += d;
      const auto act = t.fc1_act.row(b);
      auto dp = dpre.row(b);
      for (std::size_t i = 0; i < units; ++i) {
        grow[i] += d * act[i];
        dp[i] += wrow[i] * d;
      }
    }
  }
  for (std::size_t b = 0; b < n; ++b) {
    const auto pre = t.fc1_preact.row(b);
    auto dp = dpre.row(b);
    for (std::size_t i = 0; i < units; ++i) {
      if (!(pre[i] > 0.0)) dp[i] = 0.0;
      g.fc1_biases[i] += dp[i];
    }
  }

  for (std::size_t j0 = 0; j0 < stored; j0 += kColumnTile) {
    const std::size_t j1 = std::min(j0 + kColumnTile, stored);
    for (std::size_t i = 0; i < units; ++i) {
      auto grow = fc1_grad.row(i);
      for (std::size_t b = 0; b < n; ++b) {
        const double d = dpre.at(b, i);
        if (d == 0.0) continue;
        const auto h = t.conv_out.row(b);
        for (std::size_t j = j0; j < j1; ++j) grow[j] += d * h[j];
      }
    }
  }

  if (!model.conv_bypass) {
    DenseMatrix dh(n, stored);
    if (const auto* w = std::get_if<DenseMatrix>(&model.fc1_weights)) {
      for (std::size_t j0 = 0; j0 < stored; j0 += kColumnTile) {
        const std::size_t j1 = std::min(j0 + kColumnTile, stored);
        for (std::size_t i = 0; i < units; ++i) {
          const auto row = w->row(i);
          for (std::size_t b = 0; b < n; ++b) {
            const double d = dpre.at(b, i);
            if (d == 0.0) continue;
            auto dhb = dh.row(b);
            for (std::size_t j = j0; j < j1; ++j) dhb[j] += row[j] * d;
          }
        }
      }
    } else {
      const auto& coo = std::get<SparseMatrixCOO>(model.fc1_weights);
      const auto ri = coo.row_indices();
      const std::vector<std::size_t> ci = StoredColumns(coo, map);
      const auto v = coo.values();
      for (std::size_t b = 0; b < n; ++b) {
        const auto dp = dpre.row(b);
        auto dhb = dh.row(b);
        for (std::size_t k = 0; k < coo.nnz(); ++k) {
          if (ci[k] != ColumnMap::kOutside) dhb[ci[k]] += v[k] * dp[ri[k]];
        }
      }
    }
    for (std::size_t b = 0; b < n; ++b) {
      const auto dhb = dh.row(b);
      for (int o : channels) {
        ConvolveChannelBackward(model, o, batch.image(b),
                                dhb.subspan(map.ToStored(o * plane), plane),
                                g);
      }
    }
  }

  if (sparse) {
    // Row-major traversal of ascending ranges yields sorted coordinates.
    std::vector<std::int64_t> ri, ci;
    std::vector<double> vals;
    ri.reserve(units * stored);
    ci.reserve(units * stored);
    vals.reserve(units * stored);
    for (std::size_t i = 0; i < units; ++i) {
      const auto row = fc1_grad.row(i);
      std::size_t k = 0;
      for (const auto& [first, last] : map.ranges) {
        for (std::size_t j = first; j < last; ++j, ++k) {
          if (row[k] != 0.0) {
            ri.push_back(static_cast<std::int64_t>(i));
            ci.push_back(static_cast<std::int64_t>(j));
            vals.push_back(row[k]);
          }
        }
      }
    }
    g.fc1_weights = SparseMatrixCOO(units, cols, std::move(ri), std::move(ci),
                                    std::move(vals));
  } else {
    g.fc1_weights = std::move(fc1_grad);
  }
  if (trace_out != nullptr) {
    t.conv_out = ExpandColumns(t.conv_out, map, cols);
    *trace_out = std::move(t);
  }
  return g;
}

void ApplyGradientStep(MaliciousModel& model, const ClientUpdate& grad,
                       double lr, bool freeze_conv) {
  if (!freeze_conv) {
    AddVector(model.conv_kernels, grad.conv_kernels, -lr);
    AddVector(model.conv_biases, grad.conv_biases, -lr);
  }
  model.fc1_weights = AddFc1(model.fc1_weights, grad.fc1_weights, -lr);
  AddVector(model.fc1_biases, grad.fc1_biases, -lr);
  AddMatrix(model.fc2_weights, grad.fc2_weights, -lr);
  AddVector(model.fc2_biases, grad.fc2_biases, -lr);
  AddMatrix(model.stub_weights, grad.stub_weights, -lr);
}

ClientUpdate FedAvgUpdate(const MaliciousModel& model, const ImageBatch& batch,
                          int local_steps, double lr,
                          ForwardTrace* first_trace) {
  if (local_steps < 1 || !(lr > 0.0)) {
    throw Error(ErrorCode::kConfigError,
                "FedAVG needs local_steps >= 1 and lr > 0");
  }
  ClientUpdate total = Backward(model, batch, first_trace);
  std::fill(total.conv_kernels.begin(), total.conv_kernels.end(), 0.0);
  std::fill(total.conv_biases.begin(), total.conv_biases.end(), 0.0);
  if (local_steps == 1) return total;
  MaliciousModel local = model;
  ClientUpdate step = total;
  for (int s = 1; s < local_steps; ++s) {
    ApplyGradientStep(local, step, lr, /*freeze_conv=*/true);
    step = Backward(local, batch);
    std::fill(step.conv_kernels.begin(), step.conv_kernels.end(), 0.0);
    std::fill(step.conv_biases.begin(), step.conv_biases.end(), 0.0);
    AddInto(total, step);
  }
  return total;
}

}  // namespace llsim
