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

#include "llsim/experiment.h"

#include <algorithm>
#include <cstdio>
#include <exception>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <thread>
#include <tuple>
#include <variant>

#include "llsim/client.h"
#include "llsim/error.h"
#include "llsim/rng.h"
#include "llsim/secure_agg.h"

namespace llsim {
namespace {

constexpr std::uint64_t kCalibrationStream = 1;
constexpr std::uint64_t kShuffleStream = 2;
constexpr std::uint64_t kClientStreamBase = 1000;

struct RoundData {
  std::vector<ImageBatch> batches;
  CalibrationSample calibration;
};

std::uint64_t StreamSeed(std::uint64_t seed, std::uint64_t stream) {
  return Rng::Derive(seed, stream).Next();
}

RoundData SyntheticData(const ExperimentConfig& cfg) {
  const AttackConfig& a = cfg.attack;
  RoundData data;
  for (int m = 0; m < a.num_clients; ++m) {
    data.batches.push_back(SynthBatch(
        {.seed = StreamSeed(a.seed, kClientStreamBase + m),
         .batch_size = a.batch_size,
         .shape = a.shape,
         .brightness_spread = cfg.brightness_spread,
         .force_max_pixel = cfg.force_max_pixel,
         .num_classes = a.num_classes}));
  }
  data.calibration = Calibrate(SynthBatch(
      {.seed = StreamSeed(a.seed, kCalibrationStream),
       .batch_size = cfg.EffectiveCalibrationSize(),
       .shape = a.shape,
       .brightness_spread = cfg.brightness_spread,
       .force_max_pixel = cfg.force_max_pixel,
       .num_classes = a.num_classes}));
  return data;
}

ImageBatch LoadDataset(const DatasetSpec& spec) {
  switch (spec.kind) {
    case DatasetKind::kIdx:
      return LoadIdx(spec.path, spec.labels_path);
    case DatasetKind::kCifar10:
      return LoadCifarBinary(spec.path, {.label_bytes = 1});
    case DatasetKind::kCifar100:
      return LoadCifarBinary(spec.path, {.label_bytes = 2});
    case DatasetKind::kSynthetic:
      break;
  }
  throw Error(ErrorCode::kConfigError, "dataset: not a file dataset");
}

// Client batches and the calibration sample are disjoint slices of one
// seeded permutation of the file.
RoundData FileData(const ExperimentConfig& cfg, const ImageBatch& all) {
  const AttackConfig& a = cfg.attack;
  const std::size_t needed =
      static_cast<std::size_t>(a.num_clients) * a.batch_size;
  if (all.size() < needed + 2) {
    throw Error(ErrorCode::kConfigError,
                "dataset: " + std::to_string(all.size()) +
                    " images cannot fill " + std::to_string(needed) +
                    " client slots plus a calibration sample");
  }
  std::vector<std::size_t> order(all.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::Derive(a.seed, kShuffleStream);
  for (std::size_t i = order.size() - 1; i > 0; --i) {
    std::swap(order[i], order[rng.Below(i + 1)]);
  }
  RoundData data;
  for (int m = 0; m < a.num_clients; ++m) {
    const auto first = order.begin() + static_cast<std::ptrdiff_t>(m) * a.batch_size;
    data.batches.push_back(
        all.Subset(std::span<const std::size_t>(&*first, a.batch_size)));
  }
  const std::size_t calib =
      std::min<std::size_t>(cfg.EffectiveCalibrationSize(), all.size() - needed);
  data.calibration = Calibrate(
      all.Subset(std::span<const std::size_t>(order.data() + needed, calib)));
  return data;
}

// Runs fn(i) for i in [0, count) on up to `workers` threads and rethrows the
// first failure by index.
template <typename Fn>
void ParallelFor(std::size_t count, int workers, Fn&& fn) {
  std::vector<std::exception_ptr> errors(count);
  const std::size_t pool =
      std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, workers)));
  if (pool <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < pool; ++t) {
    threads.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          fn(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : threads) t.join();
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

struct ClientResult {
  std::optional<MaskedUpdate> masked;
  std::vector<double> flat;
  std::vector<BinRecovery> recoveries;
  std::optional<DenseMatrix> preact;
};

RunResult RunRound(const ExperimentConfig& cfg, const RoundData& data) {
  const AttackConfig& a = cfg.attack;
  const int n = a.num_clients;
  const bool per_client = IsPerClient(a.variant);
  const std::vector<double> cutoffs =
      IsBinning(a.variant) ? BuildBinningCutoffs(data.calibration, a.Fc1Units())
                           : std::vector<double>{};
  const BlockLayout layout = MakeLayout(a);
  const FlatLayout flat_layout = MakeFlatLayout(a);
  std::optional<MaliciousModel> shared_model;
  if (!per_client) shared_model = BuildModel(a, 0, cutoffs);
  std::optional<PairwiseSeeds> seeds;
  if (cfg.sa_enabled) seeds = PairwiseSeeds::Provision(n, a.seed);

  std::optional<Aggregator> aggregator;
  std::vector<double> plain_sum;
  if (cfg.sa_enabled) {
    aggregator.emplace(flat_layout.total, cfg.field, n);
  } else if (!per_client) {
    plain_sum.assign(flat_layout.total, 0.0);
  }

  RunResult result;
  result.config = cfg;
  std::vector<DenseMatrix> preacts;
  const Thresholds exact = Thresholds::Exact();

  // Clients run in waves so that at most `workers` updates are resident;
  // each wave is folded in client order.
  const int workers = cfg.EffectiveWorkers();
  for (int wave = 0; wave < n; wave += workers) {
    const int size = std::min(workers, n - wave);
    std::vector<ClientResult> slots(size);
    ParallelFor(size, workers, [&](std::size_t s) {
      const int m = wave + static_cast<int>(s);
      std::optional<MaliciousModel> own;
      if (per_client) own = BuildModel(a, m, cutoffs);
      const MaliciousModel& model = per_client ? *own : *shared_model;
      const ImageBatch& batch = data.batches[m];
      ForwardTrace trace;
      ClientUpdate update = FedAvgUpdate(model, batch, cfg.local_steps,
                                         cfg.learning_rate, &trace);
      update.client_index = m;
      ClientResult& out = slots[s];
      if (a.variant == Variant::kTrapWeights) {
        out.preact = std::move(trace.fc1_preact);
      }
      if (cfg.sa_enabled) {
        out.masked = Mask(Quantize(update, flat_layout, cfg.field).values, m,
                          *seeds, cfg.field.modulus);
        return;
      }
      std::vector<double> flat = Flatten(update, flat_layout);
      if (per_client) {
        // Without masking the server reads this client's update directly.
        DemuxResult demux = Demux(flat, layout, flat_layout, false);
        out.recoveries =
            ReconstructBinned(demux.blocks[m], demux.bias_grads, exact);
      } else {
        out.flat = std::move(flat);
      }
    });
    for (ClientResult& slot : slots) {
      if (slot.masked) aggregator->Add(*slot.masked);
      if (!slot.flat.empty()) {
        for (std::size_t i = 0; i < plain_sum.size(); ++i) {
          plain_sum[i] += slot.flat[i];
        }
      }
      for (auto& r : slot.recoveries) result.recoveries.push_back(std::move(r));
      if (slot.preact) preacts.push_back(std::move(*slot.preact));
    }
  }

  std::vector<double> aggregate;
  Thresholds eps = exact;
  if (cfg.sa_enabled) {
    aggregate = std::move(*aggregator).Finish().values;
    eps = Thresholds::ForQuantized(n, cfg.field);
  } else {
    aggregate = std::move(plain_sum);
  }
  if (!aggregate.empty()) {
    const DemuxResult demux =
        Demux(aggregate, layout, flat_layout, per_client);
    for (const Fc1Block& block : demux.blocks) {
      std::vector<BinRecovery> rec;
      if (per_client) {
        rec = ReconstructWeightOnly(block, eps);
      } else if (a.variant == Variant::kTrapWeights) {
        rec = ReconstructTrap(block, demux.bias_grads, eps);
      } else {
        rec = ReconstructBinned(block, demux.bias_grads, eps);
      }
      for (auto& r : rec) result.recoveries.push_back(std::move(r));
    }
  }

  result.oracle = a.variant == Variant::kTrapWeights
                      ? ActivationOracle(preacts)
                      : OccupancyOracle(data.batches, cutoffs, layout);
  result.leakage =
      MatchAndScore(result.recoveries, data.batches, MatchTolerances{},
                    &result.oracle);
  result.resources = ComputeResourceReport(a, cfg.sa_enabled);
  return result;
}

// Evaluator-side tuning: the scale in 0.90, 0.91, ..., 0.99 whose
// activation oracle leaks the most images. Ties keep the smaller scale.
// Only the negative entries depend on the scale, so every candidate's
// pre-activations follow from one positive and one negative dot product.
double TuneTrapScale(const AttackConfig& base,
                     const std::vector<ImageBatch>& batches) {
  AttackConfig a = base;
  a.trap_scale = 0.90;
  const MaliciousModel model = BuildModel(a, 0, {});
  const auto& w = std::get<DenseMatrix>(model.fc1_weights);
  const std::size_t units = w.rows();
  const std::size_t dim = w.cols();

  std::vector<DenseMatrix> pos, neg;
  for (const ImageBatch& b : batches) {
    DenseMatrix p(b.size(), units), n(b.size(), units);
    for (std::size_t u = 0; u < units; ++u) {
      const auto row = w.row(u);
      for (std::size_t k = 0; k < b.size(); ++k) {
        const auto x = b.image(k);
        double sp = model.fc1_biases[u], sn = 0.0;
        for (std::size_t j = 0; j < dim; ++j) {
          const double t = row[j] * x[j];
          if (row[j] > 0.0) {
            sp += t;
          } else {
            sn += t;
          }
        }
        p.at(k, u) = sp;
        n.at(k, u) = sn;
      }
    }
    pos.push_back(std::move(p));
    neg.push_back(std::move(n));
  }

  double best_scale = a.trap_scale;
  std::size_t best = 0;
  std::vector<DenseMatrix> preacts(batches.size());
  for (int step = 0; step <= 9; ++step) {
    const double scale = 0.90 + 0.01 * step;
    const double factor = a.trap_scale / scale;
    for (std::size_t m = 0; m < batches.size(); ++m) {
      preacts[m] = pos[m];
      auto out = preacts[m].values();
      const auto nv = neg[m].values();
      for (std::size_t i = 0; i < out.size(); ++i) out[i] += factor * nv[i];
    }
    const std::size_t leaked = ActivationOracle(preacts).leaked_count;
    if (step == 0 || leaked > best) {
      best = leaked;
      best_scale = scale;
    }
  }
  return best_scale;
}

std::string FormatReal(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), fmt, v);
  return buf;
}

}  // namespace

RunResult RunExperiment(const ExperimentConfig& input) {
  input.Validate();
  ExperimentConfig cfg = input;
  RoundData data;
  if (cfg.dataset.kind == DatasetKind::kSynthetic) {
    data = SyntheticData(cfg);
  } else {
    const ImageBatch all = LoadDataset(cfg.dataset);
    cfg.attack.shape = all.shape();
    const auto labels = all.labels();
    const int max_label = *std::max_element(labels.begin(), labels.end());
    cfg.attack.num_classes = std::max(cfg.attack.num_classes, max_label + 1);
    cfg.attack.Validate();
    data = FileData(cfg, all);
  }

  if (cfg.attack.variant == Variant::kTrapWeights && cfg.trap_scale_auto) {
    cfg.attack.trap_scale = TuneTrapScale(cfg.attack, data.batches);
  }
  RunResult result = RunRound(cfg, data);
  if (cfg.timing) {
    const UpdateTiming t = TimeUpdate(result.config.attack, cfg.payload,
                                      cfg.timing_repetitions);
    switch (cfg.attack.variant) {
      case Variant::kMandrakeSparse:
        result.update_seconds = t.sparse;
        break;
      case Variant::kMandrakeDense:
        result.update_seconds = t.dense;
        break;
      default:
        result.update_seconds = t.rtf;
        break;
    }
  }
  return result;
}

std::vector<ExperimentConfig> SweepCells(const ExperimentConfig& cfg) {
  const std::vector<Variant> variants =
      cfg.sweep_variants.empty() ? std::vector<Variant>{cfg.attack.variant}
                                 : cfg.sweep_variants;
  const std::vector<int> clients =
      cfg.sweep_clients.empty() ? std::vector<int>{cfg.attack.num_clients}
                                : cfg.sweep_clients;
  const std::vector<double> ratios =
      cfg.sweep_ratios.empty()
          ? std::vector<double>{cfg.attack.neurons_per_image}
          : cfg.sweep_ratios;
  std::vector<ExperimentConfig> cells;
  for (Variant v : variants) {
    for (int n : clients) {
      for (double r : ratios) {
        ExperimentConfig cell = cfg;
        cell.attack.variant = v;
        cell.attack.num_clients = n;
        cell.attack.neurons_per_image = r;
        cell.sweep_variants.clear();
        cell.sweep_clients.clear();
        cell.sweep_ratios.clear();
        cells.push_back(std::move(cell));
      }
    }
  }
  std::sort(cells.begin(), cells.end(),
            [](const ExperimentConfig& x, const ExperimentConfig& y) {
              return std::make_tuple(x.attack.variant, x.attack.num_clients,
                                     x.attack.neurons_per_image) <
                     std::make_tuple(y.attack.variant, y.attack.num_clients,
                                     y.attack.neurons_per_image);
            });
  cells.erase(std::unique(cells.begin(), cells.end(),
                          [](const ExperimentConfig& x,
                             const ExperimentConfig& y) {
                            return x.attack.variant == y.attack.variant &&
                                   x.attack.num_clients ==
                                       y.attack.num_clients &&
                                   x.attack.neurons_per_image ==
                                       y.attack.neurons_per_image;
                          }),
              cells.end());
  return cells;
}

void CheckSweepBudget(const std::vector<ExperimentConfig>& cells) {
  for (const ExperimentConfig& cell : cells) {
    const AttackConfig& a = cell.attack;
    const std::uint64_t bytes = ModelMemoryBytes(a);
    if (bytes > a.memory_budget_bytes) {
      throw Error(ErrorCode::kBudgetExceeded,
                  "cell variant=" + std::string(VariantName(a.variant)) +
                      " N=" + std::to_string(a.num_clients) +
                      " ratio=" + FormatReal("%g", a.neurons_per_image) +
                      " needs " + std::to_string(bytes) +
                      " bytes, budget is " +
                      std::to_string(a.memory_budget_bytes));
    }
  }
}

std::vector<RunResult> RunSweep(const ExperimentConfig& cfg) {
  cfg.Validate();
  std::vector<ExperimentConfig> cells = SweepCells(cfg);
  for (const auto& cell : cells) cell.Validate();
  CheckSweepBudget(cells);

  const int workers = cfg.EffectiveWorkers();
  const bool parallel_cells = cells.size() > 1 && workers > 1;
  std::vector<RunResult> results(cells.size());
  ParallelFor(cells.size(), parallel_cells ? workers : 1, [&](std::size_t i) {
    ExperimentConfig cell = cells[i];
    cell.timing = false;
    if (parallel_cells) cell.workers = 1;
    results[i] = RunExperiment(cell);
    results[i].config.timing = cells[i].timing;
  });
  // Timing runs alone on this thread once the pool has drained.
  if (cfg.timing) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      ExperimentConfig cell = results[i].config;
      cell.timing = true;
      const UpdateTiming t = TimeUpdate(cell.attack, cell.payload,
                                        cell.timing_repetitions);
      const Variant v = cell.attack.variant;
      results[i].update_seconds = v == Variant::kMandrakeSparse ? t.sparse
                                  : v == Variant::kMandrakeDense ? t.dense
                                                                 : t.rtf;
    }
  }
  return results;
}

std::string CsvHeader() {
  return "variant,N,B,ratio,dataset,sa,leakage_rate,oracle_rate,mean_ssim,"
         "s2c_bytes,c2s_bytes,update_seconds,seed";
}

std::string CsvRow(const RunResult& r) {
  const AttackConfig& a = r.config.attack;
  std::ostringstream os;
  os << VariantName(a.variant) << ',' << a.num_clients << ',' << a.batch_size
     << ',' << FormatReal("%g", a.neurons_per_image) << ','
     << r.config.dataset.Name() << ',' << (r.config.sa_enabled ? "on" : "off")
     << ',' << FormatReal("%.6f", r.leakage.leakage_rate) << ','
     << FormatReal("%.6f", r.oracle.rate()) << ','
     << FormatReal("%.6f", r.leakage.mean_ssim) << ','
     << r.resources.server_to_client_bytes << ','
     << r.resources.client_to_server_bytes << ','
     << (r.update_seconds ? FormatReal("%.6f", *r.update_seconds) : "NA")
     << ',' << a.seed;
  return os.str();
}

std::string ToCsv(const std::vector<RunResult>& results) {
  std::string out = CsvHeader() + "\n";
  for (const auto& r : results) out += CsvRow(r) + "\n";
  return out;
}

std::vector<SizeRow> SizeTable() {
  struct Dataset {
    const char* name;
    ImageShape shape;
  };
  const Dataset datasets[] = {
      {"MNIST", {1, 28, 28}},
      {"CIFAR-100", {3, 32, 32}},
      {"TinyImageNet", {3, 64, 64}},
      {"ImageNet", {3, 256, 256}},
  };
  std::vector<SizeRow> rows;
  for (const Dataset& d : datasets) {
    for (int n : {100, 1000}) {
      AttackConfig a;
      a.num_clients = n;
      a.batch_size = 64;
      a.neurons_per_image = 4.0;
      a.shape = d.shape;
      SizeRow row{d.name, n};
      a.variant = Variant::kRtfDense;
      row.rtf_bytes = ComputeResourceReport(a).server_to_client_bytes;
      a.variant = Variant::kMandrakeDense;
      row.dense_bytes = ComputeResourceReport(a).server_to_client_bytes;
      a.variant = Variant::kMandrakeSparse;
      const ResourceReport sparse = ComputeResourceReport(a);
      row.sparse_bytes = sparse.server_to_client_bytes;
      row.sparse_csr_bytes = sparse.server_to_client_csr_bytes;
      rows.push_back(row);
    }
  }
  return rows;
}

std::string SizeTableCsv(const std::vector<SizeRow>& rows) {
  std::ostringstream os;
  os << "dataset,N,rtf_mb,dense_mb,sparse_mb,sparse_csr_mb,rtf_bytes,"
        "dense_bytes,sparse_bytes,sparse_csr_bytes\n";
  for (const SizeRow& r : rows) {
    os << r.dataset << ',' << r.num_clients << ',' << FormatMiB(r.rtf_bytes)
       << ',' << FormatMiB(r.dense_bytes) << ',' << FormatMiB(r.sparse_bytes)
       << ',' << FormatMiB(r.sparse_csr_bytes) << ',' << r.rtf_bytes << ','
       << r.dense_bytes << ',' << r.sparse_bytes << ',' << r.sparse_csr_bytes
       << '\n';
  }
  return os.str();
}

void WriteTextFile(const std::filesystem::path& path, const std::string& text) {
  std::error_code ec;
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary);
  if (!out || !(out << text) || !out.flush()) {
    throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  }
}

}  // namespace llsim
