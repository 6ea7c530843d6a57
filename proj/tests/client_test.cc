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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "llsim/error.h"
#include "oracles.h"

namespace llsim {
namespace {

struct Instance {
  MaliciousModel model;
  ImageBatch batch;
};

// Two clients, B = 2, 8x8x1 images, dense FC1, cutoffs from a calibration
// sample so that both images activate some units.
Instance SmallInstance(int client, std::uint64_t seed) {
  const AttackConfig cfg{.num_clients = 2, .batch_size = 2, .shape = {1, 8, 8},
                         .variant = Variant::kMandrakeDense, .seed = seed};
  const auto calib = Calibrate(
      SynthBatch({.seed = seed + 100, .batch_size = 64, .shape = cfg.shape}));
  return {BuildModel(cfg, client, BuildBinningCutoffs(calib, cfg.Fc1Units())),
          SynthBatch({.seed = seed, .batch_size = 2, .shape = cfg.shape})};
}

// Central differences of the reference loss over every parameter; returns
// the worst relative error against the analytic gradient.
double WorstRelativeError(MaliciousModel model, const ImageBatch& batch) {
  const std::vector<double> analytic =
      Flatten(Backward(model, batch), MakeFlatLayout(model.config));
  std::vector<double> params = FlattenParameters(model);
  EXPECT_EQ(params.size(), analytic.size());
  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double keep = params[i];
    params[i] = keep + h;
    AssignParameters(model, params);
    const double up = oracle::Loss(model, batch);
    params[i] = keep - h;
    AssignParameters(model, params);
    const double down = oracle::Loss(model, batch);
    params[i] = keep;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max({std::abs(numeric), std::abs(analytic[i]), 1e-4});
    worst = std::max(worst, std::abs(numeric - analytic[i]) / scale);
  }
  AssignParameters(model, params);
  return worst;
}

TEST(Backward, MatchesFiniteDifferencesOnAttackModel) {
  for (int client = 0; client < 2; ++client) {
    const Instance in = SmallInstance(client, 3);
    EXPECT_LT(WorstRelativeError(in.model, in.batch), 1e-4);
  }
}

TEST(Backward, MatchesFiniteDifferencesOnRandomParameters) {
  Instance in = SmallInstance(1, 5);
  std::vector<double> params = FlattenParameters(in.model);
  Rng rng(17);
  for (double& p : params) p += rng.Uniform(-0.05, 0.05);
  AssignParameters(in.model, params);
  EXPECT_LT(WorstRelativeError(in.model, in.batch), 1e-4);
}

TEST(Forward, LossMatchesReference) {
  const Instance in = SmallInstance(0, 7);
  EXPECT_NEAR(Forward(in.model, in.batch).loss, oracle::Loss(in.model, in.batch),
              1e-12);
}

TEST(Forward, HandEvaluatedPreactivations) {
  const AttackConfig cfg{.num_clients = 1, .batch_size = 1,
                         .shape = {1, 2, 2}, .neurons_per_image = 2.0};
  const MaliciousModel m = BuildModel(cfg, 0, std::vector<double>{0.0, 0.5});
  const ImageBatch batch({1, 2, 2}, std::vector<double>(4, 0.3), {0});
  const ForwardTrace t = Forward(m, batch);
  EXPECT_NEAR(t.fc1_preact.at(0, 0), 0.3, 1e-15);
  EXPECT_NEAR(t.fc1_preact.at(0, 1), -0.2, 1e-15);
  EXPECT_NEAR(t.fc1_act.at(0, 0), 0.3, 1e-15);
  EXPECT_EQ(t.fc1_act.at(0, 1), 0.0);

  const ImageBatch dark({1, 2, 2}, std::vector<double>(4, 0.0), {0});
  const MaliciousModel raised =
      BuildModel(cfg, 0, std::vector<double>{0.1, 0.5});
  const ForwardTrace none = Forward(raised, dark);
  for (double a : none.fc1_act.values()) EXPECT_EQ(a, 0.0);
}

TEST(Forward, ConvOutputIsImageInOwnBlock) {
  for (Variant v : {Variant::kMandrakeSparse, Variant::kMandrakeDense}) {
    const AttackConfig cfg{.num_clients = 3, .batch_size = 4,
                           .shape = {3, 5, 7}, .variant = v};
    const auto calib = Calibrate(SynthBatch({.batch_size = 50, .shape = cfg.shape}));
    const auto cutoffs = BuildBinningCutoffs(calib, cfg.Fc1Units());
    const ImageBatch batch = SynthBatch({.seed = 1, .batch_size = 4,
                                         .shape = cfg.shape});
    const std::size_t dim = cfg.InputDim();
    for (int m = 0; m < 3; ++m) {
      const ForwardTrace t = Forward(BuildModel(cfg, m, cutoffs), batch);
      for (std::size_t b = 0; b < 4; ++b) {
        for (std::size_t j = 0; j < t.conv_out.cols(); ++j) {
          ASSERT_EQ(t.conv_out.at(b, j),
                    j / dim == static_cast<std::size_t>(m)
                        ? batch.image(b)[j % dim]
                        : 0.0);
        }
      }
      for (std::size_t k = 0; k < t.fc1_act.size(); ++k) {
        ASSERT_EQ(t.fc1_act.values()[k], std::max(t.fc1_preact.values()[k], 0.0));
      }
    }
  }
}

TEST(Forward, ShapeMismatch) {
  const Instance in = SmallInstance(0, 1);
  const ImageBatch wrong = SynthBatch({.batch_size = 2, .shape = {1, 4, 4}});
  EXPECT_THROW(Forward(in.model, wrong), Error);
  EXPECT_THROW(Backward(in.model, wrong), Error);
}

TEST(Backward, SingleImageRowOverBiasIsImage) {
  const AttackConfig cfg{.num_clients = 1, .batch_size = 1,
                         .shape = {3, 4, 4}, .neurons_per_image = 1.0};
  const ImageBatch batch = SynthBatch({.seed = 2, .batch_size = 1,
                                       .shape = cfg.shape});
  const MaliciousModel m = BuildModel(cfg, 0, std::vector<double>{0.0});
  const ClientUpdate g = Backward(m, batch);
  const auto w = Densify(std::get<SparseMatrixCOO>(g.fc1_weights));
  ASSERT_NE(g.fc1_biases[0], 0.0);
  for (std::size_t j = 0; j < cfg.InputDim(); ++j) {
    EXPECT_NEAR(w.at(0, j) / g.fc1_biases[0], batch.image(0)[j], 1e-14);
  }
}

TEST(Backward, DeadImageLeavesNoFc1Gradient) {
  const AttackConfig cfg{.num_clients = 1, .batch_size = 1,
                         .shape = {1, 4, 4}, .neurons_per_image = 3.0,
                         .variant = Variant::kMandrakeDense};
  const ImageBatch batch({1, 4, 4}, std::vector<double>(16, 0.2), {1});
  const MaliciousModel m = BuildModel(cfg, 0, std::vector<double>{0.3, 0.5, 0.7});
  const ClientUpdate g = Backward(m, batch);
  for (double v : std::get<DenseMatrix>(g.fc1_weights).values()) EXPECT_EQ(v, 0.0);
  for (double v : g.fc1_biases) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearInBatchComposition) {
  const AttackConfig cfg{.num_clients = 2, .batch_size = 5, .shape = {1, 6, 6},
                         .variant = Variant::kMandrakeDense};
  const auto calib = Calibrate(SynthBatch({.batch_size = 80, .shape = cfg.shape}));
  const MaliciousModel m =
      BuildModel(cfg, 1, BuildBinningCutoffs(calib, cfg.Fc1Units()));
  const ImageBatch a = SynthBatch({.seed = 1, .batch_size = 2, .shape = cfg.shape});
  const ImageBatch b = SynthBatch({.seed = 2, .batch_size = 3, .shape = cfg.shape});
  const FlatLayout layout = MakeFlatLayout(cfg);
  const auto ga = Flatten(Backward(m, a), layout);
  const auto gb = Flatten(Backward(m, b), layout);
  const auto gab = Flatten(Backward(m, ImageBatch::Concat(a, b)), layout);
  for (std::size_t i = 0; i < gab.size(); ++i) {
    ASSERT_NEAR(gab[i], (2 * ga[i] + 3 * gb[i]) / 5, 1e-13);
  }
}

TEST(Backward, GradientConfinedToClientBlock) {
  const AttackConfig cfg{.num_clients = 3, .batch_size = 4, .shape = {1, 6, 6}};
  const auto calib = Calibrate(SynthBatch({.batch_size = 80, .shape = cfg.shape}));
  const auto cutoffs = BuildBinningCutoffs(calib, cfg.Fc1Units());
  const ImageBatch batch = SynthBatch({.seed = 4, .batch_size = 4, .shape = cfg.shape});
  for (int m = 0; m < 3; ++m) {
    const ClientUpdate g = Backward(BuildModel(cfg, m, cutoffs), batch);
    const auto& w = std::get<SparseMatrixCOO>(g.fc1_weights);
    for (auto c : w.col_indices()) {
      EXPECT_EQ(c / 36, m);
    }
  }
}

// Row i of the FC1 gradient is sum over images brighter than c_i of
// g_x * x / B, where g_x is read off that image's own one-image gradient.
TEST(Backward, ReluGatingSelectsBrighterImages) {
  const AttackConfig cfg{.num_clients = 1, .batch_size = 6, .shape = {1, 5, 5},
                         .variant = Variant::kMandrakeDense};
  const auto calib = Calibrate(SynthBatch({.batch_size = 90, .shape = cfg.shape}));
  const auto cutoffs = BuildBinningCutoffs(calib, cfg.Fc1Units());
  const MaliciousModel m = BuildModel(cfg, 0, cutoffs);
  const ImageBatch batch = SynthBatch({.seed = 6, .batch_size = 6, .shape = cfg.shape});
  std::vector<double> g(6);
  for (std::size_t b = 0; b < 6; ++b) {
    const std::size_t idx[] = {b};
    const ClientUpdate one = Backward(m, batch.Subset(idx));
    // Unit 0 has the lowest cutoff; g_x is the same for every active unit.
    const auto top = std::max_element(one.fc1_biases.begin(), one.fc1_biases.end(),
                                      [](double x, double y) {
                                        return std::abs(x) < std::abs(y);
                                      });
    g[b] = *top;
  }
  const ClientUpdate full = Backward(m, batch);
  const auto& w = std::get<DenseMatrix>(full.fc1_weights);
  for (std::size_t i = 0; i < cfg.Fc1Units(); ++i) {
    for (std::size_t j = 0; j < cfg.InputDim(); ++j) {
      double expect = 0.0;
      for (std::size_t b = 0; b < 6; ++b) {
        if (oracle::Mean(batch.image(b)) > cutoffs[i]) {
          expect += g[b] * batch.image(b)[j] / 6;
        }
      }
      ASSERT_NEAR(w.at(i, j), expect, 1e-14) << "unit " << i;
    }
  }
}

TEST(Backward, SparseAndDenseStorageAgree) {
  AttackConfig cfg{.num_clients = 2, .batch_size = 3, .shape = {3, 4, 4}};
  const auto calib = Calibrate(SynthBatch({.batch_size = 60, .shape = cfg.shape}));
  const auto cutoffs = BuildBinningCutoffs(calib, cfg.Fc1Units());
  const ImageBatch batch = SynthBatch({.seed = 9, .batch_size = 3, .shape = cfg.shape});
  const ClientUpdate s = Backward(BuildModel(cfg, 1, cutoffs), batch);
  cfg.variant = Variant::kMandrakeDense;
  const ClientUpdate d = Backward(BuildModel(cfg, 1, cutoffs), batch);
  EXPECT_EQ(s.fc1_storage(), Storage::kCoo);
  const FlatLayout layout = MakeFlatLayout(cfg);
  const auto fs = Flatten(s, layout);
  const auto fd = Flatten(d, layout);
  for (std::size_t i = 0; i < fs.size(); ++i) ASSERT_NEAR(fs[i], fd[i], 1e-15);
}

TEST(FedAvgUpdate, OneStepEqualsBackwardAndConvIsFrozen) {
  const Instance in = SmallInstance(1, 11);
  const ClientUpdate g = Backward(in.model, in.batch);
  const ClientUpdate f = FedAvgUpdate(in.model, in.batch, 1, 0.01);
  EXPECT_EQ(f.fc1_weights, g.fc1_weights);
  EXPECT_EQ(f.fc1_biases, g.fc1_biases);
  EXPECT_EQ(f.fc2_weights, g.fc2_weights);
  EXPECT_EQ(f.fc2_biases, g.fc2_biases);
  EXPECT_EQ(f.stub_weights, g.stub_weights);
  for (double v : f.conv_kernels) EXPECT_EQ(v, 0.0);
  for (double v : f.conv_biases) EXPECT_EQ(v, 0.0);
}

TEST(FedAvgUpdate, MultiStepIsParameterDeltaOverLr) {
  const Instance in = SmallInstance(0, 12);
  const double lr = 0.01;
  const ClientUpdate f = FedAvgUpdate(in.model, in.batch, 4, lr);
  MaliciousModel local = in.model;
  for (int s = 0; s < 4; ++s) {
    ApplyGradientStep(local, Backward(local, in.batch), lr, true);
  }
  const auto before = FlattenParameters(in.model);
  const auto after = FlattenParameters(local);
  const auto got = Flatten(f, MakeFlatLayout(in.model.config));
  for (std::size_t i = 0; i < got.size(); ++i) {
    ASSERT_NEAR(got[i], (before[i] - after[i]) / lr, 1e-9);
  }
  for (double v : f.conv_kernels) EXPECT_EQ(v, 0.0);
}

TEST(FlatLayout, CoversEveryTensor) {
  const AttackConfig cfg{.num_clients = 3, .batch_size = 2, .shape = {3, 4, 4}};
  const FlatLayout l = MakeFlatLayout(cfg);
  const ParameterCounts p = CountParameters(cfg);
  EXPECT_EQ(l.total, p.Total() + cfg.num_classes * cfg.InputDim());
  EXPECT_EQ(l.conv_kernels, 0u);
  EXPECT_LT(l.fc1_weights, l.fc1_biases);
  EXPECT_EQ(l.fc1_cols, 3u * 48);
}

TEST(FlatLayout, AssignInvertsFlatten) {
  Instance in = SmallInstance(0, 2);
  std::vector<double> p = FlattenParameters(in.model);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] += 0.001 * static_cast<double>(i % 7);
  AssignParameters(in.model, p);
  EXPECT_EQ(FlattenParameters(in.model), p);
}

}  // namespace
}  // namespace llsim
