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

#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "llsim/config.h"
#include "llsim/error.h"
#include "llsim/experiment.h"
#include "llsim/secure_agg.h"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

struct Overrides {
  std::string config_file;
  std::map<std::string, std::string> values;
};

void AddConfigOptions(CLI::App* sub, Overrides& ov) {
  sub->add_option("--config", ov.config_file, "key=value configuration file");
  for (const std::string& key : llsim::KnownConfigKeys()) {
    sub->add_option("--" + key, ov.values[key], "override for '" + key + "'");
  }
}

llsim::ExperimentConfig ResolveConfig(const Overrides& ov) {
  llsim::ExperimentConfig cfg;
  if (!ov.config_file.empty()) {
    llsim::ApplyConfig(cfg, llsim::LoadConfigFile(ov.config_file));
  }
  llsim::ConfigMap given;
  for (const auto& [key, value] : ov.values) {
    if (!value.empty()) given[key] = value;
  }
  llsim::ApplyConfig(cfg, given);
  return cfg;
}

void Emit(const llsim::ExperimentConfig& cfg, const std::string& csv) {
  if (cfg.output.empty()) {
    std::cout << csv;
  } else {
    llsim::WriteTextFile(cfg.output, csv);
  }
}

bool Report(const std::string& name, bool pass, const std::string& detail) {
  std::printf("%s %s: %s\n", pass ? "PASS" : "FAIL", name.c_str(),
              detail.c_str());
  return pass;
}

// Quick end-to-end checks that need no data files.
int SelfTest() {
  bool ok = true;

  const auto rows = llsim::SizeTable();
  const auto& cifar = rows[3];  // CIFAR-100, N = 1000
  const double rtf = llsim::BytesToMiB(cifar.rtf_bytes);
  const double sparse = llsim::BytesToMiB(cifar.sparse_bytes);
  ok &= Report("size-table", std::abs(rtf / 6000.99 - 1) < 0.02 &&
                                 std::abs(sparse / 18.33 - 1) < 0.02,
               llsim::FormatMiB(cifar.rtf_bytes) + " MiB vs " +
                   llsim::FormatMiB(cifar.sparse_bytes) + " MiB");

  const std::vector<double> update = {0.25, -1.5, 0.0, 3.0};
  const llsim::FieldParams fp;
  const auto seeds = llsim::PairwiseSeeds::Provision(3, 7);
  std::vector<llsim::MaskedUpdate> masked;
  for (int m = 0; m < 3; ++m) {
    masked.push_back(llsim::Mask(llsim::Quantize(update, fp).values, m, seeds,
                                 fp.modulus));
  }
  const auto agg = llsim::Aggregate(masked, fp, 3);
  double err = 0.0;
  for (std::size_t i = 0; i < update.size(); ++i) {
    err = std::max(err, std::abs(agg.values[i] - 3 * update[i]));
  }
  ok &= Report("secure-aggregation", err <= 3 * std::ldexp(1.0, -25),
               "max error " + std::to_string(err));

  llsim::ExperimentConfig cfg;
  cfg.attack.num_clients = 4;
  cfg.attack.batch_size = 8;
  cfg.attack.shape = {3, 16, 16};
  cfg.sa_enabled = false;
  cfg.calibration_size = 256;
  const llsim::RunResult r = llsim::RunExperiment(cfg);
  ok &= Report("oracle-equivalence", r.leakage.leaked == r.oracle.leaked,
               std::to_string(r.leakage.leaked_count) + " leaked, oracle " +
                   std::to_string(r.oracle.leaked_count));
  return ok ? 0 : kExitRuntime;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Linear-layer leakage attack simulator"};
  app.require_subcommand(1);
  Overrides run_ov, sweep_ov;
  CLI::App* run = app.add_subcommand("run", "run one experiment, print CSV");
  AddConfigOptions(run, run_ov);
  CLI::App* sweep =
      app.add_subcommand("sweep", "run the cartesian product of sweep axes");
  AddConfigOptions(sweep, sweep_ov);
  CLI::App* size =
      app.add_subcommand("size-table", "model-size table, arithmetic only");
  std::string size_output;
  size->add_option("--output", size_output, "CSV path (default stdout)");
  CLI::App* self = app.add_subcommand("self-test", "quick built-in checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (run->parsed()) {
      const llsim::ExperimentConfig cfg = ResolveConfig(run_ov);
      Emit(cfg, llsim::ToCsv({llsim::RunExperiment(cfg)}));
    } else if (sweep->parsed()) {
      const llsim::ExperimentConfig cfg = ResolveConfig(sweep_ov);
      Emit(cfg, llsim::ToCsv(llsim::RunSweep(cfg)));
    } else if (size->parsed()) {
      const std::string csv = llsim::SizeTableCsv(llsim::SizeTable());
      if (size_output.empty()) {
        std::cout << csv;
      } else {
        llsim::WriteTextFile(size_output, csv);
      }
    } else if (self->parsed()) {
      return SelfTest();
    }
  } catch (const llsim::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return e.code() == llsim::ErrorCode::kConfigError ? kExitConfig
                                                      : kExitRuntime;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return 0;
}
