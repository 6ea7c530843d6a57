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

#include "llsim/config.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <sstream>
#include <thread>

#include "llsim/error.h"

namespace llsim {
namespace {

[[noreturn]] void Fail(const std::string& key, const std::string& why) {
  throw Error(ErrorCode::kConfigError, key + ": " + why);
}

std::string Trim(const std::string& s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return "";
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

template <typename T>
T ParseInteger(const std::string& key, const std::string& value) {
  T out{};
  const char* end = value.data() + value.size();
  const auto [ptr, ec] = std::from_chars(value.data(), end, out);
  if (ec != std::errc() || ptr != end) {
    Fail(key, "expected an integer, got '" + value + "'");
  }
  return out;
}

double ParseReal(const std::string& key, const std::string& value) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(value, &used);
  } catch (const std::exception&) {
    Fail(key, "expected a number, got '" + value + "'");
  }
  if (used != value.size() || !std::isfinite(out)) {
    Fail(key, "expected a number, got '" + value + "'");
  }
  return out;
}

bool ParseBool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "on" || value == "yes") {
    return true;
  }
  if (value == "false" || value == "0" || value == "off" || value == "no") {
    return false;
  }
  Fail(key, "expected true/false, got '" + value + "'");
}

std::vector<std::string> SplitList(const std::string& key,
                                   const std::string& value) {
  std::vector<std::string> items;
  std::stringstream ss(value);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = Trim(item);
    if (item.empty()) Fail(key, "empty list element");
    items.push_back(item);
  }
  if (items.empty()) Fail(key, "sweep axis is empty");
  return items;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&,
                                  const std::string&)>;

const std::map<std::string, Setter>& Setters() {
  static const auto* setters = new std::map<std::string, Setter>{
      {"num_clients",
       [](auto& c, auto& k, auto& v) { c.attack.num_clients = ParseInteger<int>(k, v); }},
      {"batch_size",
       [](auto& c, auto& k, auto& v) { c.attack.batch_size = ParseInteger<int>(k, v); }},
      {"channels",
       [](auto& c, auto& k, auto& v) { c.attack.shape.channels = ParseInteger<int>(k, v); }},
      {"height",
       [](auto& c, auto& k, auto& v) { c.attack.shape.height = ParseInteger<int>(k, v); }},
      {"width",
       [](auto& c, auto& k, auto& v) { c.attack.shape.width = ParseInteger<int>(k, v); }},
      {"ratio",
       [](auto& c, auto& k, auto& v) { c.attack.neurons_per_image = ParseReal(k, v); }},
      {"kernel_size",
       [](auto& c, auto& k, auto& v) { c.attack.kernel_size = ParseInteger<int>(k, v); }},
      {"variant",
       [](auto& c, auto&, auto& v) { c.attack.variant = ParseVariant(v); }},
      {"trap_scale",
       [](auto& c, auto& k, auto& v) {
         c.trap_scale_auto = v == "auto";
         if (!c.trap_scale_auto) c.attack.trap_scale = ParseReal(k, v);
       }},
      {"num_classes",
       [](auto& c, auto& k, auto& v) { c.attack.num_classes = ParseInteger<int>(k, v); }},
      {"seed",
       [](auto& c, auto& k, auto& v) { c.attack.seed = ParseInteger<std::uint64_t>(k, v); }},
      {"memory_budget_bytes",
       [](auto& c, auto& k, auto& v) {
         c.attack.memory_budget_bytes = ParseInteger<std::uint64_t>(k, v);
       }},
      {"dataset", [](auto& c, auto&, auto& v) { c.dataset = ParseDataset(v); }},
      {"sa", [](auto& c, auto& k, auto& v) { c.sa_enabled = ParseBool(k, v); }},
      {"field_modulus",
       [](auto& c, auto& k, auto& v) { c.field.modulus = ParseInteger<std::uint64_t>(k, v); }},
      {"fraction_bits",
       [](auto& c, auto& k, auto& v) { c.field.fraction_bits = ParseInteger<int>(k, v); }},
      {"clip_bound",
       [](auto& c, auto& k, auto& v) { c.field.clip_bound = ParseReal(k, v); }},
      {"local_steps",
       [](auto& c, auto& k, auto& v) { c.local_steps = ParseInteger<int>(k, v); }},
      {"lr", [](auto& c, auto& k, auto& v) { c.learning_rate = ParseReal(k, v); }},
      {"sweep_clients",
       [](auto& c, auto& k, auto& v) {
         c.sweep_clients.clear();
         for (const auto& s : SplitList(k, v)) {
           c.sweep_clients.push_back(ParseInteger<int>(k, s));
         }
       }},
      {"sweep_ratios",
       [](auto& c, auto& k, auto& v) {
         c.sweep_ratios.clear();
         for (const auto& s : SplitList(k, v)) c.sweep_ratios.push_back(ParseReal(k, s));
       }},
      {"sweep_variants",
       [](auto& c, auto& k, auto& v) {
         c.sweep_variants.clear();
         for (const auto& s : SplitList(k, v)) c.sweep_variants.push_back(ParseVariant(s));
       }},
      {"output", [](auto& c, auto&, auto& v) { c.output = v; }},
      {"calibration_size",
       [](auto& c, auto& k, auto& v) {
         c.calibration_size = v == "auto" ? 0 : ParseInteger<int>(k, v);
       }},
      {"brightness_spread",
       [](auto& c, auto& k, auto& v) { c.brightness_spread = ParseReal(k, v); }},
      {"force_max_pixel",
       [](auto& c, auto& k, auto& v) { c.force_max_pixel = ParseBool(k, v); }},
      {"workers",
       [](auto& c, auto& k, auto& v) { c.workers = ParseInteger<int>(k, v); }},
      {"timing", [](auto& c, auto& k, auto& v) { c.timing = ParseBool(k, v); }},
      {"timing_repetitions",
       [](auto& c, auto& k, auto& v) { c.timing_repetitions = ParseInteger<int>(k, v); }},
      {"payload_hidden",
       [](auto& c, auto& k, auto& v) { c.payload.hidden_units = ParseInteger<int>(k, v); }},
      {"payload_layers",
       [](auto& c, auto& k, auto& v) { c.payload.layers = ParseInteger<int>(k, v); }},
  };
  return *setters;
}

}  // namespace

std::string DatasetSpec::Name() const {
  switch (kind) {
    case DatasetKind::kSynthetic:
      return "synthetic";
    case DatasetKind::kIdx:
      return "idx";
    case DatasetKind::kCifar10:
      return "cifar";
    case DatasetKind::kCifar100:
      return "cifar100";
  }
  return "unknown";
}

DatasetSpec ParseDataset(const std::string& text) {
  DatasetSpec spec;
  if (text == "synthetic") return spec;
  const auto colon = text.find(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    Fail("dataset", "expected synthetic, idx:<path>, cifar:<path> or "
                    "cifar100:<path>, got '" + text + "'");
  }
  const std::string kind = text.substr(0, colon);
  const std::string rest = text.substr(colon + 1);
  if (kind == "idx") {
    spec.kind = DatasetKind::kIdx;
    const auto comma = rest.find(',');
    spec.path = rest.substr(0, comma);
    if (comma != std::string::npos) {
      spec.labels_path = rest.substr(comma + 1);
    } else {
      std::string name = spec.path.filename().string();
      const auto pos = name.find("images");
      if (pos == std::string::npos) {
        Fail("dataset", "cannot derive the IDX label file from '" + rest +
                            "'; use idx:<images>,<labels>");
      }
      name.replace(pos, 6, "labels");
      spec.labels_path = spec.path.parent_path() / name;
    }
  } else if (kind == "cifar") {
    spec.kind = DatasetKind::kCifar10;
    spec.path = rest;
  } else if (kind == "cifar100") {
    spec.kind = DatasetKind::kCifar100;
    spec.path = rest;
  } else {
    Fail("dataset", "unknown dataset kind '" + kind + "'");
  }
  return spec;
}

void ExperimentConfig::Validate() const {
  attack.Validate();
  if (local_steps < 1) Fail("local_steps", "must be >= 1");
  if (!(learning_rate > 0.0)) Fail("lr", "must be > 0");
  if (calibration_size < 0 || calibration_size == 1) {
    Fail("calibration_size", "must be 0 (auto) or >= 2");
  }
  if (!(brightness_spread > 0.0 && brightness_spread <= 0.5)) {
    Fail("brightness_spread", "must lie in (0, 0.5]");
  }
  if (workers < 0) Fail("workers", "must be >= 0");
  if (timing_repetitions < 5) Fail("timing_repetitions", "must be >= 5");
  if (payload.hidden_units < 1) Fail("payload_hidden", "must be >= 1");
  if (payload.layers < 0) Fail("payload_layers", "must be >= 0");
  int max_clients = attack.num_clients;
  for (int n : sweep_clients) {
    if (n < 1) Fail("sweep_clients", "every entry must be >= 1");
    max_clients = std::max(max_clients, n);
  }
  for (double r : sweep_ratios) {
    if (!(r > 0.0)) Fail("sweep_ratios", "every entry must be > 0");
  }
  if (sa_enabled) field.Validate(max_clients);
}

int ExperimentConfig::EffectiveWorkers() const {
  if (workers > 0) return workers;
  return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

int ExperimentConfig::EffectiveCalibrationSize() const {
  if (calibration_size > 0) return calibration_size;
  const auto units = static_cast<int>(std::min<std::size_t>(
      attack.Fc1Units(), std::numeric_limits<int>::max() / 16));
  return std::max(1000, 16 * units);
}

ConfigMap ParseConfigText(const std::string& text) {
  ConfigMap out;
  std::stringstream ss(text);
  std::string line;
  int number = 0;
  while (std::getline(ss, line)) {
    ++number;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = Trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      Fail("line " + std::to_string(number), "expected key=value");
    }
    const std::string key = Trim(line.substr(0, eq));
    if (key.empty()) Fail("line " + std::to_string(number), "empty key");
    out[key] = Trim(line.substr(eq + 1));
  }
  return out;
}

ConfigMap LoadConfigFile(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) Fail("config", "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ParseConfigText(ss.str());
}

void ApplyConfig(ExperimentConfig& cfg, const ConfigMap& entries) {
  const auto& setters = Setters();
  for (const auto& [key, value] : entries) {
    const auto it = setters.find(key);
    if (it == setters.end()) Fail(key, "unknown configuration key");
    try {
      it->second(cfg, key, value);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kConfigError) throw;
      Fail(key, e.what());
    }
  }
}

std::vector<std::string> KnownConfigKeys() {
  std::vector<std::string> keys;
  for (const auto& [key, setter] : Setters()) keys.push_back(key);
  return keys;
}

}  // namespace llsim
