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

#include "llsim/secure_agg.h"

#include <openssl/evp.h>

#include <algorithm>
#include <memory>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "llsim/error.h"
#include "llsim/rng.h"

namespace llsim {
namespace {

constexpr std::size_t kStreamWords = 4096;

inline std::uint64_t AddMod(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  const std::uint64_t s = a + b;
  return s - (p & (std::uint64_t{0} - (s >= p)));
}

inline std::uint64_t SubMod(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return a - b + (p & (std::uint64_t{0} - (a < b)));
}

}  // namespace

double FieldParams::scale() const { return std::ldexp(1.0, fraction_bits); }

void FieldParams::Validate(int num_clients) const {
  if (modulus < 3 || modulus >= (std::uint64_t{1} << 62)) {
    throw Error(ErrorCode::kConfigError, "field_modulus: must lie in [3, 2^62)");
  }
  if (fraction_bits < 0 || fraction_bits > 52) {
    throw Error(ErrorCode::kConfigError, "fraction_bits: must lie in [0, 52]");
  }
  if (!(clip_bound > 0.0)) {
    throw Error(ErrorCode::kConfigError, "clip_bound: must be > 0");
  }
  const long double bound =
      static_cast<long double>(num_clients) * scale() * clip_bound;
  if (!(bound < static_cast<long double>(modulus) / 2)) {
    throw Error(ErrorCode::kConfigError,
                "field_modulus: aggregate of " + std::to_string(num_clients) +
                    " clients can wrap around");
  }
}

Quantized Quantize(std::span<const double> values, const FieldParams& fp) {
  Quantized q;
  q.values.resize(values.size());
  const double scale = fp.scale();
  const auto p = static_cast<std::int64_t>(fp.modulus);
  for (std::size_t i = 0; i < values.size(); ++i) {
    double v = values[i];
    if (std::abs(v) > fp.clip_bound) {
      v = std::clamp(v, -fp.clip_bound, fp.clip_bound);
      ++q.clipped;
    }
    const std::int64_t x = std::llround(v * scale);
    q.values[i] = static_cast<std::uint64_t>(x >= 0 ? x : p + x);
  }
  return q;
}

Quantized Quantize(const ClientUpdate& update, const FlatLayout& layout,
                   const FieldParams& fp) {
  return Quantize(Flatten(update, layout), fp);
}

std::vector<double> Dequantize(std::span<const std::uint64_t> values,
                               const FieldParams& fp) {
  std::vector<double> out(values.size());
  const double inv_scale = 1.0 / fp.scale();
  const std::uint64_t half = fp.modulus / 2;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint64_t v = values[i];
    const double lifted = v > half ? -static_cast<double>(fp.modulus - v)
                                   : static_cast<double>(v);
    out[i] = lifted * inv_scale;
  }
  return out;
}

PairwiseSeeds PairwiseSeeds::Provision(int num_clients, std::uint64_t seed) {
  PairwiseSeeds seeds;
  seeds.num_clients_ = num_clients;
  for (int a = 0; a < num_clients; ++a) {
    for (int b = a + 1; b < num_clients; ++b) {
      Rng rng = Rng::Derive(seed, (static_cast<std::uint64_t>(a) << 32) | b);
      SeedKey key;
      for (std::size_t i = 0; i < key.size(); i += 8) {
        const std::uint64_t w = rng.Next();
        std::memcpy(key.data() + i, &w, 8);
      }
      seeds.keys_.emplace(std::make_pair(a, b), key);
    }
  }
  return seeds;
}

const SeedKey* PairwiseSeeds::Find(int a, int b) const {
  const auto it = keys_.find({std::min(a, b), std::max(a, b)});
  return it == keys_.end() ? nullptr : &it->second;
}

void PairwiseSeeds::Erase(int a, int b) {
  keys_.erase({std::min(a, b), std::max(a, b)});
}

MaskStream::MaskStream(const SeedKey& key, std::uint64_t modulus)
    : ctx_(EVP_CIPHER_CTX_new()),
      modulus_(modulus),
      bits_mask_(modulus >= (std::uint64_t{1} << 63)
                     ? ~std::uint64_t{0}
                     : std::bit_ceil(modulus) - 1),
      buffer_(kStreamWords),
      pos_(kStreamWords) {
  if (std::has_single_bit(modulus)) bits_mask_ = modulus - 1;
  const unsigned char iv[16] = {};
  auto* ctx = static_cast<EVP_CIPHER_CTX*>(ctx_);
  if (ctx == nullptr ||
      EVP_EncryptInit_ex(ctx, EVP_aes_128_ctr(), nullptr, key.data(), iv) !=
          1) {
    throw Error(ErrorCode::kIoError, "AES-128-CTR initialisation failed");
  }
}

MaskStream::~MaskStream() {
  EVP_CIPHER_CTX_free(static_cast<EVP_CIPHER_CTX*>(ctx_));
}

void MaskStream::Refill() {
  static const std::vector<unsigned char> zeros(kStreamWords * 8, 0);
  int produced = 0;
  EVP_EncryptUpdate(static_cast<EVP_CIPHER_CTX*>(ctx_),
                    reinterpret_cast<unsigned char*>(buffer_.data()), &produced,
                    zeros.data(), static_cast<int>(zeros.size()));
  pos_ = 0;
}

std::uint64_t MaskStream::Next() {
  while (true) {
    if (pos_ == buffer_.size()) Refill();
    const std::uint64_t w = buffer_[pos_++] & bits_mask_;
    if (w < modulus_) return w;
  }
}

void MaskStream::Fill(std::span<std::uint64_t> out) {
  std::size_t i = 0;
  while (i < out.size()) {
    if (pos_ == buffer_.size()) Refill();
    std::size_t k = pos_;
    for (; k < buffer_.size() && i < out.size(); ++k) {
      const std::uint64_t w = buffer_[k] & bits_mask_;
      if (w < modulus_) out[i++] = w;
    }
    pos_ = k;
  }
}

void MaskStream::Apply(std::span<std::uint64_t> values, bool add) {
  std::size_t i = 0;
  while (i < values.size()) {
    if (pos_ == buffer_.size()) Refill();
    const std::size_t take =
        std::min(values.size() - i, buffer_.size() - pos_);
    const std::uint64_t* w = buffer_.data() + pos_;
    bool clean = true;
    for (std::size_t k = 0; k < take; ++k) {
      clean &= (w[k] & bits_mask_) < modulus_;
    }
    if (!clean) {
      // A rejected word somewhere in this run; take the slow path once.
      const std::uint64_t m = Next();
      values[i] = add ? AddMod(values[i], m, modulus_)
                      : SubMod(values[i], m, modulus_);
      ++i;
      continue;
    }
    std::uint64_t* v = values.data() + i;
    if (add) {
      for (std::size_t k = 0; k < take; ++k) {
        v[k] = AddMod(v[k], w[k] & bits_mask_, modulus_);
      }
    } else {
      for (std::size_t k = 0; k < take; ++k) {
        v[k] = SubMod(v[k], w[k] & bits_mask_, modulus_);
      }
    }
    pos_ += take;
    i += take;
  }
}

MaskedUpdate Mask(FieldVector quantized, int client_index,
                  const PairwiseSeeds& seeds, std::uint64_t modulus) {
  const int n = seeds.num_clients();
  if (client_index < 0 || client_index >= n) {
    throw Error(ErrorCode::kMissingSeed,
                "client " + std::to_string(client_index) +
                    " is not part of the seed set");
  }
  for (int j = 0; j < n; ++j) {
    if (j != client_index && seeds.Find(client_index, j) == nullptr) {
      throw Error(ErrorCode::kMissingSeed,
                  "no seed for pair (" + std::to_string(client_index) + ", " +
                      std::to_string(j) + ")");
    }
  }
  // Chunk-outer order keeps each slice of the update in cache while every
  // pairwise stream is applied to it.
  std::vector<std::unique_ptr<MaskStream>> streams;
  std::vector<bool> adds;
  for (int j = 0; j < n; ++j) {
    if (j == client_index) continue;
    streams.push_back(
        std::make_unique<MaskStream>(*seeds.Find(client_index, j), modulus));
    adds.push_back(j > client_index);
  }
  for (std::size_t base = 0; base < quantized.size(); base += kStreamWords) {
    const std::size_t len = std::min(kStreamWords, quantized.size() - base);
    const std::span<std::uint64_t> slice(quantized.data() + base, len);
    for (std::size_t s = 0; s < streams.size(); ++s) {
      streams[s]->Apply(slice, adds[s]);
    }
  }
  return {client_index, std::move(quantized)};
}

Aggregator::Aggregator(std::size_t length, const FieldParams& fp,
                       int expected_clients)
    : fp_(fp),
      expected_clients_(expected_clients),
      sum_(length, 0),
      seen_(expected_clients, false) {}

void Aggregator::Add(const MaskedUpdate& update) {
  if (update.values.size() != sum_.size()) {
    throw Error(ErrorCode::kCountMismatch,
                "masked update length " + std::to_string(update.values.size()) +
                    " != " + std::to_string(sum_.size()));
  }
  if (update.client_index < 0 || update.client_index >= expected_clients_ ||
      seen_[update.client_index]) {
    throw Error(ErrorCode::kCountMismatch,
                "unexpected or repeated client " +
                    std::to_string(update.client_index));
  }
  seen_[update.client_index] = true;
  ++count_;
  const std::uint64_t p = fp_.modulus;
  for (std::size_t i = 0; i < sum_.size(); ++i) {
    sum_[i] = AddMod(sum_[i], update.values[i], p);
  }
}

AggregateUpdate Aggregator::Finish() && {
  if (count_ != expected_clients_) {
    throw Error(ErrorCode::kCountMismatch,
                std::to_string(count_) + " of " +
                    std::to_string(expected_clients_) + " clients reported");
  }
  AggregateUpdate out;
  out.values = Dequantize(sum_, fp_);
  out.field_sum = std::move(sum_);
  out.num_clients = count_;
  return out;
}

AggregateUpdate Aggregate(std::span<const MaskedUpdate> masked,
                          const FieldParams& fp, int expected_clients) {
  if (masked.empty()) {
    throw Error(ErrorCode::kCountMismatch, "no masked updates");
  }
  Aggregator agg(masked.front().values.size(), fp, expected_clients);
  for (const auto& m : masked) agg.Add(m);
  return std::move(agg).Finish();
}

double Density(std::span<const std::uint64_t> values) {
  if (values.empty()) return 0.0;
  const auto nonzero = std::count_if(values.begin(), values.end(),
                                     [](std::uint64_t v) { return v != 0; });
  return static_cast<double>(nonzero) / static_cast<double>(values.size());
}

}  // namespace llsim
