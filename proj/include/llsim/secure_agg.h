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

#ifndef LLSIM_SECURE_AGG_H_
#define LLSIM_SECURE_AGG_H_

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <utility>
#include <vector>

#include "llsim/client.h"

namespace llsim {

inline constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

struct FieldParams {
  std::uint64_t modulus = kMersenne61;
  int fraction_bits = 24;
  double clip_bound = 8.0;

  double scale() const;
  // Throws kConfigError unless the modulus is below 2^62 and
  // num_clients * scale * clip_bound < modulus / 2.
  void Validate(int num_clients) const;
};

using FieldVector = std::vector<std::uint64_t>;

struct Quantized {
  FieldVector values;
  std::size_t clipped = 0;  // entries that exceeded clip_bound
};

// round(v * 2^f) mod p after clipping to [-clip_bound, clip_bound].
Quantized Quantize(std::span<const double> values, const FieldParams& fp);
Quantized Quantize(const ClientUpdate& update, const FlatLayout& layout,
                   const FieldParams& fp);

// Centered lift: residues above p/2 map to negative values.
std::vector<double> Dequantize(std::span<const std::uint64_t> values,
                               const FieldParams& fp);

using SeedKey = std::array<std::uint8_t, 16>;

// One AES-128 key per unordered client pair, provisioned by a trusted setup
// rather than key agreement.
class PairwiseSeeds {
 public:
  static PairwiseSeeds Provision(int num_clients, std::uint64_t seed);

  int num_clients() const { return num_clients_; }
  const SeedKey* Find(int a, int b) const;
  void Erase(int a, int b);

 private:
  int num_clients_ = 0;
  std::map<std::pair<int, int>, SeedKey> keys_;
};

// Expands a pair key into uniform residues mod p: AES-128-CTR keystream with
// a zero IV, read as little-endian 64-bit words, masked to the bit width of
// p and rejection-sampled.
class MaskStream {
 public:
  MaskStream(const SeedKey& key, std::uint64_t modulus);
  ~MaskStream();
  MaskStream(const MaskStream&) = delete;
  MaskStream& operator=(const MaskStream&) = delete;

  std::uint64_t Next();
  void Fill(std::span<std::uint64_t> out);
  // values[k] += (or -=) the next mask words, consuming the same sequence
  // Fill would produce.
  void Apply(std::span<std::uint64_t> values, bool add);

 private:
  void Refill();

  void* ctx_;  // EVP_CIPHER_CTX
  std::uint64_t modulus_;
  std::uint64_t bits_mask_;
  std::vector<std::uint64_t> buffer_;
  std::size_t pos_;
};

struct MaskedUpdate {
  int client_index = 0;
  FieldVector values;
};

// q + sum_{j>m} PRG(seed_mj) - sum_{j<m} PRG(seed_jm)  (mod p).
MaskedUpdate Mask(FieldVector quantized, int client_index,
                  const PairwiseSeeds& seeds, std::uint64_t modulus);

struct AggregateUpdate {
  FieldVector field_sum;
  std::vector<double> values;  // dequantized field_sum
  int num_clients = 0;
};

// Streaming server-side fold; updates may arrive in any order.
class Aggregator {
 public:
  Aggregator(std::size_t length, const FieldParams& fp, int expected_clients);

  void Add(const MaskedUpdate& update);
  // Throws kCountMismatch unless every expected client contributed once.
  AggregateUpdate Finish() &&;

 private:
  FieldParams fp_;
  int expected_clients_;
  FieldVector sum_;
  std::vector<bool> seen_;
  int count_ = 0;
};

AggregateUpdate Aggregate(std::span<const MaskedUpdate> masked,
                          const FieldParams& fp, int expected_clients);

// Fraction of entries that are nonzero.
double Density(std::span<const std::uint64_t> values);

}  // namespace llsim

#endif  // LLSIM_SECURE_AGG_H_
