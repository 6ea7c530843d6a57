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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <set>

#include "llsim/error.h"
#include "llsim/rng.h"

namespace llsim {
namespace {

const FieldParams kField{};

// Reference modular sum via 128-bit arithmetic.
std::uint64_t AddRef(std::uint64_t a, std::uint64_t b, std::uint64_t p) {
  return static_cast<std::uint64_t>(
      (static_cast<unsigned __int128>(a) + b) % p);
}

std::vector<double> RandomUpdate(std::uint64_t seed, std::size_t n,
                                 double density) {
  Rng rng(seed);
  std::vector<double> v(n, 0.0);
  for (double& x : v) {
    if (rng.Uniform() < density) x = rng.Uniform(-1.0, 1.0);
  }
  return v;
}

ErrorCode CodeOf(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no llsim::Error thrown";
  return ErrorCode::kIoError;
}

TEST(Quantize, DyadicValuesAreExact) {
  const std::vector<double> v{0.5, 0.0, -0.5};
  const Quantized q = Quantize(v, kField);
  EXPECT_EQ(q.values[0], 8388608u);
  EXPECT_EQ(q.values[1], 0u);
  EXPECT_EQ(q.values[2], kMersenne61 - 8388608u);
  EXPECT_EQ(Dequantize(q.values, kField), v);
}

TEST(Quantize, RoundTripWithinHalfStep) {
  const auto v = RandomUpdate(1, 10000, 1.0);
  const auto back = Dequantize(Quantize(v, kField).values, kField);
  for (std::size_t i = 0; i < v.size(); ++i) {
    ASSERT_LE(std::abs(back[i] - v[i]), std::ldexp(1.0, -25));
  }
}

TEST(Quantize, ClipsAndCounts) {
  const std::vector<double> v{9.0, -100.0, 7.5};
  const Quantized q = Quantize(v, kField);
  EXPECT_EQ(q.clipped, 2u);
  const auto back = Dequantize(q.values, kField);
  EXPECT_EQ(back[0], 8.0);
  EXPECT_EQ(back[1], -8.0);
  EXPECT_EQ(back[2], 7.5);
}

TEST(FieldParams, RejectsWrapAroundAndOversizedModulus) {
  EXPECT_NO_THROW(kField.Validate(1000));
  FieldParams small{.modulus = (std::uint64_t{1} << 31) - 1};
  EXPECT_EQ(CodeOf([&] { small.Validate(20); }), ErrorCode::kConfigError);
  FieldParams huge{.modulus = std::uint64_t{1} << 62};
  EXPECT_EQ(CodeOf([&] { huge.Validate(1); }), ErrorCode::kConfigError);
  FieldParams clip{.clip_bound = 0.0};
  EXPECT_EQ(CodeOf([&] { clip.Validate(1); }), ErrorCode::kConfigError);
}

TEST(MaskStream, DeterministicAndBelowModulus) {
  const auto seeds = PairwiseSeeds::Provision(2, 7);
  MaskStream a(*seeds.Find(0, 1), kMersenne61);
  MaskStream b(*seeds.Find(1, 0), kMersenne61);
  std::vector<std::uint64_t> x(10000), y(10000);
  a.Fill(x);
  for (auto& v : y) v = b.Next();
  EXPECT_EQ(x, y);
  EXPECT_TRUE(std::all_of(x.begin(), x.end(),
                          [](std::uint64_t v) { return v < kMersenne61; }));
  EXPECT_GT(std::set<std::uint64_t>(x.begin(), x.end()).size(), 9990u);
}

TEST(MaskStream, ApplyConsumesSameSequenceAsFill) {
  // A small modulus rejects a quarter of the words and exercises the slow
  // path; the Mersenne modulus exercises the fast one.
  for (std::uint64_t p : {std::uint64_t{3}, std::uint64_t{97}, kMersenne61}) {
    const auto seeds = PairwiseSeeds::Provision(2, 3);
    MaskStream fill(*seeds.Find(0, 1), p);
    MaskStream apply(*seeds.Find(0, 1), p);
    for (std::size_t len : {1u, 5000u, 9000u}) {
      std::vector<std::uint64_t> m(len), v(len, 1 % p);
      fill.Fill(m);
      apply.Apply(v, true);
      for (std::size_t i = 0; i < len; ++i) {
        ASSERT_EQ(v[i], AddRef(1 % p, m[i], p)) << "p=" << p << " i=" << i;
        ASSERT_LT(m[i], p);
      }
    }
  }
}

TEST(MaskStream, SmallModulusIsRoughlyUniform) {
  const auto seeds = PairwiseSeeds::Provision(2, 4);
  MaskStream s(*seeds.Find(0, 1), 5);
  std::vector<int> hist(5, 0);
  for (int i = 0; i < 50000; ++i) ++hist[s.Next()];
  for (int h : hist) EXPECT_NEAR(h, 10000, 500);
}

TEST(Mask, TwoZeroUpdatesCancel) {
  const auto seeds = PairwiseSeeds::Provision(2, 11);
  const FieldVector zero(64, 0);
  const MaskedUpdate a = Mask(zero, 0, seeds, kMersenne61);
  const MaskedUpdate b = Mask(zero, 1, seeds, kMersenne61);
  MaskStream r(*seeds.Find(0, 1), kMersenne61);
  for (std::size_t i = 0; i < zero.size(); ++i) {
    const std::uint64_t ri = r.Next();
    EXPECT_EQ(a.values[i], ri);
    EXPECT_EQ(b.values[i], ri == 0 ? 0 : kMersenne61 - ri);
    EXPECT_EQ(AddRef(a.values[i], b.values[i], kMersenne61), 0u);
  }
}

TEST(Mask, SumOfMaskedEqualsSumOfQuantized) {
  for (int n : {2, 3, 20}) {
    const auto seeds = PairwiseSeeds::Provision(n, 100 + n);
    const std::size_t len = 5003;
    FieldVector want(len, 0), got(len, 0);
    for (int m = 0; m < n; ++m) {
      const Quantized q = Quantize(RandomUpdate(m, len, 0.3), kField);
      const MaskedUpdate masked = Mask(q.values, m, seeds, kMersenne61);
      for (std::size_t i = 0; i < len; ++i) {
        want[i] = AddRef(want[i], q.values[i], kMersenne61);
        got[i] = AddRef(got[i], masked.values[i], kMersenne61);
      }
    }
    EXPECT_EQ(got, want) << "N=" << n;
  }
}

TEST(Mask, MaskedSparseUpdateIsDense) {
  const auto seeds = PairwiseSeeds::Provision(3, 5);
  const Quantized q = Quantize(RandomUpdate(1, 100000, 0.01), kField);
  EXPECT_LT(Density(q.values), 0.02);
  const MaskedUpdate masked = Mask(q.values, 1, seeds, kMersenne61);
  EXPECT_GE(Density(masked.values), 0.999);
}

TEST(Mask, MissingSeed) {
  auto seeds = PairwiseSeeds::Provision(3, 5);
  seeds.Erase(2, 0);
  EXPECT_EQ(CodeOf([&] { Mask(FieldVector(4, 0), 0, seeds, kMersenne61); }),
            ErrorCode::kMissingSeed);
  EXPECT_NO_THROW(Mask(FieldVector(4, 0), 1, PairwiseSeeds::Provision(3, 5),
                       kMersenne61));
  EXPECT_EQ(CodeOf([&] { Mask(FieldVector(4, 0), 3, seeds, kMersenne61); }),
            ErrorCode::kMissingSeed);
}

TEST(Aggregate, TwentyClientsWithinQuantizationOfRealSum) {
  const int n = 20;
  const std::size_t len = 4000;
  const auto seeds = PairwiseSeeds::Provision(n, 1);
  std::vector<MaskedUpdate> masked;
  std::vector<double> real(len, 0.0);
  for (int m = 0; m < n; ++m) {
    const auto u = RandomUpdate(1000 + m, len, 1.0);
    for (std::size_t i = 0; i < len; ++i) real[i] += u[i];
    masked.push_back(Mask(Quantize(u, kField).values, m, seeds, kMersenne61));
  }
  const AggregateUpdate agg = Aggregate(masked, kField, n);
  EXPECT_EQ(agg.num_clients, n);
  for (std::size_t i = 0; i < len; ++i) {
    ASSERT_LE(std::abs(agg.values[i] - real[i]), n * std::ldexp(1.0, -25));
  }

  std::vector<MaskedUpdate> shuffled(masked.rbegin(), masked.rend());
  std::rotate(shuffled.begin(), shuffled.begin() + 7, shuffled.end());
  const AggregateUpdate again = Aggregate(shuffled, kField, n);
  EXPECT_EQ(again.field_sum, agg.field_sum);
  EXPECT_EQ(again.values, agg.values);
}

TEST(Aggregate, SingleClientIsItsOwnUpdate) {
  const auto u = RandomUpdate(3, 500, 0.5);
  const auto seeds = PairwiseSeeds::Provision(1, 0);
  const MaskedUpdate masked =
      Mask(Quantize(u, kField).values, 0, seeds, kMersenne61);
  const AggregateUpdate agg = Aggregate({&masked, 1}, kField, 1);
  for (std::size_t i = 0; i < u.size(); ++i) {
    EXPECT_LE(std::abs(agg.values[i] - u[i]), std::ldexp(1.0, -25));
  }
}

TEST(Aggregate, CountMismatch) {
  const auto seeds = PairwiseSeeds::Provision(3, 2);
  std::vector<MaskedUpdate> masked;
  for (int m = 0; m < 3; ++m) {
    masked.push_back(Mask(FieldVector(8, 0), m, seeds, kMersenne61));
  }
  EXPECT_EQ(CodeOf([&] { Aggregate({masked.data(), 2}, kField, 3); }),
            ErrorCode::kCountMismatch);
  std::vector<MaskedUpdate> repeated{masked[0], masked[0], masked[1]};
  EXPECT_EQ(CodeOf([&] { Aggregate(repeated, kField, 3); }),
            ErrorCode::kCountMismatch);
  Aggregator agg(9, kField, 3);
  EXPECT_EQ(CodeOf([&] { agg.Add(masked[0]); }), ErrorCode::kCountMismatch);
  EXPECT_EQ(CodeOf([&] { Aggregate({}, kField, 3); }),
            ErrorCode::kCountMismatch);
}

TEST(Density, CountsNonzeros) {
  EXPECT_EQ(Density(FieldVector{}), 0.0);
  EXPECT_EQ(Density(FieldVector{0, 1, 2, 0}), 0.5);
}

}  // namespace
}  // namespace llsim
