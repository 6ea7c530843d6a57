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

#include "llsim/tensors.h"

#include <gtest/gtest.h>

#include "llsim/error.h"
#include "oracles.h"

namespace llsim {
namespace {

TEST(CooByteSize, TwentyBytesPerEntry) {
  EXPECT_EQ(CooByteSize(786432), 15728640u);
  EXPECT_EQ(CooByteSize(0), 0u);
  EXPECT_EQ(CooByteSize(1), 20u);
  EXPECT_EQ(CooByteSize(10, 3, 8), 10u * 32);
}

TEST(CooByteSize, LinearInNnz) {
  for (std::uint64_t n = 0; n < 2000; n += 37) {
    EXPECT_EQ(CooByteSize(n + 1) - CooByteSize(n), 20u);
    EXPECT_EQ(CooByteSize(n + 1, 2, 8) - CooByteSize(n, 2, 8), 24u);
  }
}

TEST(CsrByteSize, RowPointersPlusTwelvePerEntry) {
  EXPECT_EQ(CsrByteSize(256, 786432), 9439240u);
  EXPECT_EQ(CsrByteSize(1, 0), 16u);
  const double ratio = static_cast<double>(CsrByteSize(256, 786432)) /
                       static_cast<double>(CooByteSize(786432));
  EXPECT_GE(ratio, 0.58);
  EXPECT_LE(ratio, 0.68);
}

TEST(CsrByteSize, MatchesContainer) {
  const auto coo = Sparsify(oracle::RandomDense(3, 12, 9, 0.3));
  const auto csr = SparseMatrixCSR::FromCoo(coo);
  EXPECT_EQ(CsrByteSize(csr), CsrByteSize(12, coo.nnz()));
  EXPECT_EQ(CooByteSize(coo), 20 * coo.nnz());
}

TEST(Sparsify, AllZeroHasNoEntries) {
  EXPECT_EQ(Sparsify(DenseMatrix(3, 3)).nnz(), 0u);
}

TEST(Sparsify, IdentityKeepsDiagonal) {
  DenseMatrix eye(3, 3);
  for (std::size_t i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  const auto coo = Sparsify(eye);
  ASSERT_EQ(coo.nnz(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(coo.row_indices()[i], static_cast<std::int64_t>(i));
    EXPECT_EQ(coo.col_indices()[i], static_cast<std::int64_t>(i));
  }
}

TEST(Sparsify, RoundTripIsBitwise) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const DenseMatrix d = oracle::RandomDense(seed, 16, 16, 0.1);
    EXPECT_EQ(Densify(Sparsify(d)), d);
  }
}

TEST(Sparsify, ThresholdDropsSmallEntries) {
  DenseMatrix d(1, 4, {0.1, -0.5, 0.2, 0.9});
  const auto coo = Sparsify(d, 0.2);
  ASSERT_EQ(coo.nnz(), 2u);
  EXPECT_EQ(coo.values()[0], -0.5);
  EXPECT_EQ(coo.values()[1], 0.9);
}

TEST(SparseMatrixCOO, FromTripletsSortsSumsAndDropsZeros) {
  const auto coo = SparseMatrixCOO::FromTriplets(
      3, 3, {{2, 1, 1.0}, {0, 2, 2.0}, {2, 1, 0.5}, {1, 1, 3.0}, {1, 1, -3.0}});
  ASSERT_EQ(coo.nnz(), 2u);
  EXPECT_EQ(coo.row_indices()[0], 0);
  EXPECT_EQ(coo.col_indices()[0], 2);
  EXPECT_EQ(coo.values()[1], 1.5);
}

TEST(SparseMatrixCOO, ConstructorRejectsBrokenInvariants) {
  const auto build = [](std::vector<std::int64_t> r, std::vector<std::int64_t> c,
                        std::vector<double> v) {
    return SparseMatrixCOO(2, 2, std::move(r), std::move(c), std::move(v));
  };
  EXPECT_NO_THROW(build({0, 1}, {1, 0}, {1.0, 2.0}));
  EXPECT_THROW(build({1, 0}, {0, 1}, {1.0, 2.0}), Error);  // unsorted
  EXPECT_THROW(build({0, 0}, {1, 1}, {1.0, 2.0}), Error);  // duplicate
  EXPECT_THROW(build({0}, {0}, {0.0}), Error);             // explicit zero
  EXPECT_THROW(build({2}, {0}, {1.0}), Error);             // out of range
  EXPECT_THROW(build({0}, {0, 1}, {1.0}), Error);          // ragged arrays
}

TEST(SparseMatrixCSR, FromCooPreservesEntries) {
  const DenseMatrix d = oracle::RandomDense(7, 10, 6, 0.25);
  const auto coo = Sparsify(d);
  const auto csr = SparseMatrixCSR::FromCoo(coo);
  ASSERT_EQ(csr.row_ptr().size(), 11u);
  EXPECT_EQ(static_cast<std::size_t>(csr.row_ptr().back()), coo.nnz());
  for (std::size_t r = 0; r < 10; ++r) {
    for (auto k = csr.row_ptr()[r]; k < csr.row_ptr()[r + 1]; ++k) {
      EXPECT_EQ(csr.values()[k], d.at(r, csr.col_idx()[k]));
    }
  }
}

TEST(DenseMatrix, RejectsWrongValueCountAndNonFinite) {
  EXPECT_THROW(DenseMatrix(2, 2, {1.0, 2.0, 3.0}), Error);
  EXPECT_THROW(DenseMatrix(1, 1, {std::nan("")}), Error);
}

TEST(FormatMiB, TwoDecimalsOfBinaryMegabytes) {
  EXPECT_EQ(FormatMiB(1048576), "1.00");
  EXPECT_EQ(FormatMiB(2 * 784 * 25600 * 4), "153.12");
  EXPECT_DOUBLE_EQ(BytesToMiB(524288), 0.5);
}

}  // namespace
}  // namespace llsim
