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

#ifndef LLSIM_TENSORS_H_
#define LLSIM_TENSORS_H_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace llsim {

inline constexpr double kBytesPerMiB = 1048576.0;

// Row-major dense matrix of finite 64-bit reals.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols);
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }

  double& at(std::size_t r, std::size_t c) { return values_[r * cols_ + c]; }
  double at(std::size_t r, std::size_t c) const {
    return values_[r * cols_ + c];
  }
  std::span<double> row(std::size_t r) {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {values_.data() + r * cols_, cols_};
  }
  std::span<double> values() { return values_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> values_;
};

struct Triplet {
  std::int64_t row;
  std::int64_t col;
  double value;
};

// Coordinate-format sparse matrix. Indices are strictly sorted
// lexicographically by (row, col) and every stored value is nonzero.
class SparseMatrixCOO {
 public:
  SparseMatrixCOO() = default;

  // Sorts, sums duplicates, and drops entries that end up exactly zero.
  static SparseMatrixCOO FromTriplets(std::size_t rows, std::size_t cols,
                                      std::vector<Triplet> triplets);

  // Takes already-sorted parallel arrays; throws kShapeMismatch if any
  // container invariant is violated.
  SparseMatrixCOO(std::size_t rows, std::size_t cols,
                  std::vector<std::int64_t> row_indices,
                  std::vector<std::int64_t> col_indices,
                  std::vector<double> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }

  std::span<const std::int64_t> row_indices() const { return row_indices_; }
  std::span<const std::int64_t> col_indices() const { return col_indices_; }
  std::span<const double> values() const { return values_; }

  bool operator==(const SparseMatrixCOO&) const = default;

 private:
  void Validate() const;

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::int64_t> row_indices_;
  std::vector<std::int64_t> col_indices_;
  std::vector<double> values_;
};

class SparseMatrixCSR {
 public:
  SparseMatrixCSR() = default;
  SparseMatrixCSR(std::size_t rows, std::size_t cols,
                  std::vector<std::int64_t> row_ptr,
                  std::vector<std::int64_t> col_idx, std::vector<double> values);

  static SparseMatrixCSR FromCoo(const SparseMatrixCOO& coo);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t nnz() const { return values_.size(); }
  std::span<const std::int64_t> row_ptr() const { return row_ptr_; }
  std::span<const std::int64_t> col_idx() const { return col_idx_; }
  std::span<const double> values() const { return values_; }

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::int64_t> row_ptr_;
  std::vector<std::int64_t> col_idx_;
  std::vector<double> values_;
};

// (dim * 8 + datasize) bytes per stored element: one 8-byte index per
// dimension plus the value itself.
std::uint64_t CooByteSize(std::uint64_t nnz, int dim = 2, int datasize = 4);
std::uint64_t CooByteSize(const SparseMatrixCOO& m, int dim = 2,
                          int datasize = 4);

// (rows + 1) row offsets, nnz column indices, nnz values.
std::uint64_t CsrByteSize(std::uint64_t rows, std::uint64_t nnz,
                          int idxsize = 8, int datasize = 4);
std::uint64_t CsrByteSize(const SparseMatrixCSR& m, int idxsize = 8,
                          int datasize = 4);

std::uint64_t DenseByteSize(std::uint64_t count, int datasize = 4);

DenseMatrix Densify(const SparseMatrixCOO& m);

// Entries with |v| <= threshold are dropped; threshold 0 keeps every
// nonzero.
SparseMatrixCOO Sparsify(const DenseMatrix& m, double threshold = 0.0);

double BytesToMiB(std::uint64_t bytes);

// bytes / 2^20 rendered with two decimals.
std::string FormatMiB(std::uint64_t bytes);

}  // namespace llsim

#endif  // LLSIM_TENSORS_H_
