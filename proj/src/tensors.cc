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

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <tuple>
#include <utility>

#include "llsim/error.h"

namespace llsim {

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), values_(rows * cols, 0.0) {}

DenseMatrix::DenseMatrix(std::size_t rows, std::size_t cols,
                         std::vector<double> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows_ * cols_) {
    throw Error(ErrorCode::kShapeMismatch,
                "dense matrix expects " + std::to_string(rows_ * cols_) +
                    " values, got " + std::to_string(values_.size()));
  }
  for (double v : values_) {
    if (!std::isfinite(v)) {
      throw Error(ErrorCode::kShapeMismatch, "dense matrix value not finite");
    }
  }
}

SparseMatrixCOO SparseMatrixCOO::FromTriplets(std::size_t rows,
                                              std::size_t cols,
                                              std::vector<Triplet> triplets) {
  std::sort(triplets.begin(), triplets.end(),
            [](const Triplet& a, const Triplet& b) {
              return std::tie(a.row, a.col) < std::tie(b.row, b.col);
            });
  std::vector<std::int64_t> r;
  std::vector<std::int64_t> c;
  std::vector<double> v;
  r.reserve(triplets.size());
  c.reserve(triplets.size());
  v.reserve(triplets.size());
  for (std::size_t i = 0; i < triplets.size();) {
    const Triplet& t = triplets[i];
    double sum = 0.0;
    std::size_t j = i;
    for (; j < triplets.size() && triplets[j].row == t.row &&
           triplets[j].col == t.col;
         ++j) {
      sum += triplets[j].value;
    }
    if (sum != 0.0) {
      r.push_back(t.row);
      c.push_back(t.col);
      v.push_back(sum);
    }
    i = j;
  }
  return SparseMatrixCOO(rows, cols, std::move(r), std::move(c), std::move(v));
}

SparseMatrixCOO::SparseMatrixCOO(std::size_t rows, std::size_t cols,
                                 std::vector<std::int64_t> row_indices,
                                 std::vector<std::int64_t> col_indices,
                                 std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_indices_(std::move(row_indices)),
      col_indices_(std::move(col_indices)),
      values_(std::move(values)) {
  Validate();
}

void SparseMatrixCOO::Validate() const {
  if (row_indices_.size() != values_.size() ||
      col_indices_.size() != values_.size()) {
    throw Error(ErrorCode::kShapeMismatch, "COO index/value length mismatch");
  }
  const auto n_rows = static_cast<std::int64_t>(rows_);
  const auto n_cols = static_cast<std::int64_t>(cols_);
  for (std::size_t k = 0; k < values_.size(); ++k) {
    if (row_indices_[k] < 0 || row_indices_[k] >= n_rows ||
        col_indices_[k] < 0 || col_indices_[k] >= n_cols) {
      throw Error(ErrorCode::kShapeMismatch, "COO index out of range");
    }
    if (values_[k] == 0.0 || !std::isfinite(values_[k])) {
      throw Error(ErrorCode::kShapeMismatch,
                  "COO stores an explicit zero or non-finite value");
    }
    if (k > 0 && std::tie(row_indices_[k - 1], col_indices_[k - 1]) >=
                     std::tie(row_indices_[k], col_indices_[k])) {
      throw Error(ErrorCode::kShapeMismatch,
                  "COO indices not strictly sorted");
    }
  }
}

SparseMatrixCSR::SparseMatrixCSR(std::size_t rows, std::size_t cols,
                                 std::vector<std::int64_t> row_ptr,
                                 std::vector<std::int64_t> col_idx,
                                 std::vector<double> values)
    : rows_(rows),
      cols_(cols),
      row_ptr_(std::move(row_ptr)),
      col_idx_(std::move(col_idx)),
      values_(std::move(values)) {
  if (row_ptr_.size() != rows_ + 1 || col_idx_.size() != values_.size() ||
      row_ptr_.front() != 0 ||
      row_ptr_.back() != static_cast<std::int64_t>(values_.size())) {
    throw Error(ErrorCode::kShapeMismatch, "malformed CSR offsets");
  }
  for (std::size_t r = 0; r < rows_; ++r) {
    if (row_ptr_[r] > row_ptr_[r + 1]) {
      throw Error(ErrorCode::kShapeMismatch, "CSR row_ptr decreasing");
    }
    for (auto k = row_ptr_[r] + 1; k < row_ptr_[r + 1]; ++k) {
      if (col_idx_[k - 1] >= col_idx_[k]) {
        throw Error(ErrorCode::kShapeMismatch, "CSR columns unsorted in row");
      }
    }
  }
}

SparseMatrixCSR SparseMatrixCSR::FromCoo(const SparseMatrixCOO& coo) {
  std::vector<std::int64_t> row_ptr(coo.rows() + 1, 0);
  for (auto r : coo.row_indices()) ++row_ptr[r + 1];
  for (std::size_t r = 0; r < coo.rows(); ++r) row_ptr[r + 1] += row_ptr[r];
  // COO order is already row-major, so columns and values carry over as-is.
  return SparseMatrixCSR(
      coo.rows(), coo.cols(), std::move(row_ptr),
      {coo.col_indices().begin(), coo.col_indices().end()},
      {coo.values().begin(), coo.values().end()});
}

std::uint64_t CooByteSize(std::uint64_t nnz, int dim, int datasize) {
  return (static_cast<std::uint64_t>(dim) * 8 + datasize) * nnz;
}

std::uint64_t CooByteSize(const SparseMatrixCOO& m, int dim, int datasize) {
  return CooByteSize(m.nnz(), dim, datasize);
}

std::uint64_t CsrByteSize(std::uint64_t rows, std::uint64_t nnz, int idxsize,
                          int datasize) {
  return (rows + 1) * idxsize + nnz * idxsize + nnz * datasize;
}

std::uint64_t CsrByteSize(const SparseMatrixCSR& m, int idxsize,
                          int datasize) {
  return CsrByteSize(m.rows(), m.nnz(), idxsize, datasize);
}

std::uint64_t DenseByteSize(std::uint64_t count, int datasize) {
  return count * datasize;
}

DenseMatrix Densify(const SparseMatrixCOO& m) {
  DenseMatrix out(m.rows(), m.cols());
  for (std::size_t k = 0; k < m.nnz(); ++k) {
    out.at(m.row_indices()[k], m.col_indices()[k]) = m.values()[k];
  }
  return out;
}

SparseMatrixCOO Sparsify(const DenseMatrix& m, double threshold) {
  std::vector<std::int64_t> r;
  std::vector<std::int64_t> c;
  std::vector<double> v;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      const double x = m.at(i, j);
      if (x != 0.0 && std::abs(x) > threshold) {
        r.push_back(static_cast<std::int64_t>(i));
        c.push_back(static_cast<std::int64_t>(j));
        v.push_back(x);
      }
    }
  }
  return SparseMatrixCOO(m.rows(), m.cols(), std::move(r), std::move(c),
                         std::move(v));
}

double BytesToMiB(std::uint64_t bytes) {
  return static_cast<double>(bytes) / kBytesPerMiB;
}

std::string FormatMiB(std::uint64_t bytes) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", BytesToMiB(bytes));
  return buf;
}

}  // namespace llsim
