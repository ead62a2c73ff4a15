/*
 * Copyright 2026 The DeltaForge Authors
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

// Dense matrices and a deterministic singular value decomposition.
//
// Every routine here is a pure function with a fixed floating-point
// evaluation order, so the same input bits produce the same output bits on
// any IEEE-754 platform. The update protocol depends on this: the edge device
// recomputes the frozen SVD factors of its deployed weights and must land on
// exactly the values the server used during refinement.

#ifndef DELTAFORGE_LINALG_H_
#define DELTAFORGE_LINALG_H_

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace deltaforge {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix Identity(std::size_t n);
  static Matrix Diagonal(std::span<const double> diag);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool AllFinite() const;

  friend bool operator==(const Matrix& a, const Matrix& b) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Standard product; each output entry accumulates its k terms left to right.
Matrix Matmul(const Matrix& a, const Matrix& b);
// a^T * b without materialising the transpose.
Matrix MatmulTransA(const Matrix& a, const Matrix& b);
// a * b^T without materialising the transpose.
Matrix MatmulTransB(const Matrix& a, const Matrix& b);
Matrix Transpose(const Matrix& a);

Matrix Add(const Matrix& a, const Matrix& b);
Matrix Subtract(const Matrix& a, const Matrix& b);
double FrobeniusNorm(const Matrix& a);
double MaxAbs(const Matrix& a);

// Columns [first, first + count) of a.
Matrix ColumnBlock(const Matrix& a, std::size_t first, std::size_t count);
// [a, b]: a and b stacked side by side.
Matrix ConcatColumns(const Matrix& a, const Matrix& b);
// a * diag(d) * b^T, i.e. sum_k d_k a_k b_k^T over matching columns.
Matrix ScaledOuterSum(const Matrix& a, std::span<const double> d, const Matrix& b);

// Thin SVD A = U diag(s) V^T with m = min(rows, cols).
struct SvdFactors {
  Matrix u;               // rows x m, orthonormal columns
  std::vector<double> s;  // m values, descending, nonnegative
  Matrix v;               // cols x m, orthonormal columns
};

struct SvdOptions {
  int max_sweeps = 100;
  double tolerance = 1e-12;
  // Included in the convergence error so the failing layer can be named.
  std::string label;
};

// One-sided Jacobi SVD followed by sign canonicalisation.
SvdFactors Svd(const Matrix& a, const SvdOptions& options = {});

// Flips column pairs so that, in each column of U, the entry of largest
// magnitude (lowest row index on ties) is nonnegative. Idempotent.
void CanonicalizeSigns(SvdFactors& f);

Matrix Reconstruct(const SvdFactors& f);

struct LowRankPair {
  Matrix left;   // o x r, U_{1:r} diag(s_{1:r})
  Matrix right;  // r x i, V_{1:r}^T
};

// Best rank-r approximation in factored form. Requires 1 <= r <= m.
LowRankPair Truncate(const SvdFactors& f, std::size_t rank);

}  // namespace deltaforge

#endif  // DELTAFORGE_LINALG_H_
