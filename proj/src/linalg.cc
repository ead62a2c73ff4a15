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

#include "deltaforge/linalg.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "deltaforge/error.h"

namespace deltaforge {
namespace {

void RequireFinite(const Matrix& a, const char* what) {
  if (!a.AllFinite()) {
    throw Error(ErrorCode::kInvalidInput,
                std::string(what) + ": matrix contains NaN or Inf");
  }
}

void RequireSameShape(const Matrix& a, const Matrix& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw Error(ErrorCode::kShape,
                std::string(what) + ": " + std::to_string(a.rows()) + "x" +
                    std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) +
                    "x" + std::to_string(b.cols()));
  }
}

double Dot(const double* x, const double* y, std::size_t n) {
  double acc = 0.0;
  for (std::size_t k = 0; k < n; ++k) acc += x[k] * y[k];
  return acc;
}

// Hestenes one-sided Jacobi on the rows of `w` (each row is one column of
// the matrix being decomposed). `v` accumulates the right rotations and
// starts as the identity.
void JacobiOrthogonalize(Matrix& w, Matrix& v, const SvdOptions& options) {
  const std::size_t n = w.rows();
  const std::size_t len = w.cols();
  for (int sweep = 0; sweep < options.max_sweeps; ++sweep) {
    bool rotated = false;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        double* wp = w.row(p).data();
        double* wq = w.row(q).data();
        const double alpha = Dot(wp, wp, len);
        const double beta = Dot(wq, wq, len);
        const double gamma = Dot(wp, wq, len);
        if (gamma == 0.0 ||
            std::abs(gamma) <= options.tolerance * std::sqrt(alpha * beta)) {
          continue;
        }
        rotated = true;
        const double zeta = (beta - alpha) / (2.0 * gamma);
        const double t = (zeta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(zeta) + std::sqrt(1.0 + zeta * zeta));
        const double c = 1.0 / std::sqrt(1.0 + t * t);
        const double s = c * t;
        for (std::size_t k = 0; k < len; ++k) {
          const double a = wp[k];
          const double b = wq[k];
          wp[k] = c * a - s * b;
          wq[k] = s * a + c * b;
        }
        double* vp = v.row(p).data();
        double* vq = v.row(q).data();
        for (std::size_t k = 0; k < v.cols(); ++k) {
          const double a = vp[k];
          const double b = vq[k];
          vp[k] = c * a - s * b;
          vq[k] = s * a + c * b;
        }
      }
    }
    if (!rotated) return;
  }
  throw Error(ErrorCode::kConvergence,
              "SVD did not converge within " + std::to_string(options.max_sweeps) +
                  " sweeps" +
                  (options.label.empty() ? std::string() : " (" + options.label + ")"));
}

// Replaces the zero rows listed in `missing` with unit vectors orthogonal to
// every other row, drawing candidates from the standard basis in order.
void CompleteOrthonormalRows(Matrix& rows, const std::vector<std::size_t>& missing) {
  const std::size_t len = rows.cols();
  std::vector<bool> is_missing(rows.rows(), false);
  for (std::size_t r : missing) is_missing[r] = true;
  std::size_t next_basis = 0;
  for (std::size_t target : missing) {
    while (true) {
      if (next_basis >= len) {
        throw Error(ErrorCode::kConvergence, "cannot complete orthonormal basis");
      }
      std::vector<double> cand(len, 0.0);
      cand[next_basis++] = 1.0;
      // Two passes of Gram-Schmidt against the rows already fixed.
      for (int pass = 0; pass < 2; ++pass) {
        for (std::size_t r = 0; r < rows.rows(); ++r) {
          if (is_missing[r]) continue;
          const double* other = rows.row(r).data();
          const double proj = Dot(cand.data(), other, len);
          for (std::size_t k = 0; k < len; ++k) cand[k] -= proj * other[k];
        }
      }
      const double norm = std::sqrt(Dot(cand.data(), cand.data(), len));
      if (norm < 0.5) continue;
      for (std::size_t k = 0; k < len; ++k) rows(target, k) = cand[k] / norm;
      is_missing[target] = false;
      break;
    }
  }
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols)
    : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows * cols) {
    throw Error(ErrorCode::kShape,
                "matrix data length " + std::to_string(data_.size()) +
                    " does not match " + std::to_string(rows) + "x" +
                    std::to_string(cols));
  }
}

Matrix Matrix::Identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t k = 0; k < n; ++k) m(k, k) = 1.0;
  return m;
}

Matrix Matrix::Diagonal(std::span<const double> diag) {
  Matrix m(diag.size(), diag.size());
  for (std::size_t k = 0; k < diag.size(); ++k) m(k, k) = diag[k];
  return m;
}

bool Matrix::AllFinite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](double x) { return std::isfinite(x); });
}

Matrix Matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw Error(ErrorCode::kShape, "matmul: inner dimensions " +
                                       std::to_string(a.cols()) + " and " +
                                       std::to_string(b.rows()) + " differ");
  }
  Matrix out(a.rows(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double* o = out.row(i).data();
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      const double* bk = b.row(k).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aik * bk[j];
    }
  }
  return out;
}

Matrix MatmulTransA(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kShape, "matmul (A^T B): row counts differ");
  }
  Matrix out(a.cols(), b.cols());
  const std::size_t n = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* bk = b.row(k).data();
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double aki = a(k, i);
      double* o = out.row(i).data();
      for (std::size_t j = 0; j < n; ++j) o[j] += aki * bk[j];
    }
  }
  return out;
}

Matrix MatmulTransB(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw Error(ErrorCode::kShape, "matmul (A B^T): column counts differ");
  }
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.rows(); ++j) {
      out(i, j) = Dot(a.row(i).data(), b.row(j).data(), a.cols());
    }
  }
  return out;
}

Matrix Transpose(const Matrix& a) {
  Matrix out(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < a.cols(); ++j) out(j, i) = a(i, j);
  }
  return out;
}

Matrix Add(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "add");
  Matrix out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] += b.data()[k];
  return out;
}

Matrix Subtract(const Matrix& a, const Matrix& b) {
  RequireSameShape(a, b, "subtract");
  Matrix out = a;
  for (std::size_t k = 0; k < out.size(); ++k) out.data()[k] -= b.data()[k];
  return out;
}

double FrobeniusNorm(const Matrix& a) {
  return std::sqrt(Dot(a.data().data(), a.data().data(), a.size()));
}

double MaxAbs(const Matrix& a) {
  double m = 0.0;
  for (double x : a.data()) m = std::max(m, std::abs(x));
  return m;
}

Matrix ColumnBlock(const Matrix& a, std::size_t first, std::size_t count) {
  if (first + count > a.cols()) {
    throw Error(ErrorCode::kShape, "column block out of range");
  }
  Matrix out(a.rows(), count);
  for (std::size_t r = 0; r < a.rows(); ++r) {
    for (std::size_t c = 0; c < count; ++c) out(r, c) = a(r, first + c);
  }
  return out;
}

Matrix ConcatColumns(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows()) {
    throw Error(ErrorCode::kShape, "column concatenation: row counts differ");
  }
  Matrix out(a.rows(), a.cols() + b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    std::copy(a.row(r).begin(), a.row(r).end(), out.row(r).begin());
    std::copy(b.row(r).begin(), b.row(r).end(), out.row(r).begin() + a.cols());
  }
  return out;
}

Matrix ScaledOuterSum(const Matrix& a, std::span<const double> d, const Matrix& b) {
  if (a.cols() != d.size() || b.cols() != d.size()) {
    throw Error(ErrorCode::kShape, "scaled outer sum: factor widths differ");
  }
  Matrix scaled = a;
  for (std::size_t r = 0; r < scaled.rows(); ++r) {
    for (std::size_t k = 0; k < d.size(); ++k) scaled(r, k) *= d[k];
  }
  return Matmul(scaled, Transpose(b));
}

SvdFactors Svd(const Matrix& a, const SvdOptions& options) {
  if (a.rows() == 0 || a.cols() == 0) {
    throw Error(ErrorCode::kInvalidInput, "SVD of an empty matrix");
  }
  RequireFinite(a, "svd");
  // Orthogonalise the columns of the taller orientation so that the work
  // matrix has exactly m = min(rows, cols) vectors.
  const bool tall = a.rows() >= a.cols();
  Matrix w = tall ? Transpose(a) : a;  // m x len, one vector per row
  const std::size_t m = w.rows();
  const std::size_t len = w.cols();
  Matrix v = Matrix::Identity(m);  // rows are right vectors (m x m)
  JacobiOrthogonalize(w, v, options);

  std::vector<double> norms(m);
  for (std::size_t j = 0; j < m; ++j) {
    norms[j] = std::sqrt(Dot(w.row(j).data(), w.row(j).data(), len));
  }
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return norms[x] > norms[y]; });

  // Left vectors as rows (m x len); right vectors as rows (m x m).
  Matrix left(m, len);
  Matrix right(m, m);
  std::vector<double> s(m);
  std::vector<std::size_t> zero_rows;
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t src = order[j];
    s[j] = norms[src];
    for (std::size_t k = 0; k < m; ++k) right(j, k) = v(src, k);
    if (s[j] == 0.0) {
      zero_rows.push_back(j);
      continue;
    }
    for (std::size_t k = 0; k < len; ++k) left(j, k) = w(src, k) / s[j];
  }
  if (!zero_rows.empty()) CompleteOrthonormalRows(left, zero_rows);

  // v holds the rotations applied to the basis of the short side; its rows
  // after Jacobi are the singular vectors of that side.
  SvdFactors f;
  f.s = std::move(s);
  if (tall) {
    // w = a^T rotated: rows of `left` live in R^rows(a) -> U; `right` -> V.
    f.u = Transpose(left);
    f.v = Transpose(right);
  } else {
    f.u = Transpose(right);
    f.v = Transpose(left);
  }
  CanonicalizeSigns(f);
  return f;
}

void CanonicalizeSigns(SvdFactors& f) {
  for (std::size_t j = 0; j < f.u.cols(); ++j) {
    std::size_t arg = 0;
    double best = -1.0;
    for (std::size_t r = 0; r < f.u.rows(); ++r) {
      const double mag = std::abs(f.u(r, j));
      if (mag > best) {
        best = mag;
        arg = r;
      }
    }
    if (f.u(arg, j) < 0.0) {
      for (std::size_t r = 0; r < f.u.rows(); ++r) f.u(r, j) = -f.u(r, j);
      for (std::size_t r = 0; r < f.v.rows(); ++r) f.v(r, j) = -f.v(r, j);
    }
  }
}

Matrix Reconstruct(const SvdFactors& f) { return ScaledOuterSum(f.u, f.s, f.v); }

LowRankPair Truncate(const SvdFactors& f, std::size_t rank) {
  const std::size_t m = f.s.size();
  if (rank < 1 || rank > m) {
    throw Error(ErrorCode::kRank, "rank " + std::to_string(rank) +
                                      " outside [1, " + std::to_string(m) + "]");
  }
  LowRankPair out;
  out.left = ColumnBlock(f.u, 0, rank);
  for (std::size_t r = 0; r < out.left.rows(); ++r) {
    for (std::size_t k = 0; k < rank; ++k) out.left(r, k) *= f.s[k];
  }
  out.right = Transpose(ColumnBlock(f.v, 0, rank));
  return out;
}

}  // namespace deltaforge
