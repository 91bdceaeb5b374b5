/*
 * Copyright 2026 The incda Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#ifndef INCDA_BAND_LINALG_HPP_
#define INCDA_BAND_LINALG_HPP_

#include <algorithm>
#include <cmath>
#include <span>
#include <utility>
#include <vector>

#include "incda/common.hpp"

namespace incda {

/*
 * Symmetric band matrix, lower band only.
 *
 * Storage is diagonal-major: column i of `data` holds the entries
 * A(i, i), A(i, i-1), ..., A(i, i-b). Slots with i-k < 0 are kept at zero.
 * Stored entry (i, j) with i > j stands for both A(i, j) and A(j, i).
 */
class BandMatrix {
 public:
  BandMatrix() = default;
  BandMatrix(Index dim, Index half_bandwidth)
      : dim_(dim),
        half_bandwidth_(half_bandwidth),
        data_(Matrix::Zero(half_bandwidth + 1, dim)) {
    if (dim < 1 || half_bandwidth < 0) {
      throw Error(ErrorCode::DimensionMismatch, "band matrix needs dim >= 1, b >= 0");
    }
  }

  static BandMatrix identity(Index dim) {
    BandMatrix out(dim, 0);
    out.data_.row(0).setOnes();
    return out;
  }

  Index dim() const noexcept { return dim_; }
  Index half_bandwidth() const noexcept { return half_bandwidth_; }

  /// Number of doubles held, (b + 1) * d.
  Index storage_size() const noexcept { return data_.size(); }

  bool in_band(Index i, Index j) const noexcept {
    return std::abs(i - j) <= half_bandwidth_;
  }

  /// Reads A(i, j) for any i, j; zero outside the band.
  double operator()(Index i, Index j) const {
    if (i < j) std::swap(i, j);
    if (i - j > half_bandwidth_) return 0.0;
    return data_(i - j, i);
  }

  /// Mutable access to the stored entry for (i, j); requires |i - j| <= b.
  double& at(Index i, Index j) {
    if (i < j) std::swap(i, j);
    return data_(i - j, i);
  }

  /// Row k is the k-th sub-diagonal, indexed by the row of the entry.
  const Matrix& data() const noexcept { return data_; }
  Matrix& data() noexcept { return data_; }

  Matrix to_dense() const {
    Matrix dense = Matrix::Zero(dim_, dim_);
    for (Index i = 0; i < dim_; ++i) {
      for (Index k = 0; k <= std::min(half_bandwidth_, i); ++k) {
        dense(i, i - k) = data_(k, i);
        dense(i - k, i) = data_(k, i);
      }
    }
    return dense;
  }

  static BandMatrix from_dense(const Matrix& dense, Index half_bandwidth) {
    BandMatrix out(dense.rows(), half_bandwidth);
    for (Index i = 0; i < out.dim_; ++i) {
      for (Index k = 0; k <= std::min(half_bandwidth, i); ++k) {
        out.data_(k, i) = dense(i, i - k);
      }
    }
    return out;
  }

 private:
  Index dim_ = 0;
  Index half_bandwidth_ = 0;
  Matrix data_;
};

/// Lower band factor L with L * L^T equal to the factored matrix.
struct BandCholesky {
  BandMatrix factor;  // lower triangle of the band, read as L(i, j) for i >= j

  Index dim() const noexcept { return factor.dim(); }
  Index half_bandwidth() const noexcept { return factor.half_bandwidth(); }

  double lower(Index i, Index j) const { return factor.data()(i - j, i); }

  Matrix to_dense_lower() const {
    const Index d = dim(), b = half_bandwidth();
    Matrix dense = Matrix::Zero(d, d);
    for (Index i = 0; i < d; ++i) {
      for (Index k = 0; k <= std::min(b, i); ++k) dense(i, i - k) = factor.data()(k, i);
    }
    return dense;
  }
};

/// Relative pivot threshold: a pivot <= this times the largest diagonal fails.
inline constexpr double kPivotTolerance = 1e-12;

/**
 * Banded Cholesky factorization (the block generalization of the Thomas
 * algorithm). Cost O(d b^2); the factor keeps the input bandwidth.
 * Throws NotPositiveDefinite with the index of the first bad pivot.
 */
inline BandCholesky band_cholesky(const BandMatrix& a) {
  const Index d = a.dim(), b = a.half_bandwidth(), w = b + 1;
  const double* src = a.data().data();
  double max_diag = 0.0;
  for (Index i = 0; i < d; ++i) max_diag = std::max(max_diag, src[i * w]);
  const double floor = kPivotTolerance * max_diag;

  BandCholesky out{BandMatrix(d, b)};
  double* l = out.factor.data().data();
  // Column i of the storage holds row i of L from the diagonal leftwards,
  // so row(i)[-k] below is L(i, i - k) walked as L(i, k) for descending k.
  for (Index i = 0; i < d; ++i) {
    const Index first = std::max<Index>(0, i - b);
    double* row_i = l + i * w + i;  // row_i[-k] = L(i, k)
    const double* a_i = src + i * w + i;
    for (Index j = first; j <= i; ++j) {
      const double* row_j = l + j * w + j;
      double s = a_i[-j];
      for (Index k = first; k < j; ++k) s -= row_i[-k] * row_j[-k];
      if (j == i) {
        if (!(s > floor)) throw NotPositiveDefinite(i, s);
        row_i[-i] = std::sqrt(s);
      } else {
        row_i[-j] = s / row_j[-j];
      }
    }
  }
  return out;
}

/// Solves (L L^T) x = rhs by forward and backward banded substitution.
inline Vector band_solve(const BandCholesky& chol, const Vector& rhs) {
  const Index d = chol.dim(), b = chol.half_bandwidth(), w = b + 1;
  require_dim(rhs.size(), d, "band_solve rhs");
  const double* l = chol.factor.data().data();
  Vector out = rhs;
  double* x = out.data();
  for (Index i = 0; i < d; ++i) {
    const double* row = l + i * w + i;  // row[-k] = L(i, k)
    double s = x[i];
    for (Index k = std::max<Index>(0, i - b); k < i; ++k) s -= row[-k] * x[k];
    x[i] = s / row[-i];
  }
  for (Index i = d - 1; i >= 0; --i) {
    double s = x[i];
    const Index last = std::min(d - 1, i + b);
    for (Index k = i + 1; k <= last; ++k) s -= l[k * w + (k - i)] * x[k];
    x[i] = s / l[i * w];
  }
  return out;
}

inline Vector band_matvec(const BandMatrix& a, const Vector& v) {
  const Index d = a.dim(), b = a.half_bandwidth(), w = b + 1;
  require_dim(v.size(), d, "band_matvec vector");
  const double* m = a.data().data();
  Vector result(d);
  double* out = result.data();
  const double* x = v.data();
  for (Index i = 0; i < d; ++i) out[i] = m[i * w] * x[i];
  for (Index i = 1; i < d; ++i) {
    const double* col = m + i * w;
    const Index kmax = std::min(b, i);
    double acc = 0.0;
    for (Index k = 1; k <= kmax; ++k) {
      acc += col[k] * x[i - k];
      out[i - k] += col[k] * x[i];
    }
    out[i] += acc;
  }
  return result;
}

/// Returns A with `values` added on the main diagonal at `indices`.
inline BandMatrix add_to_band_diagonal(BandMatrix a, std::span<const Index> indices,
                                       const Vector& values) {
  require_dim(values.size(), static_cast<Index>(indices.size()), "diagonal values");
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Index i = indices[n];
    if (i < 0 || i >= a.dim()) {
      throw Error(ErrorCode::IndexOutOfRange, "diagonal index " + std::to_string(i));
    }
    a.data()(0, i) += values(static_cast<Index>(n));
  }
  return a;
}

/**
 * Updates L in place so that L L^T gains `values` on the diagonal at
 * `indices` (values >= 0). Unlike refactoring the explicit sum this never
 * subtracts, so it cannot lose definiteness to rounding. One sweep carries
 * the pending rank-one terms as at most b + 1 rows over the current band
 * window, recompressed by Givens rotations, so the factor keeps its
 * bandwidth and the cost is O(d b^2) however many entries there are.
 */
inline void band_cholesky_add_diagonal(BandCholesky& chol, std::span<const Index> indices,
                                       const Vector& values) {
  require_dim(values.size(), static_cast<Index>(indices.size()), "diagonal values");
  const Index d = chol.dim(), b = chol.half_bandwidth(), w = b + 1;
  std::vector<double> added(static_cast<std::size_t>(d), 0.0);
  for (std::size_t n = 0; n < indices.size(); ++n) {
    const Index j = indices[n];
    if (j < 0 || j >= d) throw Error(ErrorCode::IndexOutOfRange, "diagonal index " + std::to_string(j));
    const double v = values(static_cast<Index>(n));
    if (!(v >= 0.0)) throw Error(ErrorCode::NotPositiveDefinite, "negative diagonal update");
    added[static_cast<std::size_t>(j)] += v;
  }
  double* l = chol.factor.data().data();
  Matrix x = Matrix::Zero(w + 1, w);  // x(r, t) is pending row r at index k + t
  Index rows = 0;
  for (Index k = 0; k < d; ++k) {
    if (added[static_cast<std::size_t>(k)] > 0.0) {
      x.row(rows).setZero();
      x(rows++, 0) = std::sqrt(added[static_cast<std::size_t>(k)]);
    }
    if (rows == 0) continue;
    const Index reach = std::min(b, d - 1 - k);
    for (Index r = 0; r < rows; ++r) {
      if (x(r, 0) == 0.0) continue;
      double& lkk = l[k * w];
      const double rad = std::hypot(lkk, x(r, 0));
      const double c = rad / lkk, s = x(r, 0) / lkk;
      lkk = rad;
      x(r, 0) = 0.0;
      for (Index t = 1; t <= reach; ++t) {
        double& lik = l[(k + t) * w + t];
        lik = (lik + s * x(r, t)) / c;
        x(r, t) = c * x(r, t) - s * lik;
      }
    }
    if (b == 0) {
      rows = 0;
      continue;
    }
    x.topLeftCorner(rows, b) = x.block(0, 1, rows, b).eval();
    x.col(b).head(rows).setZero();
    if (rows <= b) continue;
    // rows == b + 1 vectors in b live columns: rotate the last one to zero.
    for (Index col = 0; col < b; ++col) {
      for (Index r = rows - 1; r > col; --r) {
        const double p = x(r - 1, col), q = x(r, col);
        if (q == 0.0) continue;
        const double rad = std::hypot(p, q), c = p / rad, s = q / rad;
        for (Index t = col; t < b; ++t) {
          const double u = x(r - 1, t), v = x(r, t);
          x(r - 1, t) = c * u + s * v;
          x(r, t) = c * v - s * u;
        }
      }
    }
    --rows;
  }
}

/**
 * Gradient w.r.t. the stored band entries of sym(u v^T) + sym(v u^T) style
 * outer products: entry (i, j), i > j, gets u_i v_j + u_j v_i; the diagonal
 * gets u_i v_i. Matches perturbing one stored (symmetric) entry.
 */
inline BandMatrix stored_outer_gradient(const Vector& u, const Vector& v, Index half_bandwidth) {
  const Index d = u.size();
  BandMatrix out(d, half_bandwidth);
  Matrix& m = out.data();
  for (Index i = 0; i < d; ++i) {
    m(0, i) = u(i) * v(i);
    for (Index k = 1; k <= std::min(half_bandwidth, i); ++k) {
      m(k, i) = u(i) * v(i - k) + u(i - k) * v(i);
    }
  }
  return out;
}

struct BandSolveAdjoint {
  Vector grad_rhs;
  BandMatrix grad_matrix;  // gradient w.r.t. stored entries
};

/**
 * Reverse-mode rule for x = A^{-1} rhs given dL/dx:
 * grad_rhs = A^{-1} grad_x, grad_A = -sym(grad_rhs x^T) on the stored band.
 */
inline BandSolveAdjoint band_solve_adjoint(const BandCholesky& chol, const Vector& x,
                                           const Vector& grad_x) {
  require_dim(x.size(), chol.dim(), "band_solve_adjoint x");
  require_dim(grad_x.size(), chol.dim(), "band_solve_adjoint grad_x");
  BandSolveAdjoint out{band_solve(chol, grad_x), BandMatrix()};
  out.grad_matrix = stored_outer_gradient(out.grad_rhs, x, chol.half_bandwidth());
  out.grad_matrix.data() *= -1.0;
  return out;
}

/// L L^T for a band factor of half-bandwidth b; the result has half-bandwidth 2b.
inline BandMatrix band_gram(const BandCholesky& chol) {
  const Index d = chol.dim(), b = chol.half_bandwidth(), w = b + 1;
  const Index bb = std::min<Index>(2 * b, d - 1), wg = bb + 1;
  const double* l = chol.factor.data().data();
  BandMatrix out(d, bb);
  double* g = out.data().data();
  // (L L^T)(i, j) = sum_k L(i, k) L(j, k), k in [i - b, j] for j <= i.
  for (Index i = 0; i < d; ++i) {
    const double* row_i = l + i * w + i;
    const Index first = std::max<Index>(0, i - b);
    for (Index j = std::max<Index>(0, i - bb); j <= i; ++j) {
      const double* row_j = l + j * w + j;
      double s = 0.0;
      for (Index k = first; k <= j; ++k) s += row_i[-k] * row_j[-k];
      g[i * wg + (i - j)] = s;
    }
  }
  return out;
}

/**
 * Pulls a stored-entry gradient of L L^T back to the band entries of L.
 * With S the full symmetric gradient (off-diagonals as stored, diagonal
 * doubled), dL = S L restricted to the lower band.
 */
inline BandMatrix band_gram_adjoint(const BandCholesky& chol, const BandMatrix& grad_gram) {
  const Index d = chol.dim(), b = chol.half_bandwidth(), w = b + 1;
  const Index bg = grad_gram.half_bandwidth(), wg = bg + 1;
  const double* l = chol.factor.data().data();
  const double* g = grad_gram.data().data();
  BandMatrix out(d, b);
  double* o = out.data().data();
  // dL(i, j) = sum_k S(i, k) L(k, j), k in [j, j + b].
  for (Index i = 0; i < d; ++i) {
    for (Index j = std::max<Index>(0, i - b); j <= i; ++j) {
      const Index last = std::min({d - 1, j + b, i + bg});
      const Index first = std::max(j, i - bg);
      double s = 0.0;
      for (Index k = first; k <= last; ++k) {
        const double lkj = l[k * w + (k - j)];
        if (k < i) {
          s += g[i * wg + (i - k)] * lkj;
        } else if (k == i) {
          s += 2.0 * g[i * wg] * lkj;
        } else {
          s += g[k * wg + (k - i)] * lkj;
        }
      }
      o[i * w + (i - j)] = s;
    }
  }
  return out;
}

}  // namespace incda

#endif  // INCDA_BAND_LINALG_HPP_
