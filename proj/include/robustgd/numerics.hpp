/* Copyright (c) 2026 The robustgd Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License. */

// Dense linear algebra, projections and seeded samplers used by every other
// component. Everything here is a pure function over value inputs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robustgd/errors.hpp"

namespace robustgd {

using Vector = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return std::sqrt(s);
}

/// Row-major dense matrix. Point sets are stored one point per column.
class DenseMatrix {
 public:
  DenseMatrix() = default;
  DenseMatrix(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), data_(rows * cols, 0.0) {}
  DenseMatrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_)
      throw DimensionError("DenseMatrix: entry count != rows*cols");
    for (double x : data_)
      if (!std::isfinite(x)) throw Error("DenseMatrix: non-finite entry");
  }

  /// Builds a d x m matrix whose j-th column is columns[j].
  static DenseMatrix from_columns(const std::vector<Vector>& columns) {
    if (columns.empty()) return {};
    DenseMatrix out(columns.front().size(), columns.size());
    for (std::size_t j = 0; j < columns.size(); ++j) {
      if (columns[j].size() != out.rows_)
        throw DimensionError("from_columns: ragged columns");
      for (std::size_t i = 0; i < out.rows_; ++i) out(i, j) = columns[j][i];
    }
    return out;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::span<const double> data() const { return data_; }
  std::span<double> data() { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }

  Vector column(std::size_t c) const {
    Vector out(rows_);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
    return out;
  }

  void set_column(std::size_t c, std::span<const double> v) {
    if (v.size() != rows_) throw DimensionError("set_column: length mismatch");
    for (std::size_t r = 0; r < rows_; ++r) (*this)(r, c) = v[r];
  }

  DenseMatrix transpose() const {
    DenseMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

  Vector multiply(std::span<const double> x) const {
    if (x.size() != cols_) throw DimensionError("multiply: length mismatch");
    Vector out(rows_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r) out[r] = dot(row(r), x);
    return out;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double x) { return std::isfinite(x); });
  }

  bool operator==(const DenseMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Symmetric matrix in full (unpacked) storage.
class SymmetricMatrix {
 public:
  SymmetricMatrix() = default;
  explicit SymmetricMatrix(std::size_t dim) : dim_(dim), data_(dim * dim, 0.0) {}

  static SymmetricMatrix identity(std::size_t dim) {
    SymmetricMatrix m(dim);
    for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
    return m;
  }

  static SymmetricMatrix diagonal(std::span<const double> diag) {
    SymmetricMatrix m(diag.size());
    for (std::size_t i = 0; i < diag.size(); ++i) m(i, i) = diag[i];
    return m;
  }

  /// Validates squareness, finiteness and symmetry (1e-12 relative).
  static SymmetricMatrix from_dense(const DenseMatrix& a) {
    if (a.rows() != a.cols()) throw DimensionError("SymmetricMatrix: not square");
    if (!a.all_finite()) throw Error("SymmetricMatrix: non-finite entry");
    double scale = 0.0;
    for (double x : a.data()) scale = std::max(scale, std::abs(x));
    SymmetricMatrix m(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = 0; j < a.cols(); ++j) {
        if (std::abs(a(i, j) - a(j, i)) > 1e-12 * std::max(scale, 1.0))
          throw Error("SymmetricMatrix: input is not symmetric");
        m(i, j) = 0.5 * (a(i, j) + a(j, i));
      }
    return m;
  }

  /// A * A^T for a d x m matrix A.
  static SymmetricMatrix gram_rows(const DenseMatrix& a) {
    SymmetricMatrix m(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i)
      for (std::size_t j = i; j < a.rows(); ++j) {
        const double v = dot(a.row(i), a.row(j));
        m(i, j) = v;
        m(j, i) = v;
      }
    return m;
  }

  std::size_t dim() const { return dim_; }
  std::span<const double> data() const { return data_; }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * dim_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * dim_ + c]; }

  /// this += weight * x x^T
  void add_outer(double weight, std::span<const double> x) {
    if (x.size() != dim_) throw DimensionError("add_outer: length mismatch");
    for (std::size_t i = 0; i < dim_; ++i) {
      const double wi = weight * x[i];
      double* row = data_.data() + i * dim_;
      for (std::size_t j = 0; j < dim_; ++j) row[j] += wi * x[j];
    }
  }

  Vector multiply(std::span<const double> x) const {
    if (x.size() != dim_) throw DimensionError("multiply: length mismatch");
    Vector out(dim_, 0.0);
    for (std::size_t i = 0; i < dim_; ++i) out[i] = dot({data_.data() + i * dim_, dim_}, x);
    return out;
  }

  double quadratic_form(std::span<const double> x) const { return dot(x, multiply(x)); }

 private:
  std::size_t dim_ = 0;
  std::vector<double> data_;
};

/// splitmix64 finalizer; used to derive child seeds from coordinates.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t hash_combine(std::uint64_t seed, std::uint64_t value) {
  return mix64(seed ^ mix64(value));
}

/// A reproducible random stream keyed by (seed, stream id).
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed = 0, std::uint64_t stream = 0)
      : seed_(seed), stream_(stream) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(stream),
                      static_cast<std::uint32_t>(stream >> 32), 0x5eedu};
    engine_.seed(seq);
  }

  std::uint64_t seed() const { return seed_; }
  std::uint64_t stream() const { return stream_; }

  /// Independent child stream; does not advance this one.
  RngStream child(std::uint64_t id) const { return RngStream(seed_, hash_combine(stream_, id)); }

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  std::uint64_t next_u64() { return engine_(); }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

/// Euclidean projection of v onto {w : 0 <= w_j <= cap, sum_j w_j = 1}.
///
/// w_j = clip(v_j - lambda, 0, cap) with lambda the root of mass(lambda) = 1.
/// Safeguarded Newton on lambda, falling back to bisection inside the bracket;
/// the sum constraint holds to rounding error.
inline Vector project_capped_simplex(std::span<const double> v, double cap) {
  const std::size_t k = v.size();
  if (k == 0 || !(cap > 0.0)) throw FeasibilityError("capped simplex: empty set");
  if (cap * static_cast<double>(k) < 1.0 - 1e-12)
    throw FeasibilityError("capped simplex: cap * k < 1 (" + std::to_string(cap) + " * " +
                           std::to_string(k) + ")");
  Vector w(k);
  if (cap * static_cast<double>(k) <= 1.0) {
    std::fill(w.begin(), w.end(), 1.0 / static_cast<double>(k));
    return w;
  }
  // mass(lambda) = sum_j clamp(v_j - lambda, 0, cap) is non-increasing and
  // piecewise linear; Newton steps on it are exact once the free set settles.
  // A bracket [lo, hi] with mass(lo) >= 1 > mass(hi) guards against cycling.
  double lo = *std::min_element(v.begin(), v.end()) - cap;
  double hi = *std::max_element(v.begin(), v.end());
  double lambda = lo;
  for (int it = 0; it < 200; ++it) {
    double mass = 0.0;
    std::size_t free = 0;
    for (double x : v) {
      const double t = x - lambda;
      if (t >= cap) {
        mass += cap;
      } else if (t > 0.0) {
        mass += t;
        ++free;
      }
    }
    if (std::abs(mass - 1.0) <= 1e-15) break;
    (mass >= 1.0 ? lo : hi) = lambda;
    double next = free > 0 ? lambda + (mass - 1.0) / static_cast<double>(free) : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (next == lambda) break;
    lambda = next;
  }
  for (std::size_t j = 0; j < k; ++j) w[j] = std::clamp(v[j] - lambda, 0.0, cap);

  // Spread the rounding residue over the free coordinates.
  const double err = 1.0 - std::accumulate(w.begin(), w.end(), 0.0);
  if (err != 0.0) {
    std::size_t free = 0;
    for (double x : w) free += (x > 0.0 && x < cap) ? 1 : 0;
    if (free > 0) {
      const double share = err / static_cast<double>(free);
      for (double& x : w)
        if (x > 0.0 && x < cap) x = std::clamp(x + share, 0.0, cap);
    }
  }
  return w;
}

struct EigPair {
  double value = 0.0;
  Vector vector;
  bool converged = false;
  int iterations = 0;
};

/// Dominant eigenpair of a symmetric PSD matrix by power iteration.
/// Stops once ||Mv - lambda v|| <= tol * max(lambda, 1). A stalled run is
/// restarted from the best iterate plus a 1e-10 random perturbation. If
/// max_iter is exhausted the best iterate is returned with converged = false.
inline EigPair top_eigpair(const SymmetricMatrix& m, double tol, int max_iter, RngStream& rng,
                           std::span<const double> start = {}) {
  const std::size_t d = m.dim();
  if (d == 0) throw DimensionError("top_eigpair: empty matrix");
  if (!(tol > 0.0)) throw Error("top_eigpair: tol must be positive");

  Vector v(d);
  if (start.size() == d && norm2(start) > 0.0) {
    std::copy(start.begin(), start.end(), v.begin());
  } else {
    for (double& x : v) x = rng.normal();
  }
  auto normalize = [](Vector& x) {
    const double n = norm2(x);
    if (n > 0.0)
      for (double& e : x) e /= n;
    return n;
  };
  normalize(v);

  EigPair best;
  double best_rel = std::numeric_limits<double>::infinity();
  int since_improvement = 0;
  for (int it = 1; it <= max_iter; ++it) {
    Vector w = m.multiply(v);
    const double lambda = dot(v, w);
    double res2 = 0.0;
    for (std::size_t i = 0; i < d; ++i) res2 += (w[i] - lambda * v[i]) * (w[i] - lambda * v[i]);
    const double res = std::sqrt(res2);
    const double rel = res / std::max(lambda, 1.0);
    if (rel < best_rel * 0.999) {
      since_improvement = 0;
    } else {
      ++since_improvement;
    }
    if (rel < best_rel) {
      best_rel = rel;
      best.value = lambda;
      best.vector = v;
      best.iterations = it;
    }
    if (res <= tol * std::max(lambda, 1.0)) {
      best.converged = true;
      best.iterations = it;
      return best;
    }
    if (normalize(w) == 0.0) {
      // v lies in the kernel; a fresh random direction breaks the tie.
      for (double& x : v) x = rng.normal();
      normalize(v);
      continue;
    }
    v = std::move(w);
    if (since_improvement >= 200) {
      v = best.vector;
      for (double& x : v) x += 1e-10 * rng.normal();
      normalize(v);
      since_improvement = 0;
    }
  }
  best.iterations = max_iter;
  return best;
}

struct SymmetricEigen {
  Vector values;        // ascending
  DenseMatrix vectors;  // column k pairs with values[k]
};

/// Full eigendecomposition by cyclic Jacobi rotations. If `basis` is a d x d
/// orthogonal matrix close to the eigenvectors (e.g. from a previous, nearby
/// matrix) the sweep count drops to one or two.
inline SymmetricEigen symmetric_eigen(const SymmetricMatrix& m, const DenseMatrix* basis = nullptr) {
  const std::size_t d = m.dim();
  DenseMatrix a(d, d);
  DenseMatrix v(d, d);
  if (basis != nullptr && basis->rows() == d && basis->cols() == d) {
    // a = B^T M B
    DenseMatrix mb(d, d);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        const double mik = m(i, k);
        if (mik == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) mb(i, j) += mik * (*basis)(k, j);
      }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t k = 0; k < d; ++k) {
        const double bki = (*basis)(k, i);
        if (bki == 0.0) continue;
        for (std::size_t j = 0; j < d; ++j) a(i, j) += bki * mb(k, j);
      }
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < i; ++j) a(i, j) = a(j, i) = 0.5 * (a(i, j) + a(j, i));
    v = *basis;
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) a(i, j) = m(i, j);
      v(i, i) = 1.0;
    }
  }

  double total = 0.0;
  for (double x : a.data()) total += x * x;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i + 1; j < d; ++j) off += a(i, j) * a(i, j);
    if (off <= 1e-30 * total || off == 0.0) break;
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (std::abs(apq) <= 1e-300) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) /
                         (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < d; ++k) {
          const double akp = a(k, p);
          const double akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double apk = a(p, k);
          const double aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < d; ++k) {
          const double vkp = v(k, p);
          const double vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) { return a(x, x) < a(y, y); });
  SymmetricEigen out{Vector(d), DenseMatrix(d, d)};
  for (std::size_t k = 0; k < d; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < d; ++i) out.vectors(i, k) = v(i, order[k]);
  }
  return out;
}

/// Operator norm of a, via the smaller of the two Gram matrices.
inline double spectral_norm(const DenseMatrix& a, double tol, int max_iter, RngStream& rng) {
  if (a.rows() == 0 || a.cols() == 0) return 0.0;
  const SymmetricMatrix g =
      a.rows() <= a.cols() ? SymmetricMatrix::gram_rows(a) : SymmetricMatrix::gram_rows(a.transpose());
  const EigPair top = top_eigpair(g, tol, max_iter, rng);
  return std::sqrt(std::max(top.value, 0.0));
}

inline Vector sample_gaussian(std::size_t d, RngStream& rng) {
  Vector out(d);
  for (double& x : out) x = rng.normal();
  return out;
}

inline DenseMatrix sample_gaussian_matrix(std::size_t d, std::size_t m, RngStream& rng) {
  DenseMatrix out(d, m);
  for (double& x : out.data()) x = rng.normal();
  return out;
}

/// One draw from the Laplace law with density (1/sqrt 2) exp(-sqrt(2)|x|):
/// mean 0, variance 1.
inline double sample_laplace(RngStream& rng) {
  const double u = rng.uniform();
  // 1 - u lies in (0, 1], so the log is finite.
  const double e = -std::log1p(-u) / std::sqrt(2.0);
  return (rng.next_u64() & 1u) ? e : -e;
}

/// d x m matrix of i.i.d. unit-variance Laplace entries.
inline DenseMatrix sample_laplace_matrix(std::size_t d, std::size_t m, RngStream& rng) {
  if (d == 0 || m == 0) throw DimensionError("sample_laplace_matrix: d, m must be >= 1");
  DenseMatrix out(d, m);
  for (double& x : out.data()) x = sample_laplace(rng);
  return out;
}

}  // namespace robustgd
