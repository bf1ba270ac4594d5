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

#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "robustgd/numerics.hpp"

using namespace robustgd;

namespace {

SymmetricMatrix random_psd(std::size_t d, RngStream& rng, std::size_t rank = 0) {
  const std::size_t k = rank == 0 ? d + 2 : rank;
  SymmetricMatrix m(d);
  for (std::size_t i = 0; i < k; ++i) m.add_outer(1.0, sample_gaussian(d, rng));
  return m;
}

Eigen::MatrixXd to_eigen(const SymmetricMatrix& m) {
  Eigen::MatrixXd out(m.dim(), m.dim());
  for (std::size_t i = 0; i < m.dim(); ++i)
    for (std::size_t j = 0; j < m.dim(); ++j) out(i, j) = m(i, j);
  return out;
}

// Independent reference: bisection on the shift until the sum is exact to 1e-14.
Vector projection_oracle(const Vector& v, double cap) {
  double lo = *std::min_element(v.begin(), v.end()) - cap, hi = *std::max_element(v.begin(), v.end());
  auto mass = [&](double l) {
    double s = 0;
    for (double x : v) s += std::clamp(x - l, 0.0, cap);
    return s;
  };
  for (int it = 0; it < 400; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mass(mid) > 1.0 ? lo : hi) = mid;
  }
  Vector w(v.size());
  for (std::size_t j = 0; j < v.size(); ++j) w[j] = std::clamp(v[j] - 0.5 * (lo + hi), 0.0, cap);
  return w;
}

}  // namespace

TEST(DenseMatrix, RejectsBadShapesAndNonFinite) {
  EXPECT_THROW(DenseMatrix(2, 2, Vector{1, 2, 3}), DimensionError);
  EXPECT_THROW(DenseMatrix(1, 2, Vector{1, NAN}), Error);
  EXPECT_THROW(dot(Vector{1, 2}, Vector{1}), DimensionError);
}

TEST(DenseMatrix, TransposeAndMultiply) {
  DenseMatrix a(2, 3, Vector{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(a.transpose().transpose(), a);
  EXPECT_EQ(a.multiply(Vector{1, 0, -1}), (Vector{-2, -2}));
  EXPECT_EQ(a.column(1), (Vector{2, 5}));
}

TEST(SymmetricMatrix, FromDenseChecksSymmetry) {
  EXPECT_THROW(SymmetricMatrix::from_dense(DenseMatrix(2, 2, Vector{1, 2, 3, 1})), Error);
  const SymmetricMatrix s = SymmetricMatrix::from_dense(DenseMatrix(2, 2, Vector{1, 2, 2, 1}));
  EXPECT_DOUBLE_EQ(s.quadratic_form(Vector{1, 1}), 6.0);
}

TEST(CappedSimplex, AlreadyFeasibleIsFixed) {
  for (std::size_t k : {1u, 3u, 7u}) {
    Vector v(k, 1.0 / static_cast<double>(k));
    const Vector w = project_capped_simplex(v, 1.0 / static_cast<double>(k) + 0.1);
    for (std::size_t j = 0; j < k; ++j) EXPECT_NEAR(w[j], v[j], 1e-15);
  }
}

TEST(CappedSimplex, VertexCase) {
  const Vector w = project_capped_simplex(Vector{10, 0, 0}, 1.0);
  EXPECT_NEAR(w[0], 1.0, 1e-15);
  EXPECT_NEAR(w[1], 0.0, 1e-15);
  EXPECT_NEAR(w[2], 0.0, 1e-15);
}

TEST(CappedSimplex, WorkedExample) {
  // shift 0.2: clip(0.7) = 0.6, 0.4, clip(-0.7) = 0
  const Vector w = project_capped_simplex(Vector{0.9, 0.6, -0.5}, 0.6);
  EXPECT_NEAR(w[0], 0.6, 1e-12);
  EXPECT_NEAR(w[1], 0.4, 1e-12);
  EXPECT_NEAR(w[2], 0.0, 1e-12);
}

TEST(CappedSimplex, InfeasibleCapThrows) {
  EXPECT_THROW(project_capped_simplex(Vector{1, 2, 3}, 0.3), FeasibilityError);
  EXPECT_THROW(project_capped_simplex(Vector{}, 1.0), FeasibilityError);
}

TEST(CappedSimplex, TightCapGivesUniform) {
  const Vector w = project_capped_simplex(Vector{5, -1, 2, 0}, 0.25);
  for (double x : w) EXPECT_DOUBLE_EQ(x, 0.25);
}

TEST(CappedSimplexProperty, MatchesBisectionOracleAndStaysFeasible) {
  RngStream rng(101, 0);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t k = 1 + rng.next_u64() % 40;
    const double cap = (1.0 + 4.0 * rng.uniform()) / static_cast<double>(k);
    Vector v = sample_gaussian(k, rng);
    if (t % 3 == 0)
      for (double& x : v) x *= 50.0;
    const Vector w = project_capped_simplex(v, cap);
    const Vector o = projection_oracle(v, cap);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      EXPECT_GE(w[j], 0.0);
      EXPECT_LE(w[j], cap);
      EXPECT_NEAR(w[j], o[j], 1e-9);
      sum += w[j];
    }
    EXPECT_NEAR(sum, 1.0, 1e-10);
  }
}

TEST(CappedSimplexProperty, NonExpansive) {
  RngStream rng(102, 0);
  for (int t = 0; t < 2000; ++t) {
    const std::size_t k = 2 + rng.next_u64() % 30;
    const double cap = (1.0 + 3.0 * rng.uniform()) / static_cast<double>(k);
    const Vector u = sample_gaussian(k, rng), v = sample_gaussian(k, rng);
    EXPECT_LE(distance(project_capped_simplex(u, cap), project_capped_simplex(v, cap)), distance(u, v) + 1e-12);
  }
}

TEST(TopEigpair, IdentityAndDiagonal) {
  RngStream rng(1, 0);
  const EigPair id = top_eigpair(SymmetricMatrix::identity(2), 1e-12, 1000, rng);
  EXPECT_NEAR(id.value, 1.0, 1e-12);
  EXPECT_NEAR(norm2(id.vector), 1.0, 1e-12);
  const EigPair dg = top_eigpair(SymmetricMatrix::diagonal(Vector{3, 1}), 1e-12, 10000, rng);
  EXPECT_TRUE(dg.converged);
  EXPECT_NEAR(dg.value, 3.0, 1e-10);
  EXPECT_NEAR(std::abs(dg.vector[0]), 1.0, 1e-10);
}

TEST(TopEigpair, MatchesDenseSolver) {
  RngStream rng(2, 0);
  for (std::size_t d : {3u, 5u, 12u}) {
    for (int t = 0; t < 20; ++t) {
      const SymmetricMatrix m = random_psd(d, rng);
      const EigPair e = top_eigpair(m, 1e-12, 200000, rng);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(to_eigen(m));
      EXPECT_TRUE(e.converged);
      EXPECT_NEAR(e.value, ref.eigenvalues()(d - 1), 1e-8 * std::max(1.0, e.value));
      Vector mv = m.multiply(e.vector);
      for (std::size_t k = 0; k < d; ++k) mv[k] -= e.value * e.vector[k];
      EXPECT_LE(norm2(mv), 1e-12 * std::max(1.0, e.value) * 1.0001);
    }
  }
}

TEST(TopEigpair, ReportsNonConvergence) {
  RngStream rng(3, 0);
  // nearly tied top pair: two iterations cannot separate them
  const EigPair e = top_eigpair(SymmetricMatrix::diagonal(Vector{1.0, 0.999999, 0.5}), 1e-14, 2, rng);
  EXPECT_FALSE(e.converged);
  EXPECT_NEAR(norm2(e.vector), 1.0, 1e-12);
}

TEST(TopEigpairProperty, EigenvalueDominatesRandomProbes) {
  RngStream rng(4, 0);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 2 + rng.next_u64() % 10;
    const SymmetricMatrix m = random_psd(d, rng, 1 + rng.next_u64() % d);
    const EigPair e = top_eigpair(m, 1e-12, 200000, rng);
    for (int p = 0; p < 20; ++p) {
      Vector v = sample_gaussian(d, rng);
      const double n = norm2(v);
      for (double& x : v) x /= n;
      EXPECT_GE(e.value + 1e-8 * std::max(1.0, e.value), m.quadratic_form(v));
    }
  }
}

TEST(SymmetricEigen, MatchesDenseSolver) {
  RngStream rng(5, 0);
  for (std::size_t d : {1u, 2u, 6u, 20u}) {
    const SymmetricMatrix m = random_psd(d, rng);
    const SymmetricEigen e = symmetric_eigen(m);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ref(to_eigen(m));
    for (std::size_t k = 0; k < d; ++k)
      EXPECT_NEAR(e.values[k], ref.eigenvalues()(k), 1e-10 * std::max(1.0, ref.eigenvalues()(d - 1)));
  }
}

TEST(SpectralNorm, ClosedForms) {
  RngStream rng(6, 0);
  EXPECT_EQ(spectral_norm(DenseMatrix(3, 4), 1e-12, 1000, rng), 0.0);
  DenseMatrix id(3, 3);
  for (std::size_t k = 0; k < 3; ++k) id(k, k) = 1.0;
  EXPECT_NEAR(spectral_norm(id, 1e-12, 1000, rng), 1.0, 1e-12);
  // u v^T with |u| = 2, |v| = 3
  const Vector u{2, 0, 0}, v{0, 3, 0, 0};
  DenseMatrix r1(3, 4);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 4; ++j) r1(i, j) = u[i] * v[j];
  EXPECT_NEAR(spectral_norm(r1, 1e-12, 1000, rng), 6.0, 1e-10);
}

TEST(SpectralNormProperty, TransposeInvariantAndMatchesSvd) {
  RngStream rng(7, 0);
  for (int t = 0; t < 30; ++t) {
    const std::size_t d = 1 + rng.next_u64() % 8, m = 1 + rng.next_u64() % 15;
    const DenseMatrix a = sample_laplace_matrix(d, m, rng);
    const double s = spectral_norm(a, 1e-13, 200000, rng);
    EXPECT_NEAR(s, spectral_norm(a.transpose(), 1e-13, 200000, rng), 1e-8);
    Eigen::MatrixXd ea(d, m);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = 0; j < m; ++j) ea(i, j) = a(i, j);
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(ea);
    EXPECT_NEAR(s, svd.singularValues()(0), 1e-8 * std::max(1.0, s));
  }
}

TEST(Samplers, LaplaceMoments) {
  RngStream rng(8, 0);
  const DenseMatrix a = sample_laplace_matrix(100, 1000, rng);
  double mean = 0.0, sq = 0.0, tail = 0.0;
  for (double x : a.data()) {
    mean += x;
    sq += x * x;
    tail += std::abs(x) >= 3.0 ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(a.data().size());
  EXPECT_NEAR(mean / n, 0.0, 0.01);
  EXPECT_NEAR(sq / n, 1.0, 0.05);
  EXPECT_NEAR(tail / n, std::exp(-3.0 * std::sqrt(2.0)), 0.003);
}

TEST(Samplers, GaussianMoments) {
  RngStream rng(9, 0);
  const Vector g = sample_gaussian(100000, rng);
  double mean = 0.0, sq = 0.0;
  for (double x : g) {
    mean += x;
    sq += x * x;
  }
  EXPECT_NEAR(mean / 1e5, 0.0, 0.01);
  EXPECT_NEAR(sq / 1e5, 1.0, 0.02);
  EXPECT_THROW(sample_laplace_matrix(0, 3, rng), DimensionError);
}

TEST(RngStreamProperty, SameSeedAndStreamIsBitIdentical) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    RngStream a(s, 5), b(s, 5), c(s, 6);
    const DenseMatrix x = sample_laplace_matrix(4, 7, a), y = sample_laplace_matrix(4, 7, b);
    EXPECT_EQ(x, y);
    EXPECT_NE(sample_laplace_matrix(4, 7, c), x);
  }
}
