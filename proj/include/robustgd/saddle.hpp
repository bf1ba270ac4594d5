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

// Min-max weight/certificate program used by the iterative filter:
//
//   min_W max_U  psi(W, U) = sum_i c_i r_i^T U r_i,   r_i = y_i - sum_j y_j W_ji
//
// over column-stochastic W with 0 <= W_ji <= cap and PSD U with trace <= 1.
// For fixed W the inner max is lambda_max(M(W)) with M(W) = sum_i c_i r_i r_i^T;
// for fixed U the columns of W decouple into small capped-simplex QPs.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <vector>

#include "robustgd/errors.hpp"
#include "robustgd/numerics.hpp"

namespace robustgd {

/// Upper bound on every W_ji for inlier fraction alpha over m original points.
inline double weight_cap(double alpha, std::size_t m) {
  return (4.0 - alpha) / (alpha * (2.0 + alpha) * static_cast<double>(m));
}

/// Bound on ||W||_F^2 implied by the box and column-sum constraints.
inline double weight_frobenius_bound(double alpha) {
  return (4.0 - alpha) / (alpha * (2.0 + alpha));
}

/// W restricted to the active set. columns.row(i) holds the column of W that
/// reconstructs active point i, indexed by active position j: W_ji.
struct WeightMatrix {
  std::vector<std::size_t> active_ids;
  DenseMatrix columns;
  double cap = 0.0;

  std::size_t size() const { return columns.rows(); }
  double weight(std::size_t j, std::size_t i) const { return columns(i, j); }
  std::span<const double> column(std::size_t i) const { return columns.row(i); }

  static WeightMatrix uniform(std::size_t n, double cap) {
    WeightMatrix w{{}, DenseMatrix(n, n), cap};
    w.active_ids.resize(n);
    std::iota(w.active_ids.begin(), w.active_ids.end(), std::size_t{0});
    for (double& x : w.columns.data()) x = 1.0 / static_cast<double>(n);
    return w;
  }

  double frobenius_squared() const {
    double s = 0.0;
    for (double x : columns.data()) s += x * x;
    return s;
  }

  /// Largest violation of the box and column-sum constraints.
  double feasibility_violation() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < size(); ++i) {
      double sum = 0.0;
      for (double x : column(i)) {
        worst = std::max({worst, -x, x - cap});
        sum += x;
      }
      worst = std::max(worst, std::abs(sum - 1.0));
    }
    return worst;
  }
};

/// Dual certificate U. `matrix` is PSD with unit trace; `direction` is its
/// dominant eigenvector; `value` is a lower bound on min_W psi(W, U).
struct Certificate {
  Vector direction;
  double value = 0.0;
  SymmetricMatrix matrix;

  static Certificate rank_one(std::span<const double> v, double value = 0.0) {
    const double n = norm2(v);
    if (!(n > 0.0)) throw Error("certificate direction must be nonzero");
    Certificate u;
    u.direction.assign(v.begin(), v.end());
    for (double& x : u.direction) x /= n;
    u.value = value;
    u.matrix = SymmetricMatrix(v.size());
    u.matrix.add_outer(1.0, u.direction);
    return u;
  }
};

struct SaddleReport {
  double value = 0.0;  // psi at the returned (W, U)
  double primal = 0.0;  // lambda_max(M(W))
  double dual = 0.0;  // lower bound on min_W psi(W, U)
  double gap = 0.0;  // primal - dual
  int iterations = 0;
  bool converged = false;
  std::vector<double> primal_trace;  // best primal after each sweep
};

struct SaddleOptions {
  double tol = 1e-3;
  int max_iter = 500;
  int check_every = 25;
  int qp_iters = 40;
};

struct SaddleSolution {
  WeightMatrix weights;
  Certificate certificate;
  SaddleReport report;
};

namespace detail {

inline void check_inputs(const DenseMatrix& points, std::span<const double> c) {
  if (points.cols() == 0) throw Error("saddle: empty active set");
  if (c.size() != points.cols()) throw DimensionError("saddle: weight count != point count");
}

inline void check_weights(const DenseMatrix& points, const WeightMatrix& w) {
  if (w.columns.rows() != points.cols() || w.columns.cols() != points.cols())
    throw DimensionError("saddle: weight matrix does not match active set");
}

/// Point-major copy (row i = y_i), shifted by the centroid. psi only sees
/// differences y_i - sum_j y_j W_ji, so the shift changes nothing.
inline DenseMatrix centered_points(const DenseMatrix& points) {
  const std::size_t d = points.rows();
  const std::size_t n = points.cols();
  DenseMatrix pt = points.transpose();
  Vector mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) mean[k] += pt(i, k);
  for (double& x : mean) x /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < d; ++k) pt(i, k) -= mean[k];
  return pt;
}

/// Row i = y_i - sum_j W_ji y_j.
inline DenseMatrix residuals(const DenseMatrix& pt, const DenseMatrix& wcols) {
  const std::size_t n = pt.rows();
  const std::size_t d = pt.cols();
  DenseMatrix r(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    double* ri = r.row(i).data();
    const double* yi = pt.row(i).data();
    for (std::size_t k = 0; k < d; ++k) ri[k] = yi[k];
    const double* wi = wcols.row(i).data();
    for (std::size_t j = 0; j < n; ++j) {
      const double wji = wi[j];
      if (wji == 0.0) continue;
      const double* yj = pt.row(j).data();
      for (std::size_t k = 0; k < d; ++k) ri[k] -= wji * yj[k];
    }
  }
  return r;
}

inline SymmetricMatrix weighted_second_moment(const DenseMatrix& r, std::span<const double> c) {
  SymmetricMatrix m(r.cols());
  for (std::size_t i = 0; i < r.rows(); ++i) m.add_outer(c[i], r.row(i));
  return m;
}

inline double psi(const DenseMatrix& r, std::span<const double> c, const SymmetricMatrix& u) {
  double s = 0.0;
  for (std::size_t i = 0; i < r.rows(); ++i) s += c[i] * u.quadratic_form(r.row(i));
  return s;
}

/// Vertex of the capped simplex minimizing <g, w>: cap mass on the smallest
/// entries, ties broken by ascending index.
inline Vector greedy_vertex(std::span<const double> g, double cap, bool ascending = true) {
  const std::size_t n = g.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (ascending)
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] < g[b]; });
  else
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return g[a] > g[b]; });
  Vector w(n, 0.0);
  double remaining = 1.0;
  for (std::size_t k = 0; k < n && remaining > 0.0; ++k) {
    const double a = std::min(cap, remaining);
    w[order[k]] = a;
    remaining -= a;
  }
  return w;
}

/// Smoothed maximum eigenvalue mu * log tr exp(M / mu) and its maximizer
/// U = exp(M / mu) / tr exp(M / mu).
struct SmoothedMax {
  double smooth = 0.0;
  double exact = 0.0;
  SymmetricMatrix u;
  DenseMatrix basis;
};

inline SmoothedMax smoothed_max(const SymmetricMatrix& m, double mu, const DenseMatrix* basis) {
  SymmetricEigen eig = symmetric_eigen(m, basis);
  const std::size_t d = m.dim();
  const double top = eig.values.back();
  Vector p(d);
  double z = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    p[k] = std::exp((eig.values[k] - top) / mu);
    z += p[k];
  }
  SmoothedMax out;
  out.exact = std::max(top, 0.0);
  out.smooth = top + mu * std::log(z);
  out.u = SymmetricMatrix(d);
  for (std::size_t k = 0; k < d; ++k) {
    if (p[k] / z < 1e-18) continue;
    Vector col(d);
    for (std::size_t i = 0; i < d; ++i) col[i] = eig.vectors(i, k);
    out.u.add_outer(p[k] / z, col);
  }
  out.basis = std::move(eig.vectors);
  return out;
}

/// Gradient of sum_i c_i r_i^T U r_i with respect to the weight columns:
/// entry (i, j) is -2 c_i <y_j, U r_i>.
inline DenseMatrix psi_gradient(const DenseMatrix& pt, const DenseMatrix& r, std::span<const double> c,
                                const SymmetricMatrix& u) {
  const std::size_t n = pt.rows();
  DenseMatrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector ur = u.multiply(r.row(i));
    for (double& x : ur) x *= -2.0 * c[i];
    double* gi = g.row(i).data();
    for (std::size_t j = 0; j < n; ++j) gi[j] = dot(pt.row(j), ur);
  }
  return g;
}

inline void project_columns(DenseMatrix& wcols, double cap) {
  for (std::size_t i = 0; i < wcols.rows(); ++i) {
    Vector p = project_capped_simplex(wcols.row(i), cap);
    std::copy(p.begin(), p.end(), wcols.row(i).begin());
  }
}

/// Certified lower bound on min_W psi(W, U). Each column runs `iters`
/// accelerated projected-gradient steps from `warm` (updated in place); the
/// bound subtracts the Frank-Wolfe gap, which dominates the suboptimality of
/// a convex objective on a polytope.
inline double dual_lower_bound(const DenseMatrix& pt, std::span<const double> c, const SymmetricMatrix& u,
                               double cap, DenseMatrix& warm, int iters) {
  const std::size_t n = pt.rows();
  const std::size_t d = pt.cols();
  // Lipschitz constant of the column gradient: 2 lambda_max(Y^T U Y) <= 2 ||U|| ||Y^T Y||.
  const SymmetricMatrix gram = SymmetricMatrix::gram_rows(pt.transpose());
  const double lip =
      2.0 * symmetric_eigen(u).values.back() * symmetric_eigen(gram).values.back() + 1e-300;

  auto column_grad = [&](std::size_t i, std::span<const double> w, Vector& grad) {
    Vector r(pt.row(i).begin(), pt.row(i).end());
    for (std::size_t j = 0; j < n; ++j) {
      if (w[j] == 0.0) continue;
      const double* yj = pt.row(j).data();
      for (std::size_t k = 0; k < d; ++k) r[k] -= w[j] * yj[k];
    }
    const Vector ur = u.multiply(r);
    for (std::size_t j = 0; j < n; ++j) grad[j] = -2.0 * dot(pt.row(j), ur);
    return dot(r, ur);
  };

  double bound = 0.0;
  Vector grad(n);
  for (std::size_t i = 0; i < n; ++i) {
    Vector w(warm.row(i).begin(), warm.row(i).end());
    Vector z = w;
    double t = 1.0;
    for (int it = 0; it < iters; ++it) {
      column_grad(i, z, grad);
      Vector step(n);
      for (std::size_t j = 0; j < n; ++j) step[j] = z[j] - grad[j] / lip;
      Vector next = project_capped_simplex(step, cap);
      const double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
      for (std::size_t j = 0; j < n; ++j) z[j] = next[j] + (t - 1.0) / tn * (next[j] - w[j]);
      w = std::move(next);
      t = tn;
    }
    const double h = column_grad(i, w, grad);
    const Vector s = greedy_vertex(grad, cap);
    double fw = 0.0;
    for (std::size_t j = 0; j < n; ++j) fw += grad[j] * (w[j] - s[j]);
    bound += c[i] * std::max(0.0, h - fw);
    std::copy(w.begin(), w.end(), warm.row(i).begin());
  }
  return bound;
}

}  // namespace detail

/// psi(W, U) = sum_i c_i r_i^T U r_i over the active points (columns of `points`).
inline double psi_value(const DenseMatrix& points, std::span<const double> c, const WeightMatrix& w,
                        const Certificate& u) {
  detail::check_inputs(points, c);
  detail::check_weights(points, w);
  if (u.matrix.dim() != points.rows()) throw DimensionError("psi: certificate dimension mismatch");
  const DenseMatrix pt = points.transpose();
  return detail::psi(detail::residuals(pt, w.columns), c, u.matrix);
}

/// lambda_max(M(W)).
inline double primal_value(const DenseMatrix& points, std::span<const double> c, const WeightMatrix& w) {
  detail::check_inputs(points, c);
  detail::check_weights(points, w);
  const DenseMatrix pt = points.transpose();
  const SymmetricMatrix m = detail::weighted_second_moment(detail::residuals(pt, w.columns), c);
  return std::max(0.0, symmetric_eigen(m).values.back());
}

/// Exact best response of W to the rank-one certificate v v^T. With
/// z_j = <v, y_j>, the values <z, w> reachable on the capped simplex form
/// [lo, hi], where lo (hi) stacks cap mass on the smallest (largest) z_j.
/// Column i hits clamp(z_i, lo, hi) by mixing those two greedy vertices.
inline WeightMatrix best_response_W(const DenseMatrix& points, std::span<const double> c,
                                    const Certificate& u, double cap) {
  detail::check_inputs(points, c);
  const std::size_t n = points.cols();
  if (u.direction.size() != points.rows()) throw DimensionError("best_response_W: direction dimension");
  if (cap * static_cast<double>(n) < 1.0 - 1e-12)
    throw FeasibilityError("best_response_W: cap * |A| < 1");
  Vector z(n);
  for (std::size_t j = 0; j < n; ++j) {
    double s = 0.0;
    for (std::size_t k = 0; k < points.rows(); ++k) s += u.direction[k] * points(k, j);
    z[j] = s;
  }
  const Vector w_lo = detail::greedy_vertex(z, cap, true);
  const Vector w_hi = detail::greedy_vertex(z, cap, false);
  const double lo = dot(z, w_lo);
  const double hi = dot(z, w_hi);

  WeightMatrix w = WeightMatrix::uniform(n, cap);
  for (std::size_t i = 0; i < n; ++i) {
    const double target = std::clamp(z[i], lo, hi);
    const double theta = hi > lo ? (target - lo) / (hi - lo) : 0.0;
    double* col = w.columns.row(i).data();
    for (std::size_t j = 0; j < n; ++j) col[j] = (1.0 - theta) * w_lo[j] + theta * w_hi[j];
  }
  return w;
}

/// Maximizer of psi(W, .) over the spectraplex: the top eigenpair of M(W).
inline Certificate best_response_U(const DenseMatrix& points, std::span<const double> c, const WeightMatrix& w,
                                   RngStream& rng, double tol = 1e-10, int max_iter = 100000) {
  detail::check_inputs(points, c);
  detail::check_weights(points, w);
  const DenseMatrix pt = points.transpose();
  const SymmetricMatrix m = detail::weighted_second_moment(detail::residuals(pt, w.columns), c);
  const EigPair top = top_eigpair(m, tol, max_iter, rng);
  Certificate u = Certificate::rank_one(top.vector);
  u.value = std::max(0.0, top.value);
  return u;
}

/// Approximate saddle point of psi.
///
/// The primal side minimizes the smoothed top eigenvalue
/// mu log tr exp(M(W)/mu) by accelerated projected gradient (backtracking,
/// adaptive restart) while mu shrinks toward tol * value. The smoothed
/// maximizers U_mu are rank-weighted averages of eigenvector outer products;
/// their running average is the dual certificate. Every `check_every` sweeps
/// the gap lambda_max(M(W_best)) - min_W psi(W, U_avg) is bounded from above
/// and the loop stops once it is within tol * max(value, 1e-12).
inline SaddleSolution solve_saddle(const DenseMatrix& points, std::span<const double> c, double cap,
                                   const SaddleOptions& opt, const WeightMatrix* warm_start = nullptr) {
  detail::check_inputs(points, c);
  const std::size_t n = points.cols();
  const std::size_t d = points.rows();
  if (!(opt.tol > 0.0)) throw Error("solve_saddle: tol must be positive");
  if (cap * static_cast<double>(n) < 1.0 - 1e-12)
    throw FeasibilityError("solve_saddle: cap * |A| < 1, constraint set is empty");
  constexpr double kValueFloor = 1e-12;

  const DenseMatrix pt = detail::centered_points(points);
  WeightMatrix best = WeightMatrix::uniform(n, cap);
  if (warm_start != nullptr && warm_start->size() == n) {
    best.columns = warm_start->columns;
    detail::project_columns(best.columns, cap);
  }

  SaddleSolution out;
  const double log_d = std::max(1.0, std::log(static_cast<double>(d)));
  DenseMatrix r = detail::residuals(pt, best.columns);
  SymmetricMatrix m = detail::weighted_second_moment(r, c);
  SymmetricEigen eig0 = symmetric_eigen(m);
  double best_primal = std::max(0.0, eig0.values.back());
  DenseMatrix basis = eig0.vectors;

  auto finish = [&](const SymmetricMatrix& u_avg, double dual, int iterations, bool converged) {
    out.weights = best;
    out.certificate.matrix = u_avg;
    SymmetricEigen ue = symmetric_eigen(u_avg);
    out.certificate.direction.resize(d);
    for (std::size_t k = 0; k < d; ++k) out.certificate.direction[k] = ue.vectors(k, d - 1);
    out.certificate.value = dual;
    const DenseMatrix rb = detail::residuals(pt, best.columns);
    out.report.value = detail::psi(rb, c, u_avg);
    out.report.primal = best_primal;
    out.report.dual = dual;
    out.report.gap = best_primal - dual;
    out.report.iterations = iterations;
    out.report.converged = converged;
    return out;
  };

  if (best_primal <= kValueFloor) {
    // Residuals vanish already: any trace-one U certifies a zero value.
    SymmetricMatrix u(d);
    Vector e(d, 0.0);
    for (std::size_t k = 0; k < d; ++k) e[k] = basis(k, d - 1);
    u.add_outer(1.0, e);
    out.report.primal_trace.push_back(best_primal);
    return finish(u, 0.0, 1, true);
  }

  double mu = 0.05 * best_primal / log_d;
  auto mu_floor = [&] { return 0.25 * opt.tol * std::max(best_primal, kValueFloor) / log_d; };

  struct Point {
    DenseMatrix w;
    detail::SmoothedMax s;
    DenseMatrix r;
  };
  auto evaluate = [&](DenseMatrix w) {
    Point p;
    p.r = detail::residuals(pt, w);
    p.s = detail::smoothed_max(detail::weighted_second_moment(p.r, c), mu, &basis);
    p.w = std::move(w);
    return p;
  };

  Point x = evaluate(best.columns);
  Point y = x;
  double t = 1.0;
  // Curvature of psi(., U) alone; backtracking adds the smoothing term.
  double lip = 2.0 * *std::max_element(c.begin(), c.end()) *
               std::max(symmetric_eigen(SymmetricMatrix::gram_rows(pt.transpose())).values.back(), 1e-300);
  SymmetricMatrix u_sum(d);
  double weight_sum = 0.0;
  double best_dual = 0.0;
  DenseMatrix qp_warm;
  SymmetricMatrix u_avg = x.s.u;
  SymmetricMatrix best_u = x.s.u;
  int iter = 0;
  bool converged = false;

  for (iter = 1; iter <= opt.max_iter; ++iter) {
    const DenseMatrix g = detail::psi_gradient(pt, y.r, c, y.s.u);
    Point next;
    for (int bt = 0; bt < 60; ++bt) {
      DenseMatrix cand = y.w;
      auto cd = cand.data();
      auto gd = g.data();
      for (std::size_t k = 0; k < cd.size(); ++k) cd[k] -= gd[k] / lip;
      detail::project_columns(cand, cap);
      next = evaluate(std::move(cand));
      double lin = 0.0;
      double sq = 0.0;
      auto nd = next.w.data();
      auto yd = y.w.data();
      for (std::size_t k = 0; k < nd.size(); ++k) {
        const double diff = nd[k] - yd[k];
        lin += gd[k] * diff;
        sq += diff * diff;
      }
      if (next.s.smooth <= y.s.smooth + lin + 0.5 * lip * sq + 1e-12 * std::abs(y.s.smooth)) break;
      lip *= 2.0;
    }
    basis = next.s.basis;
    lip *= 0.9;

    if (next.s.exact < best_primal) {
      best_primal = next.s.exact;
      best.columns = next.w;
    }
    out.report.primal_trace.push_back(best_primal);

    const double k_weight = static_cast<double>(iter);
    for (std::size_t a = 0; a < d; ++a)
      for (std::size_t b = 0; b < d; ++b) u_sum(a, b) += k_weight * next.s.u(a, b);
    weight_sum += k_weight;

    // Momentum, restarted whenever the smoothed objective goes up.
    double tn = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    DenseMatrix yw = next.w;
    if (next.s.smooth > x.s.smooth) {
      tn = 1.0;
    } else {
      auto ywd = yw.data();
      auto nd = next.w.data();
      auto xd = x.w.data();
      for (std::size_t k = 0; k < ywd.size(); ++k) ywd[k] = nd[k] + (t - 1.0) / tn * (nd[k] - xd[k]);
      detail::project_columns(yw, cap);
    }
    t = tn;
    x = next;

    if (iter % 10 == 0) {
      const double target = std::max(mu_floor(), 0.7 * mu);
      if (target < mu) {
        mu = target;
        x = evaluate(x.w);
      }
    }
    y = (tn == 1.0) ? x : evaluate(std::move(yw));

    if (iter % opt.check_every == 0 || iter == opt.max_iter) {
      u_avg = u_sum;
      for (std::size_t a = 0; a < d; ++a)
        for (std::size_t b = 0; b < d; ++b) u_avg(a, b) /= weight_sum;
      if (qp_warm.rows() == 0) qp_warm = best.columns;
      const double bound = detail::dual_lower_bound(pt, c, u_avg, cap, qp_warm, opt.qp_iters);
      if (bound >= best_dual) {
        best_dual = bound;
        best_u = u_avg;
      }
      if (best_primal - best_dual <= opt.tol * std::max(best_primal, kValueFloor)) {
        converged = true;
        break;
      }
    }
  }
  return finish(best_u, best_dual, std::min(iter, opt.max_iter), converged);
}

}  // namespace robustgd
