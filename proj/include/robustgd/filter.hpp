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

// Iterative filtering for robust mean estimation, used as the gradient
// aggregator. Each round solves the weight/certificate saddle program on the
// active set, scores points by their residual energy along the certificate,
// shrinks weights in proportion to the score and drops points whose weight
// falls to 1/2 or below.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robustgd/errors.hpp"
#include "robustgd/numerics.hpp"
#include "robustgd/saddle.hpp"

namespace robustgd {

enum class Termination {
  SigmaThreshold,  // stop once sum_A c_i tau_i <= 8 m sigma^2
  Cardinality,  // stop before the active set would drop below alpha(2+alpha)m/(4-alpha)
};

struct FilterConfig {
  double epsilon = 0.0;
  std::optional<double> sigma;
  Termination termination = Termination::Cardinality;
  SaddleOptions saddle;

  double alpha() const { return 1.0 - epsilon; }

  void validate() const {
    if (!(epsilon >= 0.0 && epsilon < 0.25))
      throw Error("filter: epsilon must lie in [0, 1/4), got " + std::to_string(epsilon));
    if (sigma && !(*sigma > 0.0)) throw Error("filter: sigma must be positive");
    if (termination == Termination::SigmaThreshold && !sigma)
      throw Error("filter: sigma-threshold termination needs sigma");
  }
};

struct FilterState {
  std::vector<std::size_t> active;  // positions into the input, ascending
  std::vector<double> weights;  // c_i for every input point
  std::vector<double> scores;  // tau_i for the active points, in `active` order
  int round = 0;
};

/// One pass of the while-loop. The snapshot is taken before the update.
struct FilterRound {
  int round = 0;
  std::vector<std::size_t> active;  // ids
  std::vector<double> weights;  // c_i(t) for every input point
  double weighted_score = 0.0;  // sum_A c_i tau_i
  std::vector<std::size_t> removed;  // ids
};

struct FilterOutput {
  Vector estimate;
  std::vector<std::size_t> active;  // ids
  std::vector<FilterRound> trace;
  std::vector<SaddleReport> saddle_reports;
};

/// tau_i = r_i^T U r_i for each active point.
inline Vector compute_scores(const DenseMatrix& points, std::span<const double> c, const WeightMatrix& w,
                             const Certificate& u) {
  detail::check_inputs(points, c);
  detail::check_weights(points, w);
  if (u.matrix.dim() != points.rows()) throw DimensionError("compute_scores: certificate dimension");
  const DenseMatrix r = detail::residuals(points.transpose(), w.columns);
  Vector tau(points.cols());
  for (std::size_t i = 0; i < tau.size(); ++i) tau[i] = std::max(0.0, u.matrix.quadratic_form(r.row(i)));
  return tau;
}

/// c_i <- (1 - tau_i / tau_max) c_i on the active set, then drops every
/// point with c_i <= 1/2. Returns nullopt when all scores vanish: nothing
/// separates the points and the caller has to stop.
inline std::optional<FilterState> downweight(const FilterState& state, std::span<const double> scores) {
  if (scores.size() != state.active.size()) throw DimensionError("downweight: one score per active point");
  const double tau_max = scores.empty() ? 0.0 : *std::max_element(scores.begin(), scores.end());
  if (!(tau_max > 0.0)) return std::nullopt;
  FilterState next = state;
  next.active.clear();
  next.scores.clear();
  for (std::size_t k = 0; k < state.active.size(); ++k) {
    const std::size_t id = state.active[k];
    double& c = next.weights[id];
    c = scores[k] == tau_max ? 0.0 : (1.0 - scores[k] / tau_max) * c;
    if (c > 0.5) next.active.push_back(id);
  }
  next.round = state.round + 1;
  return next;
}

/// Robust mean of the columns of `points`. `ids` labels the columns in the
/// trace (defaults to 0..m-1).
inline FilterOutput robust_mean(const DenseMatrix& points, const FilterConfig& config,
                                std::span<const std::size_t> ids = {}) {
  config.validate();
  const std::size_t m = points.cols();
  const std::size_t d = points.rows();
  if (m == 0) throw Error("robust_mean: no points");
  if (!ids.empty() && ids.size() != m) throw DimensionError("robust_mean: one id per point");
  auto label = [&](std::size_t pos) { return ids.empty() ? pos : ids[pos]; };

  const double alpha = config.alpha();
  const double cap = weight_cap(alpha, m);
  const double keep_floor = alpha * (2.0 + alpha) * static_cast<double>(m) / (4.0 - alpha);
  const double sigma_budget =
      config.sigma ? 8.0 * static_cast<double>(m) * (*config.sigma) * (*config.sigma) : 0.0;

  FilterState state;
  state.active.resize(m);
  std::iota(state.active.begin(), state.active.end(), std::size_t{0});
  state.weights.assign(m, 1.0);

  FilterOutput out;
  std::optional<WeightMatrix> warm;

  for (std::size_t loop = 0; loop < m; ++loop) {
    const std::size_t n = state.active.size();
    if (cap * static_cast<double>(n) < 1.0 - 1e-12)
      throw DegenerateResultError("robust_mean: " + std::to_string(n) +
                                  " active points left, below the feasible size; sigma is too small "
                                  "for this sample");
    FilterRound entry;
    entry.round = state.round + 1;
    for (std::size_t pos : state.active) entry.active.push_back(label(pos));
    entry.weights = state.weights;

    DenseMatrix sub(d, n);
    Vector c(n);
    for (std::size_t k = 0; k < n; ++k) {
      for (std::size_t r = 0; r < d; ++r) sub(r, k) = points(r, state.active[k]);
      c[k] = state.weights[state.active[k]];
    }
    SaddleSolution sol = solve_saddle(sub, c, cap, config.saddle, warm ? &*warm : nullptr);
    out.saddle_reports.push_back(sol.report);
    state.scores = compute_scores(sub, c, sol.weights, sol.certificate);
    const double tau_max = *std::max_element(state.scores.begin(), state.scores.end());
    for (std::size_t k = 0; k < n; ++k) entry.weighted_score += c[k] * state.scores[k];

    bool stop = !(tau_max > 0.0);
    if (!stop && config.termination == Termination::SigmaThreshold) {
      stop = entry.weighted_score <= sigma_budget;
    } else if (!stop) {
      std::size_t survivors = 0;
      for (std::size_t k = 0; k < n; ++k)
        survivors += (1.0 - state.scores[k] / tau_max) * c[k] > 0.5 ? 1 : 0;
      stop = static_cast<double>(survivors) < keep_floor;
    }
    if (stop) {
      out.trace.push_back(std::move(entry));
      break;
    }

    std::optional<FilterState> next = downweight(state, state.scores);
    // tau_max > 0 here, so the update always happens.
    std::vector<std::size_t> kept_pos;
    for (std::size_t k = 0, j = 0; k < n; ++k) {
      if (j < next->active.size() && next->active[j] == state.active[k]) {
        kept_pos.push_back(k);
        ++j;
      } else {
        entry.removed.push_back(label(state.active[k]));
      }
    }
    out.trace.push_back(std::move(entry));
    state = std::move(*next);
    if (state.active.empty()) break;

    // Next round starts from this round's W restricted to the survivors.
    WeightMatrix w{{}, DenseMatrix(kept_pos.size(), kept_pos.size()), cap};
    for (std::size_t a = 0; a < kept_pos.size(); ++a)
      for (std::size_t b = 0; b < kept_pos.size(); ++b)
        w.columns(a, b) = sol.weights.columns(kept_pos[a], kept_pos[b]);
    warm = std::move(w);
  }

  if (state.active.empty())
    throw DegenerateResultError("robust_mean: the active set is empty");
  out.estimate.assign(d, 0.0);
  for (std::size_t pos : state.active)
    for (std::size_t r = 0; r < d; ++r) out.estimate[r] += points(r, pos);
  for (double& x : out.estimate) x /= static_cast<double>(state.active.size());
  for (std::size_t pos : state.active) out.active.push_back(label(pos));
  return out;
}

/// Per-round outcome of the inlier bookkeeping checks.
struct InvariantRound {
  int round = 0;
  double inliers_active = 0.0;  // |S0 ∩ A(t)|
  double inliers_needed = 0.0;  // alpha(2+alpha)m/(4-alpha)
  double inlier_weight_loss = 0.0;  // sum_{S0} (1 - c_i)
  double loss_budget = 0.0;  // alpha/4 * sum_i (1 - c_i)
  bool cardinality_ok = false;
  bool weight_ok = false;
};

struct InvariantReport {
  std::vector<InvariantRound> rounds;
  bool all_ok() const {
    return std::all_of(rounds.begin(), rounds.end(),
                       [](const InvariantRound& r) { return r.cardinality_ok && r.weight_ok; });
  }
  std::size_t violations() const {
    return static_cast<std::size_t>(std::count_if(rounds.begin(), rounds.end(), [](const InvariantRound& r) {
      return !(r.cardinality_ok && r.weight_ok);
    }));
  }
};

/// Simulation-only check that the filter keeps most true inliers: on every
/// recorded round, |S0 ∩ A(t)| >= alpha(2+alpha)m/(4-alpha) and
/// sum_{S0}(1 - c_i) <= (alpha/4) sum_i (1 - c_i). Ids in the trace must be
/// 0..m-1.
inline InvariantReport assert_inlier_invariants(const std::vector<FilterRound>& trace,
                                                std::span<const std::size_t> inlier_ids, double alpha) {
  InvariantReport report;
  for (const FilterRound& r : trace) {
    const double m = static_cast<double>(r.weights.size());
    std::vector<bool> inlier(r.weights.size(), false);
    for (std::size_t id : inlier_ids) inlier.at(id) = true;
    InvariantRound row;
    row.round = r.round;
    for (std::size_t id : r.active) row.inliers_active += inlier.at(id) ? 1.0 : 0.0;
    row.inliers_needed = alpha * (2.0 + alpha) * m / (4.0 - alpha);
    double total_loss = 0.0;
    for (std::size_t i = 0; i < r.weights.size(); ++i) {
      const double loss = 1.0 - r.weights[i];
      total_loss += loss;
      if (inlier[i]) row.inlier_weight_loss += loss;
    }
    row.loss_budget = alpha / 4.0 * total_loss;
    row.cardinality_ok = row.inliers_active >= row.inliers_needed;
    row.weight_ok = row.inlier_weight_loss <= row.loss_budget + 1e-9;
    report.rounds.push_back(row);
  }
  return report;
}

}  // namespace robustgd
