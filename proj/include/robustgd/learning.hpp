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

// Statistical learning layer: linear-regression data and gradient oracles,
// gradient aggregators, and the learner's approximate gradient descent loop.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "robustgd/errors.hpp"
#include "robustgd/filter.hpp"
#include "robustgd/numerics.hpp"

namespace robustgd {

/// Feature/response pairs; covariates holds one sample per row.
struct Dataset {
  DenseMatrix covariates;
  Vector responses;

  std::size_t size() const { return responses.size(); }
  std::size_t dim() const { return covariates.cols(); }
};

/// The data points owned by one worker.
struct Shard {
  std::uint32_t worker_id = 0;
  Dataset data;
};

/// w_i ~ N(0, I_d), y_i = <w_i, theta*> + N(0, noise_sd^2).
inline Dataset linreg_generate(std::size_t d, std::size_t n_samples, std::span<const double> theta_star,
                               double noise_sd, RngStream& rng) {
  if (d == 0 || n_samples == 0) throw Error("linreg_generate: d and N must be >= 1");
  if (theta_star.size() != d) throw DimensionError("linreg_generate: theta* has wrong dimension");
  Dataset out{DenseMatrix(n_samples, d), Vector(n_samples)};
  for (std::size_t i = 0; i < n_samples; ++i) {
    auto w = out.covariates.row(i);
    for (double& x : w) x = rng.normal();
    out.responses[i] = dot(w, theta_star) + noise_sd * rng.normal();
  }
  return out;
}

/// Contiguous equal blocks: worker j owns samples [j n, (j+1) n).
inline std::vector<Shard> partition(const Dataset& data, std::size_t m) {
  if (m == 0 || data.size() % m != 0)
    throw Error("partition: N = " + std::to_string(data.size()) + " is not divisible by m = " + std::to_string(m));
  const std::size_t n = data.size() / m;
  std::vector<Shard> shards(m);
  for (std::size_t j = 0; j < m; ++j) {
    shards[j].worker_id = static_cast<std::uint32_t>(j);
    shards[j].data.covariates = DenseMatrix(n, data.dim());
    shards[j].data.responses.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto src = data.covariates.row(j * n + i);
      std::copy(src.begin(), src.end(), shards[j].data.covariates.row(i).begin());
      shards[j].data.responses[i] = data.responses[j * n + i];
    }
  }
  return shards;
}

/// (1/n) sum_i 1/2 (<w_i, theta> - y_i)^2
inline double empirical_risk(const Dataset& data, std::span<const double> theta) {
  if (data.size() == 0) throw Error("empirical_risk: empty data");
  double s = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const double e = dot(data.covariates.row(i), theta) - data.responses[i];
    s += 0.5 * e * e;
  }
  return s / static_cast<double>(data.size());
}

/// (1/n) sum_i w_i (<w_i, theta> - y_i)
inline Vector local_gradient(const Shard& shard, std::span<const double> theta) {
  const Dataset& data = shard.data;
  if (data.size() == 0) throw Error("local_gradient: empty shard");
  if (theta.size() != data.dim()) throw DimensionError("local_gradient: theta has wrong dimension");
  Vector g(data.dim(), 0.0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto w = data.covariates.row(i);
    const double e = dot(w, theta) - data.responses[i];
    for (std::size_t k = 0; k < g.size(); ++k) g[k] += e * w[k];
  }
  for (double& x : g) x /= static_cast<double>(data.size());
  return g;
}

/// Strong convexity / smoothness of the empirical risk: extreme eigenvalues
/// of (1/N) sum_i w_i w_i^T.
struct Curvature {
  double strong_convexity = 0.0;
  double smoothness = 0.0;
};

inline Curvature covariate_curvature(const Dataset& data) {
  SymmetricMatrix s(data.dim());
  for (std::size_t i = 0; i < data.size(); ++i)
    s.add_outer(1.0 / static_cast<double>(data.size()), data.covariates.row(i));
  const SymmetricEigen e = symmetric_eigen(s);
  return {e.values.front(), e.values.back()};
}

/// eta = M / (2 L^2) with (M, L) the curvature bounds above.
inline double auto_step_size(const Dataset& data) {
  const Curvature c = covariate_curvature(data);
  return c.strong_convexity / (2.0 * c.smoothness * c.smoothness);
}

/// Gradients received in one round, one per worker.
struct GradientReport {
  std::vector<std::uint32_t> worker_ids;
  std::vector<Vector> gradients;

  std::size_t size() const { return gradients.size(); }
  std::size_t dim() const { return gradients.empty() ? 0 : gradients.front().size(); }

  GradientReport sorted() const {
    std::vector<std::size_t> order(size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return worker_ids[a] < worker_ids[b]; });
    GradientReport out;
    for (std::size_t k : order) {
      out.worker_ids.push_back(worker_ids[k]);
      out.gradients.push_back(gradients[k]);
    }
    return out;
  }

  DenseMatrix as_columns() const { return DenseMatrix::from_columns(gradients); }
};

struct MeanAggregator {};
struct CoordMedianAggregator {};
struct TrimmedMeanAggregator {
  double beta = 0.1;
};
struct GeoMedianOfMeansAggregator {
  std::size_t groups = 1;
};
struct IterFilterAggregator {
  FilterConfig config;
};

using Aggregator = std::variant<MeanAggregator, CoordMedianAggregator, TrimmedMeanAggregator,
                                GeoMedianOfMeansAggregator, IterFilterAggregator>;

inline std::string aggregator_name(const Aggregator& a) {
  struct {
    std::string operator()(const MeanAggregator&) const { return "mean"; }
    std::string operator()(const CoordMedianAggregator&) const { return "coordmedian"; }
    std::string operator()(const TrimmedMeanAggregator&) const { return "trimmedmean"; }
    std::string operator()(const GeoMedianOfMeansAggregator&) const { return "geomedian"; }
    std::string operator()(const IterFilterAggregator&) const { return "iterfilter"; }
  } visitor;
  return std::visit(visitor, a);
}

struct AggregateResult {
  Vector gradient;
  std::size_t removed = 0;  // reports dropped by the filter
};

namespace detail {

inline Vector mean_of(const std::vector<Vector>& pts, std::size_t begin, std::size_t end) {
  Vector out(pts.front().size(), 0.0);
  for (std::size_t j = begin; j < end; ++j)
    for (std::size_t k = 0; k < out.size(); ++k) out[k] += pts[j][k];
  for (double& x : out) x /= static_cast<double>(end - begin);
  return out;
}

inline Vector coordinate_median(const std::vector<Vector>& pts) {
  const std::size_t m = pts.size();
  Vector out(pts.front().size());
  std::vector<double> col(m);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t j = 0; j < m; ++j) col[j] = pts[j][k];
    std::sort(col.begin(), col.end());
    out[k] = m % 2 == 1 ? col[m / 2] : 0.5 * (col[m / 2 - 1] + col[m / 2]);
  }
  return out;
}

inline Vector trimmed_mean(const std::vector<Vector>& pts, double beta) {
  const std::size_t m = pts.size();
  const auto drop = static_cast<std::size_t>(std::ceil(beta * static_cast<double>(m) - 1e-12));
  if (2 * drop >= m) throw Error("trimmed mean: nothing left after trimming");
  Vector out(pts.front().size());
  std::vector<double> col(m);
  for (std::size_t k = 0; k < out.size(); ++k) {
    for (std::size_t j = 0; j < m; ++j) col[j] = pts[j][k];
    std::sort(col.begin(), col.end());
    double s = 0.0;
    for (std::size_t j = drop; j < m - drop; ++j) s += col[j];
    out[k] = s / static_cast<double>(m - 2 * drop);
  }
  return out;
}

/// Weiszfeld iteration started at the coordinate-wise mean.
inline Vector geometric_median(const std::vector<Vector>& pts, double tol = 1e-9, int max_iter = 1000) {
  Vector z = mean_of(pts, 0, pts.size());
  for (int it = 0; it < max_iter; ++it) {
    Vector num(z.size(), 0.0);
    double den = 0.0;
    bool at_point = false;
    for (const Vector& p : pts) {
      const double dist = distance(p, z);
      if (dist < 1e-14) {
        at_point = true;
        continue;
      }
      for (std::size_t k = 0; k < z.size(); ++k) num[k] += p[k] / dist;
      den += 1.0 / dist;
    }
    if (den == 0.0) return z;
    for (double& x : num) x /= den;
    const double move = distance(num, z);
    z = std::move(num);
    if (move <= tol * std::max(1.0, norm2(z))) break;
    if (at_point && move == 0.0) break;
  }
  return z;
}

}  // namespace detail

/// Combines the reports (sorted by worker id first) into one gradient.
inline AggregateResult aggregate(const GradientReport& reports, const Aggregator& method) {
  if (reports.size() == 0) throw Error("aggregate: no reports");
  const std::size_t d = reports.dim();
  for (const Vector& g : reports.gradients)
    if (g.size() != d) throw DimensionError("aggregate: reports differ in dimension");
  const GradientReport sorted = reports.sorted();
  const std::vector<Vector>& pts = sorted.gradients;
  const std::size_t m = pts.size();

  AggregateResult out;
  if (std::holds_alternative<MeanAggregator>(method)) {
    out.gradient = detail::mean_of(pts, 0, m);
  } else if (std::holds_alternative<CoordMedianAggregator>(method)) {
    out.gradient = detail::coordinate_median(pts);
  } else if (const auto* tm = std::get_if<TrimmedMeanAggregator>(&method)) {
    if (!(tm->beta >= 0.0 && tm->beta < 0.5)) throw Error("trimmed mean: beta must lie in [0, 1/2)");
    out.gradient = detail::trimmed_mean(pts, tm->beta);
  } else if (const auto* gm = std::get_if<GeoMedianOfMeansAggregator>(&method)) {
    if (gm->groups == 0 || gm->groups > m)
      throw Error("geometric median of means: need 1 <= k <= m, got k = " + std::to_string(gm->groups));
    std::vector<Vector> means;
    for (std::size_t b = 0; b < gm->groups; ++b)
      means.push_back(detail::mean_of(pts, b * m / gm->groups, (b + 1) * m / gm->groups));
    out.gradient = detail::geometric_median(means);
  } else {
    const auto& f = std::get<IterFilterAggregator>(method);
    std::vector<std::size_t> ids(sorted.worker_ids.begin(), sorted.worker_ids.end());
    FilterOutput res = robust_mean(sorted.as_columns(), f.config, ids);
    out.gradient = std::move(res.estimate);
    out.removed = m - res.active.size();
  }
  return out;
}

/// Euclidean ball used to keep iterates inside the parameter set.
struct BallProjection {
  Vector center;
  double radius = 0.0;

  Vector apply(Vector theta) const {
    const double dist = distance(theta, center);
    if (dist <= radius || dist == 0.0) return theta;
    for (std::size_t k = 0; k < theta.size(); ++k) theta[k] = center[k] + (theta[k] - center[k]) * radius / dist;
    return theta;
  }
};

struct RoundUpdate {
  Vector theta;
  AggregateResult aggregate;
};

/// theta' = Proj(theta - eta * aggregate(reports)).
inline RoundUpdate learner_round(std::span<const double> theta, const GradientReport& reports,
                                 const Aggregator& method, double eta,
                                 const std::optional<BallProjection>& projection = std::nullopt) {
  RoundUpdate out;
  out.aggregate = aggregate(reports, method);
  if (out.aggregate.gradient.size() != theta.size()) throw DimensionError("learner_round: dimension mismatch");
  out.theta.assign(theta.begin(), theta.end());
  for (std::size_t k = 0; k < out.theta.size(); ++k) out.theta[k] -= eta * out.aggregate.gradient[k];
  if (projection) out.theta = projection->apply(std::move(out.theta));
  return out;
}

/// What the learner sees after one broadcast/collect exchange.
struct CollectedRound {
  GradientReport reports;
  std::size_t missing = 0;  // silent or malformed workers, zero-filled
  std::optional<Vector> reference_gradient;  // mean of true local gradients, if known
};

/// Supplies the workers' reports for each round: a simulation or a network.
class ReportSource {
 public:
  virtual ~ReportSource() = default;
  virtual CollectedRound collect(std::uint32_t round, std::span<const double> theta) = 0;
  virtual void finish(std::span<const double> /*theta*/) {}
};

struct TrainConfig {
  double eta = 0.1;
  std::size_t rounds = 1;
  Aggregator aggregator = MeanAggregator{};
  std::optional<double> radius;  // ball around theta_0
  bool record_time = false;

  void validate() const {
    if (!(eta > 0.0)) throw Error("train: step size must be positive");
    if (rounds < 1) throw Error("train: need at least one round");
    if (radius && !(*radius > 0.0)) throw Error("train: projection radius must be positive");
  }
};

struct RoundMetrics {
  std::size_t round = 0;
  double error = std::numeric_limits<double>::quiet_NaN();  // ||theta_t - theta*||
  double aggregation_deviation = std::numeric_limits<double>::quiet_NaN();
  std::size_t removals = 0;
  std::size_t flags = 0;
  double seconds = 0.0;
};

struct TrainResult {
  std::vector<RoundMetrics> metrics;
  std::vector<Vector> trajectory;  // theta_0 .. theta_T
  Vector theta;
};

/// Runs the broadcast / collect / aggregate / update loop for config.rounds rounds.
inline TrainResult train(ReportSource& source, const TrainConfig& config, Vector theta0,
                         const std::optional<Vector>& theta_star = std::nullopt) {
  config.validate();
  std::optional<BallProjection> projection;
  if (config.radius) projection = BallProjection{theta0, *config.radius};
  TrainResult out;
  out.theta = std::move(theta0);
  out.trajectory.push_back(out.theta);
  for (std::size_t t = 1; t <= config.rounds; ++t) {
    const auto start = std::chrono::steady_clock::now();
    CollectedRound round = source.collect(static_cast<std::uint32_t>(t - 1), out.theta);
    RoundUpdate upd = learner_round(out.theta, round.reports, config.aggregator, config.eta, projection);
    RoundMetrics row;
    row.round = t;
    row.removals = upd.aggregate.removed;
    row.flags = round.missing;
    if (round.reference_gradient) row.aggregation_deviation = distance(upd.aggregate.gradient, *round.reference_gradient);
    out.theta = std::move(upd.theta);
    if (theta_star) row.error = distance(out.theta, *theta_star);
    if (config.record_time)
      row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    out.metrics.push_back(row);
    out.trajectory.push_back(out.theta);
  }
  source.finish(out.theta);
  return out;
}

}  // namespace robustgd
