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

// Monte Carlo checks of spectral-norm scaling for random matrices with
// independent heavy-tailed columns.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "robustgd/errors.hpp"
#include "robustgd/numerics.hpp"

namespace robustgd {

enum class Distribution { Laplace, Gaussian };

inline std::string distribution_name(Distribution d) { return d == Distribution::Laplace ? "laplace" : "gaussian"; }

struct TrialGrid {
  std::vector<std::size_t> dims;
  std::vector<std::size_t> widths;
  std::vector<Distribution> distributions{Distribution::Laplace};
  std::size_t trials = 100;
  std::uint64_t seed = 0;

  void validate() const {
    if (dims.empty() || widths.empty() || distributions.empty()) throw Error("trial grid: empty axis");
    if (trials < 30) throw Error("trial grid: need at least 30 trials per cell, got " + std::to_string(trials));
    for (std::size_t d : dims)
      if (d == 0) throw Error("trial grid: d must be >= 1");
    for (std::size_t m : widths)
      if (m == 0) throw Error("trial grid: m must be >= 1");
  }
};

struct NormSample {
  std::size_t d = 0;
  std::size_t m = 0;
  Distribution dist = Distribution::Laplace;
  std::size_t trial = 0;
  double norm = 0.0;
};

struct QuantileRow {
  std::size_t d = 0;
  std::size_t m = 0;
  Distribution dist = Distribution::Laplace;
  double median = 0.0;
  double p90 = 0.0;
  double p99 = 0.0;
  double median_se = 0.0;  // bootstrap standard error of the median
  double ratio = 0.0;  // median / (sqrt(m) + sqrt(d))
};

struct TrialTable {
  std::vector<NormSample> samples;  // cell-major, then trial
  std::vector<QuantileRow> quantiles;  // one per cell, same order

  const QuantileRow& cell(std::size_t d, std::size_t m, Distribution dist) const {
    for (const QuantileRow& q : quantiles)
      if (q.d == d && q.m == m && q.dist == dist) return q;
    throw Error("trial table: no such cell");
  }
};

/// Linear-interpolated quantile of sorted data (the usual "type 7" rule).
inline double quantile_sorted(const std::vector<double>& xs, double p) {
  if (xs.empty()) throw Error("quantile of an empty sample");
  const double h = p * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const std::size_t hi = std::min(lo + 1, xs.size() - 1);
  return xs[lo] + (h - static_cast<double>(lo)) * (xs[hi] - xs[lo]);
}

namespace detail {

inline std::uint64_t cell_stream(std::size_t d, std::size_t m, Distribution dist, std::size_t trial) {
  std::uint64_t h = hash_combine(0x636f6e63ULL, d);
  h = hash_combine(h, m);
  h = hash_combine(h, static_cast<std::uint64_t>(dist));
  return hash_combine(h, trial);
}

inline double one_trial(std::size_t d, std::size_t m, Distribution dist, std::size_t trial, std::uint64_t seed) {
  RngStream rng(seed, cell_stream(d, m, dist, trial));
  const DenseMatrix a = dist == Distribution::Laplace ? sample_laplace_matrix(d, m, rng) : sample_gaussian_matrix(d, m, rng);
  RngStream power(seed, hash_combine(cell_stream(d, m, dist, trial), 1));
  return spectral_norm(a, 1e-10, 100000, power);
}

inline double bootstrap_median_se(const std::vector<double>& xs, std::uint64_t seed, int reps = 200) {
  RngStream rng(seed, 0x626f6f74ULL);
  std::uniform_int_distribution<std::size_t> pick(0, xs.size() - 1);
  std::vector<double> meds(static_cast<std::size_t>(reps)), buf(xs.size());
  for (double& med : meds) {
    for (double& b : buf) b = xs[pick(rng.engine())];
    std::sort(buf.begin(), buf.end());
    med = quantile_sorted(buf, 0.5);
  }
  double mean = 0.0;
  for (double x : meds) mean += x / reps;
  double var = 0.0;
  for (double x : meds) var += (x - mean) * (x - mean) / (reps - 1);
  return std::sqrt(var);
}

}  // namespace detail

/// ||A|| for every (d, m, distribution, trial). Each trial has its own seed
/// stream, so the table does not depend on `threads` or on grid order.
inline TrialTable spectral_norm_trials(const TrialGrid& grid, unsigned threads = 1) {
  grid.validate();
  struct Cell {
    std::size_t d, m;
    Distribution dist;
  };
  std::vector<Cell> cells;
  for (Distribution dist : grid.distributions)
    for (std::size_t d : grid.dims)
      for (std::size_t m : grid.widths) cells.push_back({d, m, dist});

  TrialTable out;
  out.samples.resize(cells.size() * grid.trials);
  auto run = [&](std::size_t begin, std::size_t step) {
    for (std::size_t k = begin; k < out.samples.size(); k += step) {
      const Cell& c = cells[k / grid.trials];
      const std::size_t t = k % grid.trials;
      out.samples[k] = {c.d, c.m, c.dist, t, detail::one_trial(c.d, c.m, c.dist, t, grid.seed)};
    }
  };
  threads = std::max(1u, threads);
  if (threads == 1) {
    run(0, 1);
  } else {
    std::vector<std::thread> pool;
    for (unsigned w = 0; w < threads; ++w) pool.emplace_back(run, w, threads);
    for (auto& t : pool) t.join();
  }

  for (std::size_t ci = 0; ci < cells.size(); ++ci) {
    std::vector<double> xs;
    for (std::size_t t = 0; t < grid.trials; ++t) xs.push_back(out.samples[ci * grid.trials + t].norm);
    std::sort(xs.begin(), xs.end());
    QuantileRow row{cells[ci].d, cells[ci].m, cells[ci].dist};
    row.median = quantile_sorted(xs, 0.5);
    row.p90 = quantile_sorted(xs, 0.9);
    row.p99 = quantile_sorted(xs, 0.99);
    row.median_se = detail::bootstrap_median_se(xs, hash_combine(grid.seed, ci));
    row.ratio = row.median / (std::sqrt(static_cast<double>(row.m)) + std::sqrt(static_cast<double>(row.d)));
    out.quantiles.push_back(row);
  }
  return out;
}

struct LineFit {
  double slope = 0.0;
  double intercept = 0.0;
  double slope_se = 0.0;  // propagated from the per-point standard errors
};

/// Least squares line through (x_i, y_i). With per-point standard errors
/// y_se the slope error is sqrt(sum a_i^2 se_i^2), a_i the OLS weights.
inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y, const std::vector<double>& y_se = {}) {
  const std::size_t n = x.size();
  if (n < 2 || y.size() != n) throw Error("fit_line: need two or more points");
  double xm = 0.0, ym = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    xm += x[i] / static_cast<double>(n);
    ym += y[i] / static_cast<double>(n);
  }
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sxx += (x[i] - xm) * (x[i] - xm);
    sxy += (x[i] - xm) * (y[i] - ym);
  }
  if (sxx == 0.0) throw Error("fit_line: x values are all equal");
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = ym - f.slope * xm;
  if (y_se.size() == n) {
    double v = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double a = (x[i] - xm) / sxx;
      v += a * a * y_se[i] * y_se[i];
    }
    f.slope_se = std::sqrt(v);
  } else if (n > 2) {
    double rss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double e = y[i] - f.intercept - f.slope * x[i];
      rss += e * e;
    }
    f.slope_se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
  } else {
    f.slope_se = std::numeric_limits<double>::quiet_NaN();
  }
  return f;
}

struct ScalingFit {
  enum class Axis { Width, Dim } axis = Axis::Width;  // Width: slope in log m at fixed d
  std::size_t fixed = 0;  // the d (or m) held fixed
  Distribution dist = Distribution::Laplace;
  std::vector<std::size_t> points;  // the m (or d) values used
  LineFit fit;
};

/// log median ||A|| against log m (or log d) through the listed cells.
inline ScalingFit fit_scaling(const TrialTable& table, Distribution dist, ScalingFit::Axis axis, std::size_t fixed,
                              const std::vector<std::size_t>& points) {
  std::vector<double> x, y, se;
  for (std::size_t p : points) {
    const QuantileRow& q = axis == ScalingFit::Axis::Width ? table.cell(fixed, p, dist) : table.cell(p, fixed, dist);
    x.push_back(std::log(static_cast<double>(p)));
    y.push_back(std::log(q.median));
    se.push_back(q.median_se / q.median);  // delta method for the log
  }
  return {axis, fixed, dist, points, fit_line(x, y, se)};
}

/// Every per-d fit in log m and per-m fit in log d over the full grid.
inline std::vector<ScalingFit> fit_all(const TrialTable& table, const TrialGrid& grid) {
  std::vector<ScalingFit> out;
  for (Distribution dist : grid.distributions) {
    if (grid.widths.size() >= 2)
      for (std::size_t d : grid.dims) out.push_back(fit_scaling(table, dist, ScalingFit::Axis::Width, d, grid.widths));
    if (grid.dims.size() >= 2)
      for (std::size_t m : grid.widths) out.push_back(fit_scaling(table, dist, ScalingFit::Axis::Dim, m, grid.dims));
  }
  return out;
}

struct Interval {
  double low = 0.0;
  double high = 0.0;
};

/// Wilson score interval for a binomial proportion.
inline Interval wilson_interval(std::size_t hits, std::size_t n, double z = 1.959963984540054) {
  if (n == 0) throw Error("wilson_interval: no trials");
  const double nn = static_cast<double>(n);
  const double p = static_cast<double>(hits) / nn;
  const double denom = 1.0 + z * z / nn;
  const double center = (p + z * z / (2.0 * nn)) / denom;
  const double half = z * std::sqrt(p * (1.0 - p) / nn + z * z / (4.0 * nn * nn)) / denom;
  return {std::max(0.0, center - half), std::min(1.0, center + half)};
}

struct EventRate {
  std::size_t d = 0;
  std::size_t m = 0;
  std::size_t trials = 0;
  std::size_t hits = 0;
  double frequency = 0.0;
  Interval ci;
  double bound = 0.0;  // exp(-sqrt(2) d) / 2
  bool consistent = false;  // bound does not exceed the interval's upper end
};

/// Frequency of {|A_11| >= d and sum_j A_2j^2 >= m/2} for unit-variance
/// Laplace entries. The two rows are independent, so the second row is only
/// drawn when the first condition holds. For d = 1 the second row is still an
/// independent draw.
inline EventRate lower_bound_event_rate(std::size_t d, std::size_t m, std::size_t trials, std::uint64_t seed) {
  if (d == 0 || m == 0) throw Error("lower_bound_event_rate: d and m must be >= 1");
  const double p_first = std::exp(-std::sqrt(2.0) * static_cast<double>(d));
  if (p_first * static_cast<double>(trials) < 100.0)
    throw Error("lower_bound_event_rate: under-powered, exp(-sqrt(2) d) * trials = " +
                std::to_string(p_first * static_cast<double>(trials)) + " < 100");
  RngStream rng(seed, hash_combine(0x72656d6b35ULL, hash_combine(d, m)));
  EventRate out;
  out.d = d;
  out.m = m;
  out.trials = trials;
  const double threshold = static_cast<double>(d);
  for (std::size_t t = 0; t < trials; ++t) {
    if (std::abs(sample_laplace(rng)) < threshold) continue;
    double s = 0.0;
    for (std::size_t j = 0; j < m; ++j) {
      const double a = sample_laplace(rng);
      s += a * a;
    }
    if (s >= 0.5 * static_cast<double>(m)) ++out.hits;
  }
  out.frequency = static_cast<double>(out.hits) / static_cast<double>(trials);
  out.ci = wilson_interval(out.hits, trials);
  out.bound = 0.5 * p_first;
  out.consistent = out.ci.high >= out.bound;
  return out;
}

inline void write_samples_csv(std::ostream& os, const TrialTable& table) {
  os << "d,m,dist,trial,spectral_norm\n";
  os.precision(17);
  for (const NormSample& s : table.samples)
    os << s.d << ',' << s.m << ',' << distribution_name(s.dist) << ',' << s.trial << ',' << s.norm << '\n';
}

inline void write_summary_csv(std::ostream& os, const TrialTable& table, const std::vector<ScalingFit>& fits) {
  os << "kind,d,m,dist,median,p90,p99,median_se,ratio,slope,slope_se\n";
  os.precision(10);
  for (const QuantileRow& q : table.quantiles)
    os << "cell," << q.d << ',' << q.m << ',' << distribution_name(q.dist) << ',' << q.median << ',' << q.p90 << ','
       << q.p99 << ',' << q.median_se << ',' << q.ratio << ",,\n";
  for (const ScalingFit& f : fits) {
    const bool width = f.axis == ScalingFit::Axis::Width;
    os << (width ? "slope_m," : "slope_d,") << (width ? std::to_string(f.fixed) : "") << ','
       << (width ? "" : std::to_string(f.fixed)) << ',' << distribution_name(f.dist) << ",,,,,," << f.fit.slope << ','
       << f.fit.slope_se << '\n';
  }
}

}  // namespace robustgd
