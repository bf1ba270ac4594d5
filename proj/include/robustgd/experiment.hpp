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

// Experiment harness: builds problems from a config, runs simulations and
// sweeps, and writes metrics CSV.

#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <memory>
#include <mutex>
#include <numeric>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "robustgd/byzantine.hpp"
#include "robustgd/config.hpp"
#include "robustgd/learning.hpp"
#include "robustgd/numerics.hpp"
#include "robustgd/transport.hpp"

namespace robustgd {

constexpr const char* kMetricsSchema = "#schema=robustgd-metrics/1";
constexpr const char* kMetricsHeader = "experiment,round,error,aggregation_deviation,removals,flags,seconds";
constexpr const char* kBenchHeader = "aggregator,q,rep,seed,final_error";

struct Problem {
  Vector theta_star;
  Dataset data;
  std::vector<Shard> shards;
  double eta = 0.0;
};

/// theta* comes from model.theta_seed alone; the data from `seed`.
inline Problem build_problem(const ExperimentConfig& c, std::uint64_t seed) {
  Problem p;
  RngStream theta_rng(c.model.theta_seed, 0x7468657461ULL);
  p.theta_star = sample_gaussian(c.model.d, theta_rng);
  RngStream data_rng(seed, 0x64617461ULL);
  p.data = linreg_generate(c.model.d, c.model.n_samples, p.theta_star, c.model.noise, data_rng);
  p.shards = partition(p.data, c.model.m);
  p.eta = c.train.eta ? *c.train.eta : auto_step_size(p.data);
  return p;
}

inline AttackSpec attack_from(const ExperimentConfig& c) {
  switch (c.fault.attack) {
    case AttackKind::None: return AttackSpec::none();
    case AttackKind::GaussianNoise: return AttackSpec::gaussian_noise(c.fault.scale);
    case AttackKind::SignFlip: return AttackSpec::sign_flip(c.fault.scale);
    case AttackKind::Constant: return AttackSpec::constant_vector(c.fault.constant);
    case AttackKind::StealthShift: return AttackSpec::stealth_shift(c.fault.scale);
  }
  throw Error("unknown attack");
}

inline FaultSchedule schedule_from(const ExperimentConfig& c, std::size_t q, std::uint64_t seed) {
  FaultSchedule s;
  s.q = q;
  s.mode = c.fault.schedule;
  if (s.mode == ScheduleMode::Fixed) s.fixed_ids = c.fault.ids;
  s.seed = hash_combine(seed, 0x6661756c74ULL);
  return s;
}

inline Aggregator aggregator_from(const ExperimentConfig& c, AggregatorKind kind, std::size_t q) {
  switch (kind) {
    case AggregatorKind::Mean: return MeanAggregator{};
    case AggregatorKind::CoordMedian: return CoordMedianAggregator{};
    case AggregatorKind::TrimmedMean: return TrimmedMeanAggregator{c.aggregator.beta};
    case AggregatorKind::GeoMedian: return GeoMedianOfMeansAggregator{c.aggregator.groups};
    case AggregatorKind::IterFilter: {
      FilterConfig f;
      f.epsilon = c.epsilon_for(q);
      f.sigma = c.aggregator.sigma;
      f.termination = c.aggregator.termination;
      f.saddle.tol = c.aggregator.saddle_tol;
      f.saddle.max_iter = c.aggregator.saddle_max_iter;
      return IterFilterAggregator{f};
    }
  }
  throw Error("unknown aggregator");
}

inline TrainConfig train_config_from(const ExperimentConfig& c, const Problem& p, AggregatorKind kind, std::size_t q) {
  TrainConfig t;
  t.eta = p.eta;
  t.rounds = c.train.rounds;
  t.aggregator = aggregator_from(c, kind, q);
  t.radius = c.train.radius;
  t.record_time = c.train.record_time;
  return t;
}

/// The simulated system a config describes, for q faulty workers.
inline SimulatedSystem system_from(const ExperimentConfig& c, const Problem& p, std::size_t q, std::uint64_t seed) {
  return SimulatedSystem(p.shards, attack_from(c), schedule_from(c, q, seed), hash_combine(seed, 0x61747461636bULL));
}

/// What worker `id` reports in a networked run: its own true gradient, or
/// the value the simulated adversary would send in its place. Faulty workers
/// are omniscient and rebuild every honest report.
inline GradientFn worker_gradient_fn(const ExperimentConfig& c, const Problem& p, std::uint64_t seed) {
  const bool may_attack = c.fault.q > 0 && c.fault.attack != AttackKind::None;
  auto sys = std::make_shared<SimulatedSystem>(system_from(c, p, c.fault.q, seed));
  auto shards = std::make_shared<std::vector<Shard>>(p.shards);
  return [=](std::uint32_t id, std::uint32_t round, std::span<const double> theta) -> std::optional<Vector> {
    if (id >= shards->size()) throw TransportError("worker id out of range for this config");
    if (!may_attack) return local_gradient((*shards)[id], theta);
    return sys->collect(round, theta).reports.gradients[id];
  };
}

inline std::string csv_number(double x) {
  if (std::isnan(x)) return "";
  return config_detail::fmt(x);
}

inline void write_metrics_header(std::ostream& os) { os << kMetricsSchema << '\n' << kMetricsHeader << '\n'; }

inline void write_metrics_rows(std::ostream& os, const std::string& experiment, const std::vector<RoundMetrics>& rows) {
  for (const RoundMetrics& r : rows)
    os << experiment << ',' << r.round << ',' << csv_number(r.error) << ',' << csv_number(r.aggregation_deviation) << ','
       << r.removals << ',' << r.flags << ',' << csv_number(r.seconds) << '\n';
}

/// One end-to-end simulated training run with the master seed.
inline TrainResult run_simulation(const ExperimentConfig& c) {
  const Problem p = build_problem(c, c.seed);
  SimulatedSystem sys = system_from(c, p, c.fault.q, c.seed);
  return train(sys, train_config_from(c, p, c.aggregator.method, c.fault.q), Vector(c.model.d, 0.0), p.theta_star);
}

struct BenchRow {
  AggregatorKind aggregator = AggregatorKind::Mean;
  std::size_t q = 0;
  std::size_t rep = 0;
  std::uint64_t seed = 0;
  double final_error = 0.0;
};

/// Seed of sweep cell (q, rep); drives the attack randomness. The aggregator
/// is left out on purpose so every method sees the same data and faults.
inline std::uint64_t cell_seed(std::uint64_t master, std::size_t q, std::size_t rep) {
  return hash_combine(hash_combine(master, q), rep);
}

/// Data seed of replicate `rep`, shared by every q so that the sweep compares
/// attacks on the same sample rather than sample noise.
inline std::uint64_t data_seed(std::uint64_t master, std::size_t rep) {
  return hash_combine(hash_combine(master, 0x64617461ULL), rep);
}

/// Runs fn(k) for k in [0, n) on up to `threads` threads.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
  threads = std::max(1u, std::min<unsigned>(threads, static_cast<unsigned>(std::max<std::size_t>(n, 1))));
  if (threads == 1) {
    for (std::size_t k = 0; k < n; ++k) fn(k);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex fail_mu;
  std::vector<std::thread> pool;
  for (unsigned t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t k; (k = next.fetch_add(1)) < n;) {
        try {
          fn(k);
        } catch (...) {
          std::lock_guard lock(fail_mu);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

/// Every (aggregator, q, rep) cell; rows come back in that nested order.
inline std::vector<BenchRow> run_bench(const ExperimentConfig& c, unsigned threads = 1) {
  std::vector<BenchRow> rows;
  for (AggregatorKind a : c.bench.aggregators)
    for (std::size_t q : c.bench.q_values)
      for (std::size_t r = 0; r < c.bench.reps; ++r) rows.push_back({a, q, r, cell_seed(c.seed, q, r)});
  parallel_for(rows.size(), threads, [&](std::size_t k) {
    BenchRow& row = rows[k];
    const Problem p = build_problem(c, data_seed(c.seed, row.rep));
    SimulatedSystem sys = system_from(c, p, row.q, row.seed);
    TrainConfig t = train_config_from(c, p, row.aggregator, row.q);
    t.record_time = false;
    row.final_error = train(sys, t, Vector(c.model.d, 0.0), p.theta_star).metrics.back().error;
  });
  return rows;
}

inline void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << kBenchHeader << '\n';
  for (const BenchRow& r : rows)
    os << aggregator_kind_name(r.aggregator) << ',' << r.q << ',' << r.rep << ',' << r.seed << ','
       << csv_number(r.final_error) << '\n';
}

/// Spearman rank correlation with average ranks for ties.
inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("spearman: need two equal-length samples");
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> order(v.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
      for (std::size_t k = i; k <= j; ++k) r[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
      i = j + 1;
    }
    return r;
  };
  const std::vector<double> rx = ranks(x), ry = ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i] / n;
    my += ry[i] / n;
  }
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

inline TrialGrid grid_from(const ExperimentConfig& c) {
  TrialGrid g;
  g.dims = c.conc.dims;
  g.widths = c.conc.widths;
  g.distributions = c.conc.dists;
  g.trials = c.conc.trials;
  g.seed = c.seed;
  return g;
}

}  // namespace robustgd
