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

// Simulated worker pool with a closed menu of Byzantine behaviors.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "robustgd/errors.hpp"
#include "robustgd/learning.hpp"
#include "robustgd/numerics.hpp"

namespace robustgd {

enum class AttackKind { None, GaussianNoise, SignFlip, Constant, StealthShift };

inline std::string attack_name(AttackKind k) {
  switch (k) {
    case AttackKind::None: return "none";
    case AttackKind::GaussianNoise: return "gaussian";
    case AttackKind::SignFlip: return "signflip";
    case AttackKind::Constant: return "constant";
    case AttackKind::StealthShift: return "stealth";
  }
  throw Error("unknown attack kind");
}

struct AttackSpec {
  AttackKind kind = AttackKind::None;
  double scale = 0.0;  // noise sd, flip factor, or stealth delta
  Vector constant;  // used by Constant only

  static AttackSpec none() { return {}; }
  static AttackSpec gaussian_noise(double scale) { return {AttackKind::GaussianNoise, scale, {}}; }
  static AttackSpec sign_flip(double scale) { return {AttackKind::SignFlip, scale, {}}; }
  static AttackSpec constant_vector(Vector v) { return {AttackKind::Constant, 0.0, std::move(v)}; }
  static AttackSpec stealth_shift(double delta) { return {AttackKind::StealthShift, delta, {}}; }

  void validate() const {
    if (!(scale >= 0.0) || !std::isfinite(scale)) throw Error("attack: scale must be finite and >= 0");
    for (double x : constant)
      if (!std::isfinite(x)) throw Error("attack: constant vector must be finite");
  }
};

enum class ScheduleMode { Fixed, MobileResample };

struct FaultSchedule {
  std::size_t q = 0;
  ScheduleMode mode = ScheduleMode::Fixed;
  std::vector<std::size_t> fixed_ids;  // Fixed: defaults to workers 0..q-1 when empty
  std::uint64_t seed = 0;  // MobileResample

  void validate(std::size_t m) const {
    if (q > m) throw Error("fault schedule: q = " + std::to_string(q) + " exceeds m = " + std::to_string(m));
    if (mode == ScheduleMode::Fixed && !fixed_ids.empty()) {
      std::set<std::size_t> uniq(fixed_ids.begin(), fixed_ids.end());
      if (uniq.size() != fixed_ids.size()) throw Error("fault schedule: duplicate faulty id");
      if (fixed_ids.size() > q) throw Error("fault schedule: more fixed ids than q");
      if (*uniq.rbegin() >= m) throw Error("fault schedule: faulty id out of range");
    }
  }
};

/// Faulty worker ids for a round, ascending. Mobile sets come from a
/// stream keyed by the round so that later rounds never shift earlier ones.
inline std::vector<std::size_t> select_faulty(const FaultSchedule& schedule, std::size_t round, std::size_t m) {
  schedule.validate(m);
  std::vector<std::size_t> out;
  if (schedule.q == 0) return out;
  if (schedule.mode == ScheduleMode::Fixed) {
    if (schedule.fixed_ids.empty()) {
      out.resize(schedule.q);
      std::iota(out.begin(), out.end(), std::size_t{0});
    } else {
      out = schedule.fixed_ids;
      std::sort(out.begin(), out.end());
    }
    return out;
  }
  RngStream rng(schedule.seed, hash_combine(0x6d6f62696c65ULL, round));
  std::vector<std::size_t> perm(m);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t k = 0; k < schedule.q; ++k) {
    std::uniform_int_distribution<std::size_t> pick(k, m - 1);
    std::swap(perm[k], perm[pick(rng.engine())]);
  }
  out.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(schedule.q));
  std::sort(out.begin(), out.end());
  return out;
}

/// Top eigenvector of the empirical covariance of the reports, sign fixed so
/// that its largest-magnitude entry is positive.
inline Vector top_spread_direction(const std::vector<Vector>& pts) {
  const std::size_t d = pts.front().size();
  Vector mu(d, 0.0);
  for (const Vector& p : pts)
    for (std::size_t k = 0; k < d; ++k) mu[k] += p[k] / static_cast<double>(pts.size());
  SymmetricMatrix cov(d);
  Vector diff(d);
  for (const Vector& p : pts) {
    for (std::size_t k = 0; k < d; ++k) diff[k] = p[k] - mu[k];
    cov.add_outer(1.0 / static_cast<double>(pts.size()), diff);
  }
  SymmetricEigen e = symmetric_eigen(cov);
  Vector u = e.vectors.column(d - 1);
  std::size_t big = 0;
  for (std::size_t k = 1; k < d; ++k)
    if (std::abs(u[k]) > std::abs(u[big])) big = k;
  if (u[big] < 0.0)
    for (double& x : u) x = -x;
  return u;
}

/// Rewrites the faulty workers' reports. Everything else is copied through.
///
/// StealthShift: the colluders all report mean(own true gradients) + (m/q) s u,
/// which moves the overall mean by exactly s u. s = delta unless that would
/// push a report beyond the widest honest deviation along u, in which case
/// s is capped there.
inline GradientReport apply_attack(const AttackSpec& spec, const GradientReport& honest,
                                   std::span<const std::size_t> faulty_ids, RngStream& rng) {
  spec.validate();
  GradientReport out = honest;
  if (spec.kind == AttackKind::None || faulty_ids.empty()) return out;
  std::vector<std::size_t> slots;
  for (std::size_t id : faulty_ids) {
    auto it = std::find(honest.worker_ids.begin(), honest.worker_ids.end(), static_cast<std::uint32_t>(id));
    if (it == honest.worker_ids.end()) throw Error("apply_attack: faulty id " + std::to_string(id) + " not reporting");
    slots.push_back(static_cast<std::size_t>(it - honest.worker_ids.begin()));
  }
  const std::size_t d = honest.dim();
  switch (spec.kind) {
    case AttackKind::SignFlip:
      for (std::size_t s : slots)
        for (double& x : out.gradients[s]) x = -spec.scale * x;
      break;
    case AttackKind::GaussianNoise:
      for (std::size_t s : slots)
        for (double& x : out.gradients[s]) x += spec.scale * rng.normal();
      break;
    case AttackKind::Constant:
      if (spec.constant.size() != d) throw DimensionError("apply_attack: constant vector has wrong dimension");
      for (std::size_t s : slots) out.gradients[s] = spec.constant;
      break;
    case AttackKind::StealthShift: {
      const double m = static_cast<double>(honest.size());
      const double q = static_cast<double>(slots.size());
      const Vector u = top_spread_direction(honest.gradients);
      Vector mu(d, 0.0), mu_f(d, 0.0);
      for (const Vector& g : honest.gradients)
        for (std::size_t k = 0; k < d; ++k) mu[k] += g[k] / m;
      for (std::size_t s : slots)
        for (std::size_t k = 0; k < d; ++k) mu_f[k] += honest.gradients[s][k] / q;
      double spread = 0.0;
      for (const Vector& g : honest.gradients) {
        double proj = 0.0;
        for (std::size_t k = 0; k < d; ++k) proj += (g[k] - mu[k]) * u[k];
        spread = std::max(spread, std::abs(proj));
      }
      double base = 0.0;
      for (std::size_t k = 0; k < d; ++k) base += (mu_f[k] - mu[k]) * u[k];
      const double room = std::max(0.0, spread - base);
      const double offset = std::min(m / q * spec.scale, room);
      for (std::size_t s : slots)
        for (std::size_t k = 0; k < d; ++k) out.gradients[s][k] = mu_f[k] + offset * u[k];
      break;
    }
    case AttackKind::None: break;
  }
  return out;
}

/// m simulated workers over fixed shards, some of them Byzantine each round.
class SimulatedSystem : public ReportSource {
 public:
  SimulatedSystem(std::vector<Shard> shards, AttackSpec attack, FaultSchedule schedule, std::uint64_t seed)
      : shards_(std::move(shards)), attack_(std::move(attack)), schedule_(std::move(schedule)), seed_(seed) {
    if (shards_.empty()) throw Error("simulated system: no workers");
    attack_.validate();
    schedule_.validate(shards_.size());
  }

  std::size_t workers() const { return shards_.size(); }

  /// True local gradients of every worker, in id order.
  GradientReport honest_reports(std::span<const double> theta) const {
    GradientReport rep;
    for (const Shard& s : shards_) {
      rep.worker_ids.push_back(s.worker_id);
      rep.gradients.push_back(local_gradient(s, theta));
    }
    return rep;
  }

  CollectedRound collect(std::uint32_t round, std::span<const double> theta) override {
    GradientReport honest = honest_reports(theta);
    const std::vector<std::size_t> faulty = select_faulty(schedule_, round, shards_.size());
    RngStream rng(seed_, hash_combine(0x61747461636bULL, round));
    CollectedRound out;
    out.reference_gradient = detail::mean_of(honest.gradients, 0, honest.size());
    out.reports = apply_attack(attack_, honest, faulty, rng);
    return out;
  }

 private:
  std::vector<Shard> shards_;
  AttackSpec attack_;
  FaultSchedule schedule_;
  std::uint64_t seed_;
};

}  // namespace robustgd
