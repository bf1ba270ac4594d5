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

// Experiment configuration: flat "section.key = value" text with
// line-precise errors and a canonical serializer.

#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <type_traits>
#include <vector>

#include "robustgd/byzantine.hpp"
#include "robustgd/concentration.hpp"
#include "robustgd/errors.hpp"
#include "robustgd/filter.hpp"
#include "robustgd/learning.hpp"

namespace robustgd {

struct ModelBlock {
  std::size_t d = 20;
  std::size_t n_samples = 4000;
  std::size_t m = 100;
  double noise = 1.0;
  std::uint64_t theta_seed = 1;
  bool operator==(const ModelBlock&) const = default;
};

struct FaultBlock {
  std::size_t q = 0;
  ScheduleMode schedule = ScheduleMode::Fixed;
  std::vector<std::size_t> ids;
  AttackKind attack = AttackKind::None;
  double scale = 0.0;
  std::vector<double> constant;
  bool operator==(const FaultBlock&) const = default;
};

enum class AggregatorKind { Mean, CoordMedian, TrimmedMean, GeoMedian, IterFilter };

struct AggregatorBlock {
  AggregatorKind method = AggregatorKind::Mean;
  double beta = 0.1;
  std::size_t groups = 10;
  std::optional<double> epsilon;  // defaults to q/m
  Termination termination = Termination::Cardinality;
  std::optional<double> sigma;
  double saddle_tol = 1e-3;
  int saddle_max_iter = 500;
  bool operator==(const AggregatorBlock&) const = default;
};

struct TrainBlock {
  std::optional<double> eta;  // nullopt = auto
  std::size_t rounds = 50;
  std::optional<double> radius;
  bool record_time = false;
  bool operator==(const TrainBlock&) const = default;
};

struct BenchBlock {
  std::vector<AggregatorKind> aggregators{AggregatorKind::Mean, AggregatorKind::IterFilter};
  std::vector<std::size_t> q_values{0};
  std::size_t reps = 5;
  bool operator==(const BenchBlock&) const = default;
};

struct ConcBlock {
  std::vector<std::size_t> dims{50};
  std::vector<std::size_t> widths{100, 400, 1600, 6400};
  std::vector<Distribution> dists{Distribution::Laplace};
  std::size_t trials = 100;
  std::size_t event_d = 3;
  std::size_t event_m = 1000;
  std::size_t event_trials = 0;  // 0 skips the event-rate estimate
  bool operator==(const ConcBlock&) const = default;
};

struct ExperimentConfig {
  std::string id = "run";
  std::uint64_t seed = 0;
  std::string output;
  ModelBlock model;
  FaultBlock fault;
  AggregatorBlock aggregator;
  TrainBlock train;
  BenchBlock bench;
  ConcBlock conc;
  std::map<std::string, int> lines;  // key -> source line, for error messages

  bool operator==(const ExperimentConfig& o) const {
    return id == o.id && seed == o.seed && output == o.output && model == o.model && fault == o.fault &&
           aggregator == o.aggregator && train == o.train && bench == o.bench && conc == o.conc;
  }

  int line_of(const std::string& key) const {
    auto it = lines.find(key);
    return it == lines.end() ? 0 : it->second;
  }

  double epsilon_for(std::size_t q) const {
    if (aggregator.epsilon) return *aggregator.epsilon;
    return std::min(0.249, static_cast<double>(q) / static_cast<double>(model.m));
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, ',')) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

template <class T>
T parse_number(const std::string& key, const std::string& v, int line) {
  T out{};
  const char* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end || v.empty()) throw ConfigError(line, key + ": cannot parse '" + v + "' as a number");
  if constexpr (std::is_floating_point_v<T>)
    if (!std::isfinite(out)) throw ConfigError(line, key + ": value must be finite");
  return out;
}

inline std::string fmt(double x) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, p);
}

template <class T>
std::string join(const std::vector<T>& xs) {
  std::string out;
  for (std::size_t k = 0; k < xs.size(); ++k) {
    if (k) out += ", ";
    if constexpr (std::is_floating_point_v<T>)
      out += fmt(xs[k]);
    else
      out += std::to_string(xs[k]);
  }
  return out;
}

inline const std::vector<std::pair<AggregatorKind, std::string>>& aggregator_names() {
  static const std::vector<std::pair<AggregatorKind, std::string>> names{
      {AggregatorKind::Mean, "mean"},
      {AggregatorKind::CoordMedian, "coordmedian"},
      {AggregatorKind::TrimmedMean, "trimmedmean"},
      {AggregatorKind::GeoMedian, "geomedian"},
      {AggregatorKind::IterFilter, "iterfilter"}};
  return names;
}

inline AggregatorKind parse_aggregator(const std::string& key, const std::string& v, int line) {
  for (const auto& [k, name] : aggregator_names())
    if (name == v) return k;
  throw ConfigError(line, key + ": unknown aggregator '" + v + "'");
}

inline AttackKind parse_attack(const std::string& v, int line) {
  for (AttackKind k : {AttackKind::None, AttackKind::GaussianNoise, AttackKind::SignFlip, AttackKind::Constant,
                       AttackKind::StealthShift})
    if (attack_name(k) == v) return k;
  throw ConfigError(line, "fault.attack: unknown attack '" + v + "'");
}

}  // namespace config_detail

inline std::string aggregator_kind_name(AggregatorKind k) {
  for (const auto& [kind, name] : config_detail::aggregator_names())
    if (kind == k) return name;
  throw Error("unknown aggregator kind");
}

/// Checks cross-field constraints. Errors point at the offending key's line.
inline void validate(const ExperimentConfig& c) {
  auto fail = [&](const std::string& key, const std::string& what) { throw ConfigError(c.line_of(key), key + ": " + what); };
  if (c.model.d == 0) fail("model.d", "must be >= 1");
  if (c.model.m == 0) fail("model.m", "must be >= 1");
  if (c.model.n_samples == 0 || c.model.n_samples % c.model.m != 0)
    fail("model.N", "N = " + std::to_string(c.model.n_samples) + " must be a positive multiple of m = " + std::to_string(c.model.m));
  if (c.model.noise < 0.0) fail("model.noise", "must be >= 0");
  if (c.train.eta && !(*c.train.eta > 0.0)) fail("train.eta", "step size must be positive");
  if (c.train.rounds == 0) fail("train.rounds", "need at least one round");
  if (c.train.radius && !(*c.train.radius > 0.0)) fail("train.radius", "must be positive");
  if (c.fault.scale < 0.0) fail("fault.scale", "must be >= 0");
  if (c.fault.attack == AttackKind::Constant && c.fault.constant.size() != c.model.d)
    fail("fault.constant", "needs exactly d = " + std::to_string(c.model.d) + " entries");
  if (c.aggregator.beta < 0.0 || c.aggregator.beta >= 0.5) fail("aggregator.beta", "must lie in [0, 1/2)");
  if (c.aggregator.groups == 0) fail("aggregator.groups", "must be >= 1");
  if (c.aggregator.saddle_tol <= 0.0) fail("aggregator.saddle_tol", "must be positive");
  if (c.aggregator.saddle_max_iter < 1) fail("aggregator.saddle_max_iter", "must be >= 1");
  if (c.aggregator.termination == Termination::SigmaThreshold && !(c.aggregator.sigma && *c.aggregator.sigma > 0.0))
    fail(c.aggregator.sigma ? "aggregator.sigma" : "aggregator.termination",
         "sigma termination needs a positive aggregator.sigma");
  if (c.aggregator.epsilon && !(*c.aggregator.epsilon >= 0.0 && *c.aggregator.epsilon < 0.25))
    fail("aggregator.epsilon", "the filter needs 0 <= epsilon < 1/4");
  if (c.bench.reps == 0) fail("bench.reps", "must be >= 1");
  if (c.bench.aggregators.empty()) fail("bench.aggregators", "list is empty");
  if (c.bench.q_values.empty()) fail("bench.q", "list is empty");

  auto check_q = [&](std::size_t q, const std::string& key, bool filter) {
    if (q > c.model.m) fail(key, "q = " + std::to_string(q) + " exceeds m = " + std::to_string(c.model.m));
    const double ratio = static_cast<double>(q) / static_cast<double>(c.model.m);
    if (filter && !c.aggregator.epsilon && ratio >= 0.25)
      fail(key, "q/m = " + config_detail::fmt(ratio) + " is outside the filter's domain epsilon = q/m < 1/4");
    if (filter && c.aggregator.epsilon && ratio > *c.aggregator.epsilon)
      fail(key, "q/m = " + config_detail::fmt(ratio) + " exceeds aggregator.epsilon");
  };
  check_q(c.fault.q, "fault.q", c.aggregator.method == AggregatorKind::IterFilter);
  for (std::size_t id : c.fault.ids)
    if (id >= c.model.m) fail("fault.ids", "id " + std::to_string(id) + " out of range");
  if (c.fault.ids.size() > c.fault.q) fail("fault.ids", "more ids than q");
  const bool bench_filter = std::find(c.bench.aggregators.begin(), c.bench.aggregators.end(), AggregatorKind::IterFilter) !=
                            c.bench.aggregators.end();
  for (std::size_t q : c.bench.q_values) check_q(q, "bench.q", bench_filter);
  if (c.aggregator.method == AggregatorKind::GeoMedian && c.aggregator.groups > c.model.m)
    fail("aggregator.groups", "k exceeds m");
  if (c.conc.trials < 30) fail("conc.trials", "need at least 30 trials per cell");
  for (std::size_t x : c.conc.dims)
    if (x == 0) fail("conc.dims", "entries must be >= 1");
  for (std::size_t x : c.conc.widths)
    if (x == 0) fail("conc.widths", "entries must be >= 1");
}

/// Parses and validates. Blank lines and '#' comments are ignored; every
/// other line must be "key = value" with a known key, at most once.
inline ExperimentConfig parse_config(std::istream& in) {
  using namespace config_detail;
  ExperimentConfig c;
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string text = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (text.empty()) continue;
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected 'key = value', got '" + text + "'");
    const std::string key = trim(text.substr(0, eq));
    const std::string v = trim(text.substr(eq + 1));
    if (key.empty()) throw ConfigError(line, "missing key");
    if (c.lines.count(key)) throw ConfigError(line, key + ": duplicate key (first set on line " + std::to_string(c.lines[key]) + ")");
    c.lines[key] = line;

    auto u64 = [&] { return parse_number<std::uint64_t>(key, v, line); };
    auto count = [&] { return static_cast<std::size_t>(parse_number<std::uint64_t>(key, v, line)); };
    auto real = [&] { return parse_number<double>(key, v, line); };
    auto flag = [&] {
      if (v == "true") return true;
      if (v == "false") return false;
      throw ConfigError(line, key + ": expected true or false, got '" + v + "'");
    };
    auto counts = [&] {
      std::vector<std::size_t> out;
      for (const std::string& s : split_list(v)) out.push_back(static_cast<std::size_t>(parse_number<std::uint64_t>(key, s, line)));
      return out;
    };
    auto optional_real = [&](const char* none) -> std::optional<double> {
      if (v == none) return std::nullopt;
      return real();
    };

    if (key == "experiment.id") c.id = v;
    else if (key == "experiment.seed") c.seed = u64();
    else if (key == "output.path") c.output = v;
    else if (key == "model.d") c.model.d = count();
    else if (key == "model.N") c.model.n_samples = count();
    else if (key == "model.m") c.model.m = count();
    else if (key == "model.noise") c.model.noise = real();
    else if (key == "model.theta_seed") c.model.theta_seed = u64();
    else if (key == "fault.q") c.fault.q = count();
    else if (key == "fault.schedule") {
      if (v == "fixed") c.fault.schedule = ScheduleMode::Fixed;
      else if (v == "mobile") c.fault.schedule = ScheduleMode::MobileResample;
      else throw ConfigError(line, "fault.schedule: expected fixed or mobile, got '" + v + "'");
    } else if (key == "fault.ids") c.fault.ids = counts();
    else if (key == "fault.attack") c.fault.attack = parse_attack(v, line);
    else if (key == "fault.scale") c.fault.scale = real();
    else if (key == "fault.constant") {
      c.fault.constant.clear();
      for (const std::string& s : split_list(v)) c.fault.constant.push_back(parse_number<double>(key, s, line));
    } else if (key == "aggregator.method") c.aggregator.method = parse_aggregator(key, v, line);
    else if (key == "aggregator.beta") c.aggregator.beta = real();
    else if (key == "aggregator.groups") c.aggregator.groups = count();
    else if (key == "aggregator.epsilon") c.aggregator.epsilon = optional_real("auto");
    else if (key == "aggregator.termination") {
      if (v == "cardinality") c.aggregator.termination = Termination::Cardinality;
      else if (v == "sigma") c.aggregator.termination = Termination::SigmaThreshold;
      else throw ConfigError(line, "aggregator.termination: expected cardinality or sigma, got '" + v + "'");
    } else if (key == "aggregator.sigma") c.aggregator.sigma = optional_real("none");
    else if (key == "aggregator.saddle_tol") c.aggregator.saddle_tol = real();
    else if (key == "aggregator.saddle_max_iter") c.aggregator.saddle_max_iter = static_cast<int>(count());
    else if (key == "train.eta") c.train.eta = optional_real("auto");
    else if (key == "train.rounds") c.train.rounds = count();
    else if (key == "train.radius") c.train.radius = optional_real("none");
    else if (key == "train.record_time") c.train.record_time = flag();
    else if (key == "bench.aggregators") {
      c.bench.aggregators.clear();
      for (const std::string& s : split_list(v)) c.bench.aggregators.push_back(parse_aggregator(key, s, line));
    } else if (key == "bench.q") c.bench.q_values = counts();
    else if (key == "bench.reps") c.bench.reps = count();
    else if (key == "conc.dims") c.conc.dims = counts();
    else if (key == "conc.widths") c.conc.widths = counts();
    else if (key == "conc.dists") {
      c.conc.dists.clear();
      for (const std::string& s : split_list(v)) {
        if (s == "laplace") c.conc.dists.push_back(Distribution::Laplace);
        else if (s == "gaussian") c.conc.dists.push_back(Distribution::Gaussian);
        else throw ConfigError(line, "conc.dists: unknown distribution '" + s + "'");
      }
    } else if (key == "conc.trials") c.conc.trials = count();
    else if (key == "conc.event_d") c.conc.event_d = count();
    else if (key == "conc.event_m") c.conc.event_m = count();
    else if (key == "conc.event_trials") c.conc.event_trials = count();
    else throw ConfigError(line, "unknown key '" + key + "'");
  }
  validate(c);
  return c;
}

inline ExperimentConfig parse_config_string(const std::string& text) {
  std::istringstream is(text);
  return parse_config(is);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(0, "cannot open config file '" + path + "'");
  return parse_config(in);
}

/// Canonical text: every key, fixed order, shortest round-trip numbers.
inline std::string serialize_config(const ExperimentConfig& c) {
  using namespace config_detail;
  auto opt = [](const std::optional<double>& x, const char* none) { return x ? fmt(*x) : std::string(none); };
  std::ostringstream os;
  os << "experiment.id = " << c.id << '\n'
     << "experiment.seed = " << c.seed << '\n';
  if (!c.output.empty()) os << "output.path = " << c.output << '\n';
  os << "model.d = " << c.model.d << '\n'
     << "model.N = " << c.model.n_samples << '\n'
     << "model.m = " << c.model.m << '\n'
     << "model.noise = " << fmt(c.model.noise) << '\n'
     << "model.theta_seed = " << c.model.theta_seed << '\n'
     << "fault.q = " << c.fault.q << '\n'
     << "fault.schedule = " << (c.fault.schedule == ScheduleMode::Fixed ? "fixed" : "mobile") << '\n';
  if (!c.fault.ids.empty()) os << "fault.ids = " << join(c.fault.ids) << '\n';
  os << "fault.attack = " << attack_name(c.fault.attack) << '\n'
     << "fault.scale = " << fmt(c.fault.scale) << '\n';
  if (!c.fault.constant.empty()) os << "fault.constant = " << join(c.fault.constant) << '\n';
  os << "aggregator.method = " << aggregator_kind_name(c.aggregator.method) << '\n'
     << "aggregator.beta = " << fmt(c.aggregator.beta) << '\n'
     << "aggregator.groups = " << c.aggregator.groups << '\n'
     << "aggregator.epsilon = " << opt(c.aggregator.epsilon, "auto") << '\n'
     << "aggregator.termination = " << (c.aggregator.termination == Termination::Cardinality ? "cardinality" : "sigma") << '\n'
     << "aggregator.sigma = " << opt(c.aggregator.sigma, "none") << '\n'
     << "aggregator.saddle_tol = " << fmt(c.aggregator.saddle_tol) << '\n'
     << "aggregator.saddle_max_iter = " << c.aggregator.saddle_max_iter << '\n'
     << "train.eta = " << opt(c.train.eta, "auto") << '\n'
     << "train.rounds = " << c.train.rounds << '\n'
     << "train.radius = " << opt(c.train.radius, "none") << '\n'
     << "train.record_time = " << (c.train.record_time ? "true" : "false") << '\n';
  std::string aggs;
  for (AggregatorKind k : c.bench.aggregators) aggs += (aggs.empty() ? "" : ", ") + aggregator_kind_name(k);
  os << "bench.aggregators = " << aggs << '\n'
     << "bench.q = " << join(c.bench.q_values) << '\n'
     << "bench.reps = " << c.bench.reps << '\n'
     << "conc.dims = " << join(c.conc.dims) << '\n'
     << "conc.widths = " << join(c.conc.widths) << '\n';
  std::string dists;
  for (Distribution d : c.conc.dists) dists += (dists.empty() ? "" : ", ") + distribution_name(d);
  os << "conc.dists = " << dists << '\n'
     << "conc.trials = " << c.conc.trials << '\n'
     << "conc.event_d = " << c.conc.event_d << '\n'
     << "conc.event_m = " << c.conc.event_m << '\n'
     << "conc.event_trials = " << c.conc.event_trials << '\n';
  return os.str();
}

}  // namespace robustgd
