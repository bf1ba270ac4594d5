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

// robustgd command-line entry point.
//
// Exit codes: 0 success, 1 runtime failure, 2 bad configuration or flags,
// 3 transport failure.

#include <CLI11.hpp>

#include <chrono>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <thread>

#include "robustgd/concentration.hpp"
#include "robustgd/config.hpp"
#include "robustgd/experiment.hpp"
#include "robustgd/transport.hpp"

namespace {

using namespace robustgd;

constexpr int kExitRuntime = 1;
constexpr int kExitConfig = 2;
constexpr int kExitTransport = 3;

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  unsigned parallel = 1;
};

ExperimentConfig load(const Common& c) {
  ExperimentConfig cfg = load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  if (!c.out.empty()) cfg.output = c.out;
  return cfg;
}

/// Writes to the configured path, or stdout when none is set.
void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error("cannot write '" + path + "'");
  f << text;
  if (!f) throw Error("write failed for '" + path + "'");
}

std::string summary_path(const std::string& samples) {
  if (samples.empty() || samples == "-") return "";
  const auto dot = samples.rfind('.');
  const auto slash = samples.find_last_of('/');
  const bool has_ext = dot != std::string::npos && (slash == std::string::npos || dot > slash);
  return (has_ext ? samples.substr(0, dot) : samples) + ".summary.csv";
}

int cmd_simulate(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const TrainResult res = run_simulation(cfg);
  std::ostringstream os;
  write_metrics_header(os);
  write_metrics_rows(os, cfg.id, res.metrics);
  emit(cfg.output, os.str());
  return 0;
}

int cmd_bench(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const std::vector<BenchRow> rows = run_bench(cfg, c.parallel);
  std::ostringstream os;
  write_bench_csv(os, rows);
  emit(cfg.output, os.str());
  return 0;
}

int cmd_conc(const Common& c) {
  const ExperimentConfig cfg = load(c);
  const TrialGrid grid = grid_from(cfg);
  const TrialTable table = spectral_norm_trials(grid, c.parallel);
  std::ostringstream samples, summary;
  write_samples_csv(samples, table);
  write_summary_csv(summary, table, fit_all(table, grid));
  if (cfg.conc.event_trials > 0) {
    const EventRate e = lower_bound_event_rate(cfg.conc.event_d, cfg.conc.event_m, cfg.conc.event_trials, cfg.seed);
    summary << "# event d=" << e.d << " m=" << e.m << " trials=" << e.trials << " hits=" << e.hits
            << " frequency=" << e.frequency << " ci=[" << e.ci.low << "," << e.ci.high << "] bound=" << e.bound
            << " consistent=" << (e.consistent ? "yes" : "no") << '\n';
  }
  const std::string spath = summary_path(cfg.output);
  if (spath.empty()) {
    std::cout << samples.str() << '\n' << summary.str();
  } else {
    emit(cfg.output, samples.str());
    emit(spath, summary.str());
  }
  return 0;
}

int cmd_serve(const Common& c, const std::string& bind, std::uint32_t timeout_ms, std::uint32_t handshake_ms) {
  const ExperimentConfig cfg = load(c);
  if (timeout_ms == 0) throw ConfigError(0, "--timeout-ms must be positive");
  const Problem p = build_problem(cfg, cfg.seed);
  TcpListener listener(bind);
  std::cerr << "listening on port " << listener.port() << ", waiting for " << cfg.model.m << " workers\n";
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::milliseconds(handshake_ms);
  std::vector<std::unique_ptr<Connection>> conns;
  for (std::size_t k = 0; k < cfg.model.m; ++k) conns.push_back(listener.accept(deadline));
  LearnerServer::Options opt;
  opt.dim = cfg.model.d;
  opt.round_timeout = std::chrono::milliseconds(timeout_ms);
  opt.handshake_timeout = std::chrono::milliseconds(handshake_ms);
  LearnerServer server(std::move(conns), opt);
  const TrainResult res = train(server, train_config_from(cfg, p, cfg.aggregator.method, cfg.fault.q),
                                Vector(cfg.model.d, 0.0), p.theta_star);
  std::ostringstream os;
  write_metrics_header(os);
  write_metrics_rows(os, cfg.id, res.metrics);
  emit(cfg.output, os.str());
  return 0;
}

int cmd_worker(const Common& c, const std::string& connect, std::uint32_t timeout_ms, std::optional<std::uint32_t> id,
               bool silent) {
  const ExperimentConfig cfg = load(c);
  const Problem p = build_problem(cfg, cfg.seed);
  GradientFn fn = worker_gradient_fn(cfg, p, cfg.seed);
  if (silent) fn = [](std::uint32_t, std::uint32_t, std::span<const double>) { return std::optional<Vector>{}; };
  std::unique_ptr<Connection> conn = tcp_connect(connect, std::chrono::milliseconds(timeout_ms));
  const WorkerOutcome w = run_worker(*conn, fn, id ? *id : kAnyWorker);
  std::cerr << "worker " << w.id << ": " << w.rounds << " rounds, final theta has " << w.final_theta.size()
            << " entries\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Byzantine-robust gradient descent experiments"};
  app.require_subcommand(1);
  Common common;
  auto add_common = [&](CLI::App* sub, bool parallel) {
    sub->add_option("--config", common.config, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--out", common.out, "output CSV path (overrides output.path)");
    sub->add_option("--seed", common.seed, "master seed (overrides experiment.seed)");
    if (parallel) sub->add_option("--parallel", common.parallel, "worker threads for sweep cells")->check(CLI::PositiveNumber);
  };

  CLI::App* simulate = app.add_subcommand("simulate", "run one simulated training job");
  add_common(simulate, false);
  CLI::App* bench = app.add_subcommand("bench-agg", "compare aggregators over a q sweep");
  add_common(bench, true);
  CLI::App* conc = app.add_subcommand("conc-lab", "spectral-norm Monte Carlo");
  add_common(conc, true);

  std::string bind, connect;
  std::uint32_t timeout_ms = 2000, handshake_ms = 30000, connect_ms = 10000;
  std::optional<std::uint32_t> worker_id;
  bool silent = false;
  CLI::App* serve = app.add_subcommand("serve", "learner: train with networked workers");
  add_common(serve, false);
  serve->add_option("--bind", bind, "host:port to listen on")->required();
  serve->add_option("--timeout-ms", timeout_ms, "per-round deadline");
  serve->add_option("--handshake-ms", handshake_ms, "time allowed for all workers to join");
  CLI::App* worker = app.add_subcommand("worker", "worker: answer the learner's rounds");
  add_common(worker, false);
  worker->add_option("--connect", connect, "learner host:port")->required();
  worker->add_option("--timeout-ms", connect_ms, "how long to keep retrying the connection");
  worker->add_option("--worker-id", worker_id, "ask for this worker id");
  worker->add_flag("--silent", silent, "never send gradients (testing)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(common);
    if (bench->parsed()) return cmd_bench(common);
    if (conc->parsed()) return cmd_conc(common);
    if (serve->parsed()) return cmd_serve(common, bind, timeout_ms, handshake_ms);
    if (worker->parsed()) return cmd_worker(common, connect, connect_ms, worker_id, silent);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const TransportError& e) {
    std::cerr << "transport error: " << e.what() << '\n';
    return kExitTransport;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitRuntime;
}
