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

#include <chrono>
#include <thread>

#include "robustgd/byzantine.hpp"
#include "robustgd/transport.hpp"

using namespace robustgd;
using namespace std::chrono_literals;

namespace {

std::vector<std::uint8_t> bytes(std::initializer_list<int> xs) {
  std::vector<std::uint8_t> out;
  for (int x : xs) out.push_back(static_cast<std::uint8_t>(x));
  return out;
}

DecodeFailure failure_of(const std::vector<std::uint8_t>& frame) {
  try {
    decode_message(frame);
  } catch (const DecodeError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "frame decoded";
  return DecodeFailure::Truncated;
}

struct Fixture {
  Vector theta_star;
  std::vector<Shard> shards;
};

Fixture small_problem(std::uint64_t seed, std::size_t m = 6, std::size_t d = 3) {
  RngStream rng(seed, 0);
  Fixture f;
  f.theta_star = sample_gaussian(d, rng);
  f.shards = partition(linreg_generate(d, 20 * m, f.theta_star, 0.5, rng), m);
  return f;
}

// Worker view of a simulated system: every worker rebuilds the same system
// and answers with its own slot.
GradientFn from_system(const SimulatedSystem& proto, std::optional<std::uint32_t> silent = std::nullopt) {
  return [proto, silent](std::uint32_t id, std::uint32_t round, std::span<const double> theta) -> std::optional<Vector> {
    if (silent && id == *silent) return std::nullopt;
    SimulatedSystem sys = proto;
    return sys.collect(round, theta).reports.gradients.at(id);
  };
}

struct Cluster {
  std::vector<std::thread> threads;
  std::vector<WorkerOutcome> outcomes;
  ~Cluster() {
    for (auto& t : threads)
      if (t.joinable()) t.join();
  }
};

std::vector<std::unique_ptr<Connection>> start_loopback(Cluster& c, std::size_t m, const GradientFn& fn) {
  std::vector<std::unique_ptr<Connection>> learner_side;
  c.outcomes.resize(m);
  for (std::size_t j = 0; j < m; ++j) {
    auto [a, b] = make_loopback_pair();
    learner_side.push_back(std::move(a));
    c.threads.emplace_back([&c, j, fn, conn = std::shared_ptr<Connection>(std::move(b))] {
      try {
        c.outcomes[j] = run_worker(*conn, fn, static_cast<std::uint32_t>(j));
      } catch (const TransportError&) {
      }
    });
  }
  return learner_side;
}

}  // namespace

TEST(Codec, VectorExample) {
  const Vector v{1.0};
  const std::vector<std::uint8_t> enc = encode_vector(v);
  EXPECT_EQ(enc, bytes({0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0xf0, 0x3f}));
  EXPECT_EQ(decode_vector(enc), v);
  EXPECT_EQ(decode_vector(encode_vector(Vector{})), Vector{});
}

TEST(Codec, FrameLayout) {
  const Message msg = make_message(Tag::Grad, 7, 3, Vector{});
  const auto enc = encode_message(msg);
  EXPECT_EQ(enc, bytes({0, 0, 0, 13, 4, 0, 0, 0, 7, 0, 0, 0, 3, 0, 0, 0, 0}));
  EXPECT_EQ(decode_message(enc), msg);
}

TEST(Codec, TruncatedFrame) {
  // declares 10 bytes after the prefix, only 8 present
  EXPECT_EQ(failure_of(bytes({0, 0, 0, 10, 4, 0, 0, 0, 1, 0, 0, 0})), DecodeFailure::Truncated);
  EXPECT_EQ(failure_of(bytes({0, 0})), DecodeFailure::Truncated);
}

TEST(Codec, UnknownTag) {
  EXPECT_EQ(failure_of(bytes({0, 0, 0, 9, 0x7f, 0, 0, 0, 0, 0, 0, 0, 0})), DecodeFailure::UnknownTag);
  EXPECT_EQ(failure_of(bytes({0, 0, 0, 9, 0x00, 0, 0, 0, 0, 0, 0, 0, 0})), DecodeFailure::UnknownTag);
}

TEST(Codec, LengthMismatch) {
  EXPECT_EQ(failure_of(bytes({0, 0, 0, 9, 1, 0, 0, 0, 0, 0, 0, 0, 0, 0xaa})), DecodeFailure::LengthMismatch);
  EXPECT_EQ(failure_of(bytes({0, 0, 0, 3, 1, 0, 0})), DecodeFailure::LengthMismatch);
  // vector payload whose count disagrees with its size
  EXPECT_THROW(decode_vector(bytes({0, 0, 0, 2, 0, 0, 0, 0, 0, 0, 0, 0})), DecodeError);
}

TEST(CodecProperty, RandomRoundTrips) {
  RngStream rng(1, 0);
  for (int t = 0; t < 10000; ++t) {
    const std::size_t n = rng.next_u64() % 40;
    Vector v(n);
    for (double& x : v) {
      const std::uint64_t bits = rng.next_u64();
      std::memcpy(&x, &bits, sizeof x);
      if (!std::isfinite(x)) x = rng.normal();
    }
    const Message msg = make_message(static_cast<Tag>(1 + rng.next_u64() % 6), static_cast<std::uint32_t>(rng.next_u64()),
                                     static_cast<std::uint32_t>(rng.next_u64()), v);
    const Message back = decode_message(encode_message(msg));
    ASSERT_EQ(back, msg);
    const Vector w = decode_vector(back.payload);
    ASSERT_EQ(std::memcmp(w.data(), v.data(), n * sizeof(double)), 0);
  }
}

TEST(Loopback, BadFrameLeavesStreamUsable) {
  auto [a, b] = make_loopback_pair();
  a->send_raw(bytes({0, 0, 0, 9, 0x7f, 0, 0, 0, 0, 0, 0, 0, 0}));
  a->send(make_message(Tag::Done, 1, 2, Vector{3.0}));
  EXPECT_THROW(b->receive(), DecodeError);
  EXPECT_EQ(decode_vector(b->receive().payload), Vector{3.0});
  a->close();
  EXPECT_THROW(b->receive(), ConnectionClosed);
}

TEST(Learner, LoopbackMatchesSimulation) {
  const Fixture f = small_problem(2);
  const SimulatedSystem proto(f.shards, AttackSpec::sign_flip(4), FaultSchedule{1}, 5);
  TrainConfig cfg;
  cfg.eta = 0.2;
  cfg.rounds = 12;
  cfg.aggregator = CoordMedianAggregator{};

  SimulatedSystem sim = proto;
  const TrainResult expect = train(sim, cfg, Vector(3, 0.0), f.theta_star);

  Cluster c;
  auto conns = start_loopback(c, f.shards.size(), from_system(proto));
  TrainResult got;
  {
    LearnerServer server(std::move(conns), {3, 2000ms, 5000ms});
    got = train(server, cfg, Vector(3, 0.0), f.theta_star);
  }
  for (auto& t : c.threads) t.join();
  ASSERT_EQ(got.trajectory.size(), expect.trajectory.size());
  for (std::size_t t = 0; t < got.trajectory.size(); ++t)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got.trajectory[t][k], expect.trajectory[t][k], 1e-12);
  for (const RoundMetrics& r : got.metrics) EXPECT_EQ(r.flags, 0u);
  for (std::size_t j = 0; j < c.outcomes.size(); ++j) {
    EXPECT_EQ(c.outcomes[j].id, j);
    EXPECT_EQ(c.outcomes[j].rounds, 12u);
    EXPECT_EQ(c.outcomes[j].final_theta, got.theta);
  }
}

TEST(Learner, SilentWorkerIsFlaggedEveryRound) {
  const Fixture f = small_problem(3, 4);
  const SimulatedSystem proto(f.shards, AttackSpec::none(), FaultSchedule{}, 1);
  Cluster c;
  auto conns = start_loopback(c, 4, from_system(proto, 2));
  TrainConfig cfg;
  cfg.eta = 0.1;
  cfg.rounds = 3;
  cfg.aggregator = CoordMedianAggregator{};
  TrainResult res;
  {
    LearnerServer server(std::move(conns), {3, 150ms, 5000ms});
    res = train(server, cfg, Vector(3, 0.0), f.theta_star);
  }
  for (const RoundMetrics& r : res.metrics) EXPECT_EQ(r.flags, 1u);
  for (const auto& th : res.trajectory)
    for (double x : th) EXPECT_TRUE(std::isfinite(x));
}

TEST(Learner, RoundEndsAtTheDeadline) {
  const Fixture f = small_problem(4, 3);
  const SimulatedSystem proto(f.shards, AttackSpec::none(), FaultSchedule{}, 1);
  Cluster c;
  auto conns = start_loopback(c, 3, from_system(proto, 0));
  LearnerServer server(std::move(conns), {3, 200ms, 5000ms});
  const auto start = std::chrono::steady_clock::now();
  const CollectedRound r = server.collect(0, Vector(3, 0.0));
  const auto took = std::chrono::steady_clock::now() - start;
  EXPECT_EQ(r.missing, 1u);
  EXPECT_EQ(r.reports.gradients[0], Vector(3, 0.0));
  EXPECT_GE(took, 190ms);
  EXPECT_LT(took, 1000ms);
  server.finish(Vector(3, 0.0));
}

TEST(Learner, StaleAndMalformedReports) {
  auto [learner_end, worker_end] = make_loopback_pair();
  worker_end->send({Tag::Hello, 0, 0, {}});
  // leftovers from an earlier round are ignored, the right round is accepted
  worker_end->send(make_message(Tag::Grad, 9, 0, Vector{100, 100}));
  worker_end->send(make_message(Tag::Grad, 0, 0, Vector{1, 2}));
  std::vector<std::unique_ptr<Connection>> conns;
  conns.push_back(std::move(learner_end));
  LearnerServer server(std::move(conns), {2, 300ms, 2000ms});
  const Message assign = worker_end->receive();
  EXPECT_EQ(assign.tag, Tag::Assign);
  EXPECT_EQ(decode_vector(assign.payload), (Vector{1, 2}));

  CollectedRound r0 = server.collect(0, Vector{0, 0});
  EXPECT_EQ(r0.missing, 0u);
  EXPECT_EQ(r0.reports.gradients[0], (Vector{1, 2}));

  // a frame with an unknown tag settles the round as missing
  worker_end->send_raw(bytes({0, 0, 0, 9, 0x7f, 0, 0, 0, 1, 0, 0, 0, 0}));
  worker_end->send(make_message(Tag::Grad, 1, 0, Vector{5, 5}));
  CollectedRound r1 = server.collect(1, Vector{0, 0});
  EXPECT_EQ(r1.missing, 1u);
  EXPECT_EQ(r1.reports.gradients[0], (Vector{0, 0}));

  // non-finite and wrong-dimension gradients are missing too
  const double bad[2] = {std::numeric_limits<double>::quiet_NaN(), 0.0};
  worker_end->send(make_message(Tag::Grad, 2, 0, bad));
  EXPECT_EQ(server.collect(2, Vector{0, 0}).missing, 1u);
  worker_end->send(make_message(Tag::Grad, 3, 0, Vector{1, 2, 3}));
  EXPECT_EQ(server.collect(3, Vector{0, 0}).missing, 1u);
}

TEST(Learner, HandshakeTimeout) {
  auto [learner_end, worker_end] = make_loopback_pair();
  std::vector<std::unique_ptr<Connection>> conns;
  conns.push_back(std::move(learner_end));
  EXPECT_THROW(LearnerServer(std::move(conns), {2, 100ms, 100ms}), TransportError);
}

TEST(Tcp, LocalRunMatchesSimulation) {
  const Fixture f = small_problem(5, 4);
  const SimulatedSystem proto(f.shards, AttackSpec::gaussian_noise(2), FaultSchedule{1}, 8);
  TrainConfig cfg;
  cfg.eta = 0.2;
  cfg.rounds = 5;
  cfg.aggregator = TrimmedMeanAggregator{0.25};
  SimulatedSystem sim = proto;
  const TrainResult expect = train(sim, cfg, Vector(3, 0.0), f.theta_star);

  TcpListener listener("127.0.0.1:0");
  const std::string addr = "127.0.0.1:" + std::to_string(listener.port());
  const GradientFn fn = from_system(proto);
  std::vector<std::thread> workers;
  for (std::uint32_t j = 0; j < 4; ++j)
    workers.emplace_back([&, j] {
      auto conn = tcp_connect(addr, 5000ms);
      run_worker(*conn, fn, j);
    });
  std::vector<std::unique_ptr<Connection>> conns;
  const auto deadline = std::chrono::steady_clock::now() + 5s;
  for (int j = 0; j < 4; ++j) conns.push_back(listener.accept(deadline));
  TrainResult got;
  {
    LearnerServer server(std::move(conns), {3, 2000ms, 5000ms});
    got = train(server, cfg, Vector(3, 0.0), f.theta_star);
  }
  for (auto& t : workers) t.join();
  for (std::size_t t = 0; t < got.trajectory.size(); ++t)
    for (std::size_t k = 0; k < 3; ++k) EXPECT_NEAR(got.trajectory[t][k], expect.trajectory[t][k], 1e-12);
}

TEST(Tcp, Errors) {
  EXPECT_THROW(TcpListener("127.0.0.1:notaport"), TransportError);
  EXPECT_THROW(TcpListener("no-colon"), TransportError);
  TcpListener l("127.0.0.1:0");
  EXPECT_THROW(l.accept(std::chrono::steady_clock::now() + 50ms), TransportError);
}
