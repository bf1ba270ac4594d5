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

// Learner/worker wire protocol and runtimes.
//
// Frame: u32be length of everything that follows | tag u8 | round u32be |
// worker id u32be | payload. Vector payloads are a u32be element count
// followed by that many little-endian IEEE-754 doubles.

#pragma once

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cerrno>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstring>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "robustgd/errors.hpp"
#include "robustgd/learning.hpp"
#include "robustgd/numerics.hpp"

namespace robustgd {

enum class Tag : std::uint8_t { Hello = 0x01, Assign = 0x02, Params = 0x03, Grad = 0x04, Done = 0x05, Error = 0x06 };

constexpr std::uint32_t kAnyWorker = 0xFFFFFFFFu;
constexpr std::size_t kHeaderBytes = 9;  // tag + round + worker id
constexpr std::size_t kMaxFrameBytes = std::size_t{1} << 28;

struct Message {
  Tag tag = Tag::Hello;
  std::uint32_t round = 0;
  std::uint32_t worker_id = 0;
  std::vector<std::uint8_t> payload;

  bool operator==(const Message&) const = default;
};

enum class DecodeFailure { Truncated, UnknownTag, LengthMismatch };

class DecodeError : public TransportError {
 public:
  DecodeError(DecodeFailure kind, const std::string& what) : TransportError(what), kind_(kind) {}
  DecodeFailure kind() const { return kind_; }

 private:
  DecodeFailure kind_;
};

/// The peer went away (EOF, reset, or close()).
class ConnectionClosed : public TransportError {
 public:
  using TransportError::TransportError;
};

namespace wire {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(static_cast<std::uint8_t>(v >> 24));
  out.push_back(static_cast<std::uint8_t>(v >> 16));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
  out.push_back(static_cast<std::uint8_t>(v));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

inline bool known_tag(std::uint8_t t) { return t >= 0x01 && t <= 0x06; }

}  // namespace wire

inline std::vector<std::uint8_t> encode_vector(std::span<const double> v) {
  if (v.size() > (kMaxFrameBytes - kHeaderBytes - 4) / 8) throw TransportError("vector payload too large");
  std::vector<std::uint8_t> out;
  out.reserve(4 + 8 * v.size());
  wire::put_u32(out, static_cast<std::uint32_t>(v.size()));
  for (double x : v) {
    const auto bits = std::bit_cast<std::uint64_t>(x);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
  }
  return out;
}

inline Vector decode_vector(std::span<const std::uint8_t> payload) {
  if (payload.size() < 4) throw DecodeError(DecodeFailure::Truncated, "vector payload shorter than its count");
  const std::uint64_t count = wire::get_u32(payload.data());
  if (payload.size() != 4 + 8 * count)
    throw DecodeError(DecodeFailure::LengthMismatch, "vector payload holds " + std::to_string(payload.size() - 4) +
                                                         " bytes for " + std::to_string(count) + " doubles");
  Vector v(count);
  for (std::size_t k = 0; k < count; ++k) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{payload[4 + 8 * k + b]} << (8 * b);
    v[k] = std::bit_cast<double>(bits);
  }
  return v;
}

inline Message make_message(Tag tag, std::uint32_t round, std::uint32_t worker_id, std::span<const double> values) {
  return {tag, round, worker_id, encode_vector(values)};
}

inline Message make_error(std::uint32_t worker_id, const std::string& text) {
  return {Tag::Error, 0, worker_id, std::vector<std::uint8_t>(text.begin(), text.end())};
}

inline std::vector<std::uint8_t> encode_message(const Message& msg) {
  if (!wire::known_tag(static_cast<std::uint8_t>(msg.tag))) throw TransportError("encode: unknown tag");
  if (msg.payload.size() > kMaxFrameBytes - kHeaderBytes) throw TransportError("encode: payload too large");
  std::vector<std::uint8_t> out;
  out.reserve(4 + kHeaderBytes + msg.payload.size());
  wire::put_u32(out, static_cast<std::uint32_t>(kHeaderBytes + msg.payload.size()));
  out.push_back(static_cast<std::uint8_t>(msg.tag));
  wire::put_u32(out, msg.round);
  wire::put_u32(out, msg.worker_id);
  out.insert(out.end(), msg.payload.begin(), msg.payload.end());
  return out;
}

/// Decodes exactly one frame; the buffer must hold nothing else.
inline Message decode_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4) throw DecodeError(DecodeFailure::Truncated, "frame shorter than its length prefix");
  const std::size_t declared = wire::get_u32(bytes.data());
  if (bytes.size() - 4 < declared)
    throw DecodeError(DecodeFailure::Truncated, "frame declares " + std::to_string(declared) + " bytes, " +
                                                    std::to_string(bytes.size() - 4) + " present");
  if (bytes.size() - 4 > declared)
    throw DecodeError(DecodeFailure::LengthMismatch, "trailing bytes after a " + std::to_string(declared) + "-byte frame");
  if (declared < kHeaderBytes)
    throw DecodeError(DecodeFailure::LengthMismatch, "declared length " + std::to_string(declared) + " below header size");
  const std::uint8_t tag = bytes[4];
  if (!wire::known_tag(tag)) throw DecodeError(DecodeFailure::UnknownTag, "unknown tag " + std::to_string(tag));
  Message msg;
  msg.tag = static_cast<Tag>(tag);
  msg.round = wire::get_u32(bytes.data() + 5);
  msg.worker_id = wire::get_u32(bytes.data() + 9);
  msg.payload.assign(bytes.begin() + 4 + kHeaderBytes, bytes.end());
  return msg;
}

/// A framed, bidirectional message stream. receive() blocks until a frame
/// arrives; a bad frame that was still delimited correctly raises
/// DecodeError and leaves the stream usable.
class Connection {
 public:
  virtual ~Connection() = default;
  virtual void send_raw(std::span<const std::uint8_t> bytes) = 0;
  virtual Message receive() = 0;
  virtual void close() = 0;
  void send(const Message& msg) { send_raw(encode_message(msg)); }
};

namespace detail {

/// Byte pipe with blocking reads, one direction of a loopback pair.
struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> bytes;
  bool closed = false;
};

}  // namespace detail

class LoopbackConnection : public Connection {
 public:
  LoopbackConnection(std::shared_ptr<detail::Pipe> in, std::shared_ptr<detail::Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~LoopbackConnection() override { close(); }

  void send_raw(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(out_->mu);
    if (out_->closed) throw ConnectionClosed("loopback: peer closed");
    out_->bytes.insert(out_->bytes.end(), bytes.begin(), bytes.end());
    out_->cv.notify_all();
  }

  Message receive() override {
    std::vector<std::uint8_t> frame = take(4);
    const std::size_t len = wire::get_u32(frame.data());
    if (len > kMaxFrameBytes) throw ConnectionClosed("loopback: oversized frame");
    std::vector<std::uint8_t> body = take(len);
    frame.insert(frame.end(), body.begin(), body.end());
    return decode_message(frame);
  }

  void close() override {
    for (auto* p : {in_.get(), out_.get()}) {
      std::lock_guard lock(p->mu);
      p->closed = true;
      p->cv.notify_all();
    }
  }

 private:
  std::vector<std::uint8_t> take(std::size_t n) {
    std::unique_lock lock(in_->mu);
    in_->cv.wait(lock, [&] { return in_->bytes.size() >= n || in_->closed; });
    if (in_->bytes.size() < n) throw ConnectionClosed("loopback: closed");
    std::vector<std::uint8_t> out(in_->bytes.begin(), in_->bytes.begin() + static_cast<std::ptrdiff_t>(n));
    in_->bytes.erase(in_->bytes.begin(), in_->bytes.begin() + static_cast<std::ptrdiff_t>(n));
    return out;
  }

  std::shared_ptr<detail::Pipe> in_;
  std::shared_ptr<detail::Pipe> out_;
};

/// Two connected in-process endpoints.
inline std::pair<std::unique_ptr<Connection>, std::unique_ptr<Connection>> make_loopback_pair() {
  auto a = std::make_shared<detail::Pipe>();
  auto b = std::make_shared<detail::Pipe>();
  return {std::make_unique<LoopbackConnection>(a, b), std::make_unique<LoopbackConnection>(b, a)};
}

class TcpConnection : public Connection {
 public:
  explicit TcpConnection(int fd) : fd_(fd) {
    int one = 1;
    ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
  }
  ~TcpConnection() override {
    close();
    ::close(fd_);
  }
  TcpConnection(const TcpConnection&) = delete;
  TcpConnection& operator=(const TcpConnection&) = delete;

  void send_raw(std::span<const std::uint8_t> bytes) override {
    std::lock_guard lock(send_mu_);
    std::size_t off = 0;
    while (off < bytes.size()) {
      const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
      if (n < 0 && errno == EINTR) continue;
      if (n <= 0) throw ConnectionClosed(std::string("tcp send: ") + std::strerror(errno));
      off += static_cast<std::size_t>(n);
    }
  }

  Message receive() override {
    std::vector<std::uint8_t> frame(4);
    read_exact(frame.data(), 4);
    const std::size_t len = wire::get_u32(frame.data());
    if (len > kMaxFrameBytes) throw ConnectionClosed("tcp: oversized frame, stream abandoned");
    frame.resize(4 + len);
    read_exact(frame.data() + 4, len);
    return decode_message(frame);
  }

  void close() override {
    if (!closed_.exchange(true)) ::shutdown(fd_, SHUT_RDWR);
  }

 private:
  void read_exact(std::uint8_t* dst, std::size_t n) {
    std::size_t got = 0;
    while (got < n) {
      const ssize_t r = ::recv(fd_, dst + got, n - got, 0);
      if (r < 0 && errno == EINTR) continue;
      if (r == 0) throw ConnectionClosed("tcp: peer closed");
      if (r < 0) throw ConnectionClosed(std::string("tcp recv: ") + std::strerror(errno));
      got += static_cast<std::size_t>(r);
    }
  }

  int fd_;
  std::mutex send_mu_;
  std::atomic<bool> closed_{false};
};

namespace detail {

inline std::pair<std::string, std::string> split_address(const std::string& addr) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos || colon + 1 == addr.size())
    throw TransportError("address '" + addr + "' is not host:port");
  std::string host = addr.substr(0, colon);
  if (host.size() >= 2 && host.front() == '[' && host.back() == ']') host = host.substr(1, host.size() - 2);
  return {host.empty() ? "0.0.0.0" : host, addr.substr(colon + 1)};
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) ::freeaddrinfo(list);
  }
};

inline bool wait_fd(int fd, short events, std::chrono::steady_clock::time_point deadline) {
  for (;;) {
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
    if (left.count() <= 0) return false;
    pollfd p{fd, events, 0};
    const int r = ::poll(&p, 1, static_cast<int>(std::min<long long>(left.count(), 1 << 30)));
    if (r > 0) return true;
    if (r < 0 && errno != EINTR) throw TransportError(std::string("poll: ") + std::strerror(errno));
  }
}

}  // namespace detail

class TcpListener {
 public:
  explicit TcpListener(const std::string& address) {
    auto [host, port] = detail::split_address(address);
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    hints.ai_flags = AI_PASSIVE;
    detail::AddrInfo res;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res.list); rc != 0)
      throw TransportError("bind " + address + ": " + ::gai_strerror(rc));
    std::string last = "no usable address";
    for (addrinfo* ai = res.list; ai; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      int one = 1;
      ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
      if (::bind(fd, ai->ai_addr, ai->ai_addrlen) == 0 && ::listen(fd, 128) == 0) {
        fd_ = fd;
        break;
      }
      last = std::strerror(errno);
      ::close(fd);
    }
    if (fd_ < 0) throw TransportError("bind " + address + ": " + last);
  }
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const {
    sockaddr_storage ss{};
    socklen_t len = sizeof ss;
    ::getsockname(fd_, reinterpret_cast<sockaddr*>(&ss), &len);
    if (ss.ss_family == AF_INET6) return ntohs(reinterpret_cast<sockaddr_in6*>(&ss)->sin6_port);
    return ntohs(reinterpret_cast<sockaddr_in*>(&ss)->sin_port);
  }

  /// Waits for one connection; throws TransportError on timeout.
  std::unique_ptr<Connection> accept(std::chrono::steady_clock::time_point deadline) {
    if (!detail::wait_fd(fd_, POLLIN, deadline)) throw TransportError("accept: timed out waiting for workers");
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw TransportError(std::string("accept: ") + std::strerror(errno));
    return std::make_unique<TcpConnection>(fd);
  }

 private:
  int fd_ = -1;
};

/// Connects to host:port, retrying until the deadline so workers may start
/// before the learner is listening.
inline std::unique_ptr<Connection> tcp_connect(const std::string& address, std::chrono::milliseconds timeout) {
  auto [host, port] = detail::split_address(address);
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::string last = "timed out";
  do {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    detail::AddrInfo res;
    if (int rc = ::getaddrinfo(host.c_str(), port.c_str(), &hints, &res.list); rc != 0)
      throw TransportError("connect " + address + ": " + ::gai_strerror(rc));
    for (addrinfo* ai = res.list; ai; ai = ai->ai_next) {
      const int fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
      if (fd < 0) continue;
      if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) return std::make_unique<TcpConnection>(fd);
      last = std::strerror(errno);
      ::close(fd);
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(50));
  } while (std::chrono::steady_clock::now() < deadline);
  throw TransportError("connect " + address + ": " + last);
}

/// Learner side of Algorithm-1 rounds over m framed connections.
///
/// Each connection gets a reader thread that feeds a shared inbox; the round
/// loop is the only consumer, so all round state lives on one thread.
class LearnerServer : public ReportSource {
 public:
  struct Options {
    std::size_t dim = 0;
    std::chrono::milliseconds round_timeout{1000};
    std::chrono::milliseconds handshake_timeout{10000};
  };

  /// Runs HELLO/ASSIGN on the given connections. A worker may ask for an id
  /// in its HELLO; otherwise it gets the lowest free one.
  LearnerServer(std::vector<std::unique_ptr<Connection>> conns, Options opt)
      : conns_(std::move(conns)), opt_(opt), slot_of_id_(conns_.size(), kNoSlot), id_of_slot_(conns_.size(), kAnyWorker) {
    if (conns_.empty()) throw TransportError("learner: no workers");
    if (opt_.round_timeout.count() <= 0) throw TransportError("learner: round timeout must be positive");
    for (std::size_t s = 0; s < conns_.size(); ++s) readers_.emplace_back([this, s] { read_loop(s); });
    try {
      handshake();
    } catch (...) {
      shutdown();
      throw;
    }
  }

  ~LearnerServer() override { shutdown(); }

  std::size_t workers() const { return conns_.size(); }

  CollectedRound collect(std::uint32_t round, std::span<const double> theta) override {
    if (theta.size() != opt_.dim) throw DimensionError("learner: theta has wrong dimension");
    const std::size_t m = conns_.size();
    const Message params = make_message(Tag::Params, round, 0, theta);
    std::vector<bool> settled(m, false);  // report received or slot given up for this round
    std::vector<std::optional<Vector>> got(m);
    for (std::size_t s = 0; s < m; ++s) {
      if (dead_[s]) {
        settled[s] = true;
        continue;
      }
      try {
        Message p = params;
        p.worker_id = id_of_slot_[s];
        conns_[s]->send(p);
      } catch (const TransportError&) {
        dead_[s] = true;
        settled[s] = true;
      }
    }
    const auto deadline = std::chrono::steady_clock::now() + opt_.round_timeout;
    std::size_t pending = static_cast<std::size_t>(std::count(settled.begin(), settled.end(), false));
    while (pending > 0) {
      std::optional<Event> ev = next_event(deadline);
      if (!ev) break;
      const std::size_t s = ev->slot;
      if (settled[s]) continue;
      if (ev->kind == Event::Closed) {
        dead_[s] = true;
      } else if (ev->kind == Event::Malformed) {
        // counts as missing for this round
      } else {
        const Message& msg = ev->msg;
        if (msg.tag != Tag::Grad || msg.round != round) continue;  // stale or unexpected: ignore
        try {
          if (msg.worker_id != id_of_slot_[s]) throw TransportError("worker id mismatch");
          Vector g = decode_vector(msg.payload);
          if (g.size() != opt_.dim) throw DimensionError("gradient has wrong dimension");
          bool finite = true;
          for (double x : g) finite = finite && std::isfinite(x);
          if (finite) got[s] = std::move(g);
        } catch (const Error&) {
        }
      }
      settled[s] = true;
      --pending;
    }

    CollectedRound out;
    for (std::size_t id = 0; id < m; ++id) {
      const std::size_t s = slot_of_id_[id];
      out.reports.worker_ids.push_back(static_cast<std::uint32_t>(id));
      if (got[s]) {
        out.reports.gradients.push_back(std::move(*got[s]));
      } else {
        out.reports.gradients.emplace_back(opt_.dim, 0.0);
        ++out.missing;
      }
    }
    return out;
  }

  void finish(std::span<const double> theta) override {
    for (std::size_t s = 0; s < conns_.size(); ++s) {
      if (dead_[s]) continue;
      try {
        conns_[s]->send(make_message(Tag::Done, 0, id_of_slot_[s], theta));
      } catch (const TransportError&) {
      }
    }
  }

 private:
  static constexpr std::size_t kNoSlot = static_cast<std::size_t>(-1);

  struct Event {
    enum Kind { Frame, Malformed, Closed } kind = Frame;
    std::size_t slot = 0;
    Message msg;
  };

  void read_loop(std::size_t s) {
    for (;;) {
      Event ev;
      ev.slot = s;
      try {
        ev.msg = conns_[s]->receive();
      } catch (const DecodeError&) {
        ev.kind = Event::Malformed;
      } catch (const std::exception&) {
        ev.kind = Event::Closed;
      }
      const bool closed = ev.kind == Event::Closed;
      {
        std::lock_guard lock(mu_);
        inbox_.push_back(std::move(ev));
      }
      cv_.notify_all();
      if (closed) return;
    }
  }

  std::optional<Event> next_event(std::chrono::steady_clock::time_point deadline) {
    std::unique_lock lock(mu_);
    if (!cv_.wait_until(lock, deadline, [&] { return !inbox_.empty(); })) return std::nullopt;
    Event ev = std::move(inbox_.front());
    inbox_.pop_front();
    return ev;
  }

  void handshake() {
    const std::size_t m = conns_.size();
    dead_.assign(m, false);
    std::vector<std::uint32_t> wanted(m, kAnyWorker);
    std::vector<bool> said_hello(m, false);
    std::size_t hellos = 0;
    const auto deadline = std::chrono::steady_clock::now() + opt_.handshake_timeout;
    while (hellos < m) {
      std::optional<Event> ev = next_event(deadline);
      if (!ev) throw TransportError("handshake: timed out with " + std::to_string(hellos) + " of " + std::to_string(m) + " workers");
      if (ev->kind == Event::Closed) throw TransportError("handshake: worker connection lost");
      if (ev->kind == Event::Malformed || ev->msg.tag != Tag::Hello || said_hello[ev->slot])
        throw TransportError("handshake: expected HELLO");
      said_hello[ev->slot] = true;
      wanted[ev->slot] = ev->msg.worker_id;
      ++hellos;
    }
    // Requested ids first, in slot order; then fill the rest lowest-first.
    for (std::size_t s = 0; s < m; ++s) {
      const std::uint32_t w = wanted[s];
      if (w != kAnyWorker && w < m && slot_of_id_[w] == kNoSlot) {
        slot_of_id_[w] = s;
        id_of_slot_[s] = w;
      }
    }
    std::size_t next = 0;
    for (std::size_t s = 0; s < m; ++s) {
      if (id_of_slot_[s] != kAnyWorker) continue;
      while (slot_of_id_[next] != kNoSlot) ++next;
      slot_of_id_[next] = s;
      id_of_slot_[s] = static_cast<std::uint32_t>(next);
    }
    const double shape[2] = {static_cast<double>(m), static_cast<double>(opt_.dim)};
    for (std::size_t s = 0; s < m; ++s) conns_[s]->send(make_message(Tag::Assign, 0, id_of_slot_[s], shape));
  }

  void shutdown() {
    for (auto& c : conns_) c->close();
    for (auto& t : readers_)
      if (t.joinable()) t.join();
    readers_.clear();
  }

  std::vector<std::unique_ptr<Connection>> conns_;
  Options opt_;
  std::vector<std::size_t> slot_of_id_;
  std::vector<std::uint32_t> id_of_slot_;
  std::vector<bool> dead_;
  std::vector<std::thread> readers_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Event> inbox_;
};

/// Computes what worker `id` reports at `round`; nullopt means stay silent.
using GradientFn = std::function<std::optional<Vector>(std::uint32_t id, std::uint32_t round, std::span<const double> theta)>;

struct WorkerOutcome {
  std::uint32_t id = 0;
  std::size_t workers = 0;
  std::size_t rounds = 0;
  Vector final_theta;
};

/// Worker loop: HELLO, wait for ASSIGN, answer every PARAMS with GRAD until DONE.
inline WorkerOutcome run_worker(Connection& conn, const GradientFn& gradient, std::uint32_t requested_id = kAnyWorker) {
  conn.send({Tag::Hello, 0, requested_id, {}});
  WorkerOutcome out;
  bool assigned = false;
  for (;;) {
    Message msg = conn.receive();
    switch (msg.tag) {
      case Tag::Assign: {
        const Vector shape = decode_vector(msg.payload);
        if (shape.size() != 2) throw TransportError("worker: malformed ASSIGN");
        out.id = msg.worker_id;
        out.workers = static_cast<std::size_t>(shape[0]);
        assigned = true;
        break;
      }
      case Tag::Params: {
        if (!assigned) throw TransportError("worker: PARAMS before ASSIGN");
        const Vector theta = decode_vector(msg.payload);
        if (std::optional<Vector> g = gradient(out.id, msg.round, theta))
          conn.send(make_message(Tag::Grad, msg.round, out.id, *g));
        ++out.rounds;
        break;
      }
      case Tag::Done:
        out.final_theta = decode_vector(msg.payload);
        return out;
      case Tag::Error:
        throw TransportError("learner error: " + std::string(msg.payload.begin(), msg.payload.end()));
      default:
        throw TransportError("worker: unexpected frame");
    }
  }
}

}  // namespace robustgd
