#pragma once

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstring>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mswl/common.hpp"
#include "mswl/message.hpp"

namespace mswl {

/// Bidirectional line-framed byte channel. Lines travel with their
/// trailing newline attached.
class Channel {
 public:
  virtual ~Channel() = default;
  virtual void send_line(const std::string& line) = 0;
  /// Blocks up to `timeout` for one full line; nullopt on expiry.
  virtual std::optional<std::string> recv_line(std::chrono::milliseconds timeout) = 0;
  /// Non-blocking: returns a line only if one is already pending.
  virtual std::optional<std::string> try_recv_line() = 0;
  virtual void close() = 0;
};

inline void send_message(Channel& ch, const Message& msg) { ch.send_line(encode_message(msg)); }

inline std::optional<Message> recv_message(Channel& ch, std::chrono::milliseconds timeout,
                                           std::optional<int> n_features = std::nullopt) {
  auto line = ch.recv_line(timeout);
  if (!line) return std::nullopt;
  return decode_message(*line, n_features);
}

// ---------------------------------------------------------------------------
// In-process backend: two mutex-guarded line queues.

namespace detail {

struct LineQueue {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::string> lines;
  bool closed = false;

  void push(std::string line) {
    {
      std::lock_guard<std::mutex> lock(mu);
      if (closed) throw ProtocolError("send on closed in-process channel");
      lines.push_back(std::move(line));
    }
    cv.notify_all();
  }

  std::optional<std::string> pop(std::chrono::milliseconds timeout) {
    std::unique_lock<std::mutex> lock(mu);
    if (!cv.wait_for(lock, timeout, [&] { return !lines.empty() || closed; }))
      return std::nullopt;
    if (lines.empty()) return std::nullopt; // closed and drained
    std::string line = std::move(lines.front());
    lines.pop_front();
    return line;
  }

  std::optional<std::string> try_pop() {
    std::lock_guard<std::mutex> lock(mu);
    if (lines.empty()) return std::nullopt;
    std::string line = std::move(lines.front());
    lines.pop_front();
    return line;
  }

  void close() {
    {
      std::lock_guard<std::mutex> lock(mu);
      closed = true;
    }
    cv.notify_all();
  }
};

}  // namespace detail

class InProcChannel final : public Channel {
 public:
  InProcChannel(std::shared_ptr<detail::LineQueue> incoming,
                std::shared_ptr<detail::LineQueue> outgoing)
      : incoming_(std::move(incoming)), outgoing_(std::move(outgoing)) {}

  void send_line(const std::string& line) override { outgoing_->push(line); }

  std::optional<std::string> recv_line(std::chrono::milliseconds timeout) override {
    return incoming_->pop(timeout);
  }

  std::optional<std::string> try_recv_line() override { return incoming_->try_pop(); }

  void close() override {
    outgoing_->close();
    incoming_->close();
  }

 private:
  std::shared_ptr<detail::LineQueue> incoming_;
  std::shared_ptr<detail::LineQueue> outgoing_;
};

/// Connected pair of in-process endpoints: first is the server end,
/// second the site end.
inline std::pair<std::unique_ptr<Channel>, std::unique_ptr<Channel>> make_inproc_pair() {
  auto a = std::make_shared<detail::LineQueue>();
  auto b = std::make_shared<detail::LineQueue>();
  return {std::make_unique<InProcChannel>(a, b), std::make_unique<InProcChannel>(b, a)};
}

// ---------------------------------------------------------------------------
// Stream-socket backend.

class TcpChannel final : public Channel {
 public:
  explicit TcpChannel(int fd) : fd_(fd) {}
  TcpChannel(const TcpChannel&) = delete;
  TcpChannel& operator=(const TcpChannel&) = delete;
  ~TcpChannel() override { close(); }

  void send_line(const std::string& line) override {
    const char* data = line.data();
    std::size_t left = line.size();
    while (left > 0) {
      const ssize_t n = ::send(fd_, data, left, MSG_NOSIGNAL);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw ProtocolError(std::string("socket send failed: ") + std::strerror(errno));
      }
      data += n;
      left -= static_cast<std::size_t>(n);
    }
  }

  std::optional<std::string> recv_line(std::chrono::milliseconds timeout) override {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    while (true) {
      if (auto line = take_buffered_line()) return line;
      if (eof_) return std::nullopt;
      const auto now = std::chrono::steady_clock::now();
      const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
      if (left.count() <= 0) return std::nullopt;
      if (!fill_buffer(static_cast<int>(std::min<long long>(left.count(), 1 << 30))))
        return std::nullopt;
    }
  }

  std::optional<std::string> try_recv_line() override {
    if (auto line = take_buffered_line()) return line;
    if (eof_) return std::nullopt;
    fill_buffer(0);
    return take_buffered_line();
  }

  void close() override {
    if (fd_ >= 0) {
      ::close(fd_);
      fd_ = -1;
    }
  }

 private:
  std::optional<std::string> take_buffered_line() {
    const auto pos = buffer_.find('\n');
    if (pos == std::string::npos) return std::nullopt;
    std::string line = buffer_.substr(0, pos + 1);
    buffer_.erase(0, pos + 1);
    return line;
  }

  /// Waits up to timeout_ms for readability, then reads once. Returns
  /// false on timeout with nothing new.
  bool fill_buffer(int timeout_ms) {
    pollfd pfd{fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, timeout_ms);
    if (rc < 0) {
      if (errno == EINTR) return true;
      throw ProtocolError(std::string("socket poll failed: ") + std::strerror(errno));
    }
    if (rc == 0) return false;
    char chunk[4096];
    const ssize_t n = ::recv(fd_, chunk, sizeof(chunk), 0);
    if (n < 0) {
      if (errno == EINTR || errno == EAGAIN) return true;
      throw ProtocolError(std::string("socket recv failed: ") + std::strerror(errno));
    }
    if (n == 0) {
      eof_ = true;
      return true;
    }
    buffer_.append(chunk, static_cast<std::size_t>(n));
    return true;
  }

  int fd_ = -1;
  bool eof_ = false;
  std::string buffer_;
};

class TcpListener {
 public:
  TcpListener(const std::string& host, int port) {
    fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd_ < 0) throw ProtocolError(std::string("socket() failed: ") + std::strerror(errno));
    const int one = 1;
    ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
      throw ConfigError("invalid listen address '" + host + "'");
    if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
      throw ProtocolError("bind to " + host + ":" + std::to_string(port) +
                          " failed: " + std::strerror(errno));
    if (::listen(fd_, 64) != 0)
      throw ProtocolError(std::string("listen failed: ") + std::strerror(errno));
  }

  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;
  ~TcpListener() {
    if (fd_ >= 0) ::close(fd_);
  }

  /// Actual bound port (useful after binding port 0).
  int port() const {
    sockaddr_in addr{};
    socklen_t len = sizeof(addr);
    if (::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len) != 0)
      throw ProtocolError(std::string("getsockname failed: ") + std::strerror(errno));
    return static_cast<int>(ntohs(addr.sin_port));
  }

  std::unique_ptr<Channel> accept(std::chrono::milliseconds timeout) {
    pollfd pfd{fd_, POLLIN, 0};
    const int rc = ::poll(&pfd, 1, static_cast<int>(timeout.count()));
    if (rc < 0) throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
    if (rc == 0) throw TimeoutError("timed out waiting for a site to connect");
    const int fd = ::accept(fd_, nullptr, nullptr);
    if (fd < 0) throw ProtocolError(std::string("accept failed: ") + std::strerror(errno));
    return std::make_unique<TcpChannel>(fd);
  }

 private:
  int fd_ = -1;
};

inline std::unique_ptr<Channel> tcp_connect(const std::string& host, int port,
                                            std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (true) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError(std::string("socket() failed: ") + std::strerror(errno));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(static_cast<std::uint16_t>(port));
    if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
      ::close(fd);
      throw ConfigError("invalid server address '" + host + "'");
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0)
      return std::make_unique<TcpChannel>(fd);
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      throw TimeoutError("could not connect to " + host + ":" + std::to_string(port) + ": " +
                         std::strerror(errno));
    ::usleep(50 * 1000); // server may not be listening yet
  }
}

// ---------------------------------------------------------------------------
// Server-side connection registry and the round barrier.

/// One handshaken site connection.
struct Connection {
  std::string site_id;
  int n_subjects = 0;
  int n_features = 0;
  std::unique_ptr<Channel> channel;
};

/// Accepts Hello from every channel and orders connections by site_id;
/// all sites must agree on n_features.
inline std::vector<Connection> handshake_sites(std::vector<std::unique_ptr<Channel>> channels,
                                               std::chrono::milliseconds timeout) {
  std::vector<Connection> conns;
  for (auto& ch : channels) {
    auto msg = recv_message(*ch, timeout);
    if (!msg) throw TimeoutError("timed out waiting for hello");
    const auto* hello = std::get_if<HelloMsg>(&*msg);
    if (!hello) throw ProtocolError("expected hello as first message");
    Connection c;
    c.site_id = hello->site_id;
    c.n_subjects = hello->n_subjects;
    c.n_features = hello->n_features;
    c.channel = std::move(ch);
    conns.push_back(std::move(c));
  }
  std::sort(conns.begin(), conns.end(),
            [](const Connection& a, const Connection& b) { return a.site_id < b.site_id; });
  for (std::size_t i = 1; i < conns.size(); ++i) {
    if (conns[i].site_id == conns[i - 1].site_id)
      throw ProtocolError("duplicate hello from site '" + conns[i].site_id + "'");
    if (conns[i].n_features != conns[0].n_features)
      throw ProtocolError("site '" + conns[i].site_id + "' announced " +
                          std::to_string(conns[i].n_features) + " features, site '" +
                          conns[0].site_id + "' announced " +
                          std::to_string(conns[0].n_features));
  }
  return conns;
}

/// Collects exactly one report per site for `round`, ordered by site_id.
/// Times out listing the silent sites; flags duplicates and wrong-round
/// traffic as protocol errors.
inline std::vector<SiteReport> round_barrier(std::vector<Connection>& connections, int round,
                                             std::chrono::milliseconds timeout) {
  if (connections.empty()) throw ProtocolError("round_barrier: no connections");
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<SiteReport> reports;
  std::vector<std::string> missing;
  for (auto& conn : connections) {
    const auto now = std::chrono::steady_clock::now();
    const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
    auto line = conn.channel->recv_line(left.count() > 0 ? left : std::chrono::milliseconds(0));
    if (!line) {
      missing.push_back(conn.site_id);
      continue;
    }
    const Message msg = decode_message(*line, conn.n_features);
    const auto* rep = std::get_if<ReportMsg>(&msg);
    if (!rep)
      throw ProtocolError("site '" + conn.site_id + "': expected a report in round " +
                          std::to_string(round));
    if (rep->report.site_id != conn.site_id)
      throw ProtocolError("connection of site '" + conn.site_id +
                          "' delivered a report signed '" + rep->report.site_id + "'");
    if (rep->report.round != round)
      throw ProtocolError("site '" + conn.site_id + "' reported round " +
                          std::to_string(rep->report.round) + ", expected " +
                          std::to_string(round));
    reports.push_back(rep->report);
  }
  if (!missing.empty()) {
    std::string list;
    for (std::size_t i = 0; i < missing.size(); ++i) {
      if (i) list += ", ";
      list += missing[i];
    }
    throw TimeoutError("round " + std::to_string(round) +
                       " barrier timed out; missing reports from: " + list);
  }
  // A site that sent more than one report this round has the extras
  // still pending; drain and reject them.
  for (auto& conn : connections) {
    while (auto line = conn.channel->try_recv_line()) {
      const Message msg = decode_message(*line, conn.n_features);
      if (const auto* rep = std::get_if<ReportMsg>(&msg); rep && rep->report.round == round)
        throw ProtocolError("duplicate report from site '" + conn.site_id + "' in round " +
                            std::to_string(round));
      throw ProtocolError("unexpected message from site '" + conn.site_id + "' during round " +
                          std::to_string(round));
    }
  }
  std::sort(reports.begin(), reports.end(),
            [](const SiteReport& a, const SiteReport& b) { return a.site_id < b.site_id; });
  return reports;
}

}  // namespace mswl
