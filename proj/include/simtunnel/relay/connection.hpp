#pragma once

#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <thread>

#include "simtunnel/clock.hpp"
#include "simtunnel/relay/frame.hpp"

namespace simtunnel::relay {

class TunnelClosed : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

class RelayError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct KeepaliveConfig {
  Micros interval{10'000'000};
  int max_missed = 3;
};

/// Pure keepalive schedule. The next PING is due one interval after the
/// later of the last received message and the last PING; when a PING is due
/// with max_missed still unanswered the session is declared dead.
class Keepalive {
public:
  enum class Action { None, SendPing, Close };

  Keepalive(KeepaliveConfig cfg, Micros now) : cfg_(cfg), last_rx_(now), last_ping_(now) {}

  void on_receive(Micros now) {
    last_rx_ = now;
    outstanding_ = 0;
  }
  void on_ping_sent(Micros now) {
    last_ping_ = now;
    ++outstanding_;
  }
  Action poll(Micros now) const {
    if (now < next_due()) return Action::None;
    return outstanding_ >= cfg_.max_missed ? Action::Close : Action::SendPing;
  }
  Micros next_due() const { return std::max(last_rx_, last_ping_) + cfg_.interval; }
  int outstanding() const { return outstanding_; }

private:
  KeepaliveConfig cfg_;
  Micros last_rx_;
  Micros last_ping_;
  int outstanding_ = 0;
};

struct ConnectionConfig {
  bool keepalive_enabled = true;
  KeepaliveConfig keepalive;
  /// Sees every frame, including PING/PONG; `outgoing` tells the direction.
  std::function<void(bool outgoing, const RelayMessage&)> observer;
};

/// One framed tunnel connection. A reader thread answers PING, swallows
/// PONG and queues everything else; a keepalive thread pings an idle peer.
class Connection {
public:
  explicit Connection(std::unique_ptr<ByteStream> stream, ConnectionConfig cfg = {});
  ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  /// Throws TunnelClosed.
  void send(const RelayMessage& m);
  /// Next non-keepalive message; nullopt on timeout (nullopt timeout waits
  /// forever). Throws TunnelClosed once closed and drained.
  std::optional<RelayMessage> receive(std::optional<Micros> timeout = std::nullopt);
  void close(const std::string& reason = "closed locally");

  bool closed() const;
  std::string close_reason() const;
  int pings_sent() const;
  int pongs_received() const;

private:
  void reader_loop();
  void keepalive_loop();

  std::unique_ptr<ByteStream> stream_;
  ConnectionConfig cfg_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<RelayMessage> inbox_;
  bool closed_ = false;
  std::string reason_;
  Keepalive keepalive_;
  int pings_ = 0;
  int pongs_ = 0;
  std::mutex send_mu_;
  std::thread reader_;
  std::thread pinger_;
};

/// Sends our HELLO, expects the peer's as the first message. Throws
/// RelayError on version or role mismatch, TunnelClosed on silence.
Hello handshake(Connection& conn, Role mine, const SessionId& id, Micros timeout = Micros{10'000'000});

} // namespace simtunnel::relay
