#include "simtunnel/relay/connection.hpp"

#include <spdlog/spdlog.h>

namespace simtunnel::relay {
namespace {

Micros steady_now() { return system_clock().now(); }

} // namespace

Connection::Connection(std::unique_ptr<ByteStream> stream, ConnectionConfig cfg)
    : stream_(std::move(stream)), cfg_(std::move(cfg)), keepalive_(cfg_.keepalive, steady_now()) {
  reader_ = std::thread([this] { reader_loop(); });
  if (cfg_.keepalive_enabled) pinger_ = std::thread([this] { keepalive_loop(); });
}

Connection::~Connection() {
  close();
  if (reader_.joinable()) reader_.join();
  if (pinger_.joinable()) pinger_.join();
}

void Connection::send(const RelayMessage& m) {
  if (closed()) throw TunnelClosed(close_reason());
  std::lock_guard lock(send_mu_);
  // Observed before the write so a fast reply can never be logged first.
  if (cfg_.observer) cfg_.observer(true, m);
  try {
    stream_->write_all(encode_message(m));
  } catch (const std::exception& e) {
    close(std::string("write failed: ") + e.what());
    throw TunnelClosed(close_reason());
  }
}

std::optional<RelayMessage> Connection::receive(std::optional<Micros> timeout) {
  std::unique_lock lock(mu_);
  auto ready = [&] { return !inbox_.empty() || closed_; };
  if (timeout) {
    if (!cv_.wait_for(lock, *timeout, ready)) return std::nullopt;
  } else {
    cv_.wait(lock, ready);
  }
  if (inbox_.empty()) throw TunnelClosed(reason_);
  RelayMessage m = std::move(inbox_.front());
  inbox_.pop_front();
  return m;
}

void Connection::close(const std::string& reason) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    closed_ = true;
    reason_ = reason;
  }
  cv_.notify_all();
  stream_->close();
}

bool Connection::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

std::string Connection::close_reason() const {
  std::lock_guard lock(mu_);
  return reason_;
}

int Connection::pings_sent() const {
  std::lock_guard lock(mu_);
  return pings_;
}

int Connection::pongs_received() const {
  std::lock_guard lock(mu_);
  return pongs_;
}

void Connection::reader_loop() {
  for (;;) {
    RelayMessage m;
    try {
      m = read_message(*stream_);
    } catch (const StreamClosed&) {
      close("peer closed the connection");
      return;
    } catch (const FrameError& e) {
      spdlog::warn("relay: dropping connection: {}", e.what());
      close(std::string("protocol error: ") + e.what());
      return;
    } catch (const std::exception& e) {
      close(std::string("read failed: ") + e.what());
      return;
    }
    if (cfg_.observer) cfg_.observer(false, m);
    {
      std::lock_guard lock(mu_);
      keepalive_.on_receive(steady_now());
      if (m.type == MsgType::Pong) {
        ++pongs_;
        continue;
      }
      if (m.type != MsgType::Ping) {
        inbox_.push_back(std::move(m));
        cv_.notify_all();
        continue;
      }
    }
    try {
      send(RelayMessage{MsgType::Pong, {}});
    } catch (const TunnelClosed&) {
      return;
    }
  }
}

void Connection::keepalive_loop() {
  std::unique_lock lock(mu_);
  while (!closed_) {
    const Micros now = steady_now();
    switch (keepalive_.poll(now)) {
    case Keepalive::Action::None:
      cv_.wait_for(lock, keepalive_.next_due() - now);
      continue;
    case Keepalive::Action::Close:
      lock.unlock();
      spdlog::warn("relay: peer missed {} PONGs, closing", cfg_.keepalive.max_missed);
      close("keepalive: peer unresponsive");
      return;
    case Keepalive::Action::SendPing:
      keepalive_.on_ping_sent(now);
      ++pings_;
      lock.unlock();
      try {
        send(RelayMessage{MsgType::Ping, {}});
      } catch (const TunnelClosed&) {
        return;
      }
      lock.lock();
      continue;
    }
  }
}

Hello handshake(Connection& conn, Role mine, const SessionId& id, Micros timeout) {
  conn.send(RelayMessage{MsgType::Hello, encode_hello(Hello{kProtocolVersion, mine, id})});
  auto m = conn.receive(timeout);
  if (!m) {
    conn.close("no HELLO from peer");
    throw TunnelClosed("no HELLO from peer");
  }
  if (m->type != MsgType::Hello) {
    conn.close("first message was not HELLO");
    throw RelayError(std::string("expected HELLO, got ") + type_name(m->type));
  }
  Hello peer;
  try {
    peer = decode_hello(m->payload);
  } catch (const FrameError& e) {
    conn.close("bad HELLO");
    throw RelayError(e.what());
  }
  if (peer.version != kProtocolVersion) {
    conn.close("version mismatch");
    throw RelayError("peer speaks protocol version " + std::to_string(peer.version));
  }
  if (peer.role == mine || (peer.role != Role::Probe && peer.role != Role::Provider)) {
    conn.close("role mismatch");
    throw RelayError("peer announced an incompatible role");
  }
  return peer;
}

} // namespace simtunnel::relay
