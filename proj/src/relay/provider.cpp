#include "simtunnel/relay/provider.hpp"

#include <future>

#include <spdlog/spdlog.h>

namespace simtunnel::relay {

ErrorCode to_error_code(BackendErrc e) {
  switch (e) {
  case BackendErrc::Unavailable:
    return ErrorCode::BackendUnavailable;
  case BackendErrc::Timeout:
    return ErrorCode::BackendTimeout;
  case BackendErrc::Malformed:
    return ErrorCode::MalformedApdu;
  }
  return ErrorCode::BackendUnavailable;
}

Provider::Provider(BackendFactory backends, ProviderPolicy policy, TraceFactory traces, Clock* clock)
    : backends_(std::move(backends)), policy_(std::move(policy)), traces_(std::move(traces)),
      clock_(clock ? *clock : system_clock()) {}

Provider::~Provider() { stop(); }

ProviderStats Provider::stats() const {
  std::lock_guard lock(mu_);
  return stats_;
}

void Provider::stop() {
  stopping_ = true;
  std::lock_guard lock(mu_);
  if (listener_) listener_->close();
  for (auto* c : live_) c->close("provider shutting down");
}

namespace {

RelayMessage error_message(ErrorCode code) { return RelayMessage{MsgType::Error, Bytes{static_cast<std::uint8_t>(code)}}; }

} // namespace

void Provider::serve_session(std::unique_ptr<ByteStream> stream) {
  Connection conn(std::move(stream), policy_.connection);
  std::list<Connection*>::iterator self;
  {
    std::lock_guard lock(mu_);
    self = live_.insert(live_.end(), &conn);
    ++stats_.sessions;
    if (stopping_) conn.close("provider shutting down");
  }

  // The backend is shared with calls that outlive their deadline.
  std::shared_ptr<SimBackend> backend;
  std::shared_ptr<trace::SessionTrace> trace;
  std::future<Bytes> pending;
  auto settle = [&] {
    if (pending.valid()) {
      try {
        pending.get();
      } catch (...) {
      }
    }
  };

  try {
    const SessionId id = random_session_id();
    const Hello peer = handshake(conn, Role::Provider, id, policy_.hello_timeout);
    spdlog::info("provider: session {} from probe", to_hex(peer.session_id));
    if (traces_) trace = traces_(peer.session_id);
    try {
      backend = std::shared_ptr<SimBackend>(backends_());
    } catch (const std::exception& e) {
      spdlog::warn("provider: backend unavailable: {}", e.what());
    }

    for (;;) {
      auto m = conn.receive();
      switch (m->type) {
      case MsgType::AtrRequest:
        settle();
        if (!backend) {
          conn.send(error_message(ErrorCode::BackendUnavailable));
          break;
        }
        try {
          conn.send(RelayMessage{MsgType::AtrResponse, backend->atr()});
        } catch (const BackendError& e) {
          conn.send(error_message(to_error_code(e.code)));
        }
        break;

      case MsgType::Reset:
        settle();
        {
          std::lock_guard lock(mu_);
          ++stats_.resets;
        }
        if (!backend) {
          conn.send(error_message(ErrorCode::BackendUnavailable));
          break;
        }
        try {
          backend->reset();
          conn.send(RelayMessage{MsgType::AtrResponse, backend->atr()});
        } catch (const BackendError& e) {
          conn.send(error_message(to_error_code(e.code)));
        }
        break;

      case MsgType::ApduRequest: {
        settle();
        const Bytes command = m->payload;
        const Micros t_cmd = clock_.now();
        RelayMessage reply;
        std::string tag;
        if (!backend) {
          reply = error_message(ErrorCode::BackendUnavailable);
        } else {
          pending = std::async(std::launch::async, [b = backend, command] { return b->transmit(command); });
          if (pending.wait_for(policy_.response_deadline) == std::future_status::timeout) {
            spdlog::warn("provider: backend missed the {} ms deadline", policy_.response_deadline.count() / 1000);
            reply = error_message(ErrorCode::BackendTimeout);
          } else {
            try {
              reply = RelayMessage{MsgType::ApduResponse, pending.get()};
            } catch (const BackendError& e) {
              reply = error_message(to_error_code(e.code));
            } catch (const std::exception& e) {
              spdlog::warn("provider: backend failed: {}", e.what());
              reply = error_message(ErrorCode::BackendUnavailable);
            }
          }
        }
        {
          std::lock_guard lock(mu_);
          ++stats_.apdus;
          if (reply.type == MsgType::Error) ++stats_.errors;
        }
        if (trace) {
          trace::TraceRecord r;
          r.t_command_us = t_cmd.count();
          r.t_response_us = clock_.now().count();
          r.command = command;
          if (reply.type == MsgType::ApduResponse) {
            r.response = reply.payload;
          } else {
            r.tags.push_back("relay-error:" + to_hex(reply.payload));
          }
          trace->record(std::move(r));
        }
        conn.send(reply);
        break;
      }

      case MsgType::Hello:
      case MsgType::AtrResponse:
      case MsgType::ApduResponse:
      case MsgType::Error:
        conn.close(std::string("unexpected ") + type_name(m->type) + " from probe");
        break;
      case MsgType::Ping:
      case MsgType::Pong:
        break;
      }
    }
  } catch (const TunnelClosed&) {
  } catch (const RelayError& e) {
    spdlog::warn("provider: handshake failed: {}", e.what());
  }
  settle();
  if (trace) trace->flush();
  spdlog::info("provider: session closed ({})", conn.close_reason());
  std::lock_guard lock(mu_);
  live_.erase(self);
}

void Provider::serve(TcpListener& listener) {
  std::list<std::thread> workers;
  {
    std::lock_guard lock(mu_);
    listener_ = &listener;
    if (stopping_) listener.close();
  }
  while (!stopping_) {
    auto s = listener.accept(std::chrono::milliseconds(200));
    if (!s) continue;
    workers.emplace_back([this, st = std::move(s)]() mutable { serve_session(std::move(st)); });
  }
  {
    std::lock_guard lock(mu_);
    listener_ = nullptr;
  }
  for (auto& t : workers) t.join();
}

} // namespace simtunnel::relay
