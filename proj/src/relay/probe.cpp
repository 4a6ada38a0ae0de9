#include "simtunnel/relay/probe.hpp"

#include <algorithm>

#include <spdlog/spdlog.h>

#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/iso7816/atr.hpp"
#include "simtunnel/iso7816/errors.hpp"
#include "simtunnel/iso7816/pps.hpp"
#include "simtunnel/iso7816/t0.hpp"
#include "simtunnel/iso7816/t1.hpp"
#include "simtunnel/relay/provider.hpp"

namespace simtunnel::relay {

using namespace iso7816;

TunnelBackend::TunnelBackend(std::shared_ptr<Connection> conn, Options options)
    : conn_(std::move(conn)), options_(options), clock_(options.clock ? *options.clock : system_clock()) {}

RelayMessage TunnelBackend::request(const RelayMessage& m, MsgType expected) {
  conn_->send(m);
  auto reply = conn_->receive(options_.response_timeout);
  if (!reply) {
    conn_->close("no reply from provider");
    throw TunnelClosed("no reply from provider");
  }
  if (reply->type == MsgType::Error) {
    const std::uint8_t code = reply->payload.empty() ? 0 : reply->payload[0];
    switch (static_cast<ErrorCode>(code)) {
    case ErrorCode::BackendTimeout:
      throw BackendError(BackendErrc::Timeout, "provider: backend timeout");
    case ErrorCode::MalformedApdu:
      throw BackendError(BackendErrc::Malformed, "provider: malformed APDU");
    default:
      throw BackendError(BackendErrc::Unavailable, "provider: backend unavailable");
    }
  }
  if (reply->type != expected) {
    conn_->close(std::string("unexpected ") + type_name(reply->type));
    throw TunnelClosed(std::string("provider sent ") + type_name(reply->type));
  }
  return std::move(*reply);
}

Bytes TunnelBackend::atr() {
  std::lock_guard lock(mu_);
  return request(RelayMessage{MsgType::AtrRequest, {}}, MsgType::AtrResponse).payload;
}

Bytes TunnelBackend::transmit(const Bytes& command) {
  std::lock_guard lock(mu_);
  clock_.sleep_for(options_.latency);
  return request(RelayMessage{MsgType::ApduRequest, command}, MsgType::ApduResponse).payload;
}

void TunnelBackend::reset() {
  std::lock_guard lock(mu_);
  request(RelayMessage{MsgType::Reset, {}}, MsgType::AtrResponse);
}

namespace {

/// Lets the probe look at the modem's first octet (PPSS or CLA) and put it
/// back for the protocol layer.
class PrefixChannel final : public HalfDuplexChannel {
public:
  explicit PrefixChannel(HalfDuplexChannel& inner) : inner_(inner) {}

  void unread(std::uint8_t b) { front_.insert(front_.begin(), b); }

  void send(ByteView bytes) override { inner_.send(bytes); }
  std::optional<Bytes> receive(std::size_t n, Deadline deadline) override {
    if (front_.size() >= n) {
      Bytes out(front_.begin(), front_.begin() + static_cast<std::ptrdiff_t>(n));
      front_.erase(front_.begin(), front_.begin() + static_cast<std::ptrdiff_t>(n));
      return out;
    }
    auto rest = inner_.receive(n - front_.size(), deadline);
    if (!rest) return std::nullopt;
    Bytes out = std::move(front_);
    front_.clear();
    append(out, *rest);
    return out;
  }
  void discard_input() override {
    front_.clear();
    inner_.discard_input();
  }
  void close() override { inner_.close(); }

private:
  HalfDuplexChannel& inner_;
  Bytes front_;
};

} // namespace

Probe::Probe(SimBackend& upstream, HalfDuplexChannel& modem, ProbePolicy policy, rewrite::Engine* engine,
             trace::SessionTrace* trace, Clock* clock)
    : upstream_(upstream), modem_(modem), policy_(std::move(policy)), engine_(engine), trace_(trace),
      clock_(clock ? *clock : system_clock()) {}

Bytes Probe::local_atr(ByteView upstream_atr) const {
  if (policy_.atr_mode == AtrMode::MirrorHistorical) {
    try {
      return build_atr(policy_.params, parse_atr(upstream_atr).historical_bytes);
    } catch (const Iso7816Error& e) {
      spdlog::warn("probe: upstream ATR unusable ({}), using synthetic", e.what());
    }
  }
  return build_atr(policy_.params, policy_.historical);
}

Bytes Probe::handle(const Bytes& command) {
  ++stats_.commands;
  trace::TraceRecord rec;
  rec.t_command_us = clock_.now().count();

  rewrite::Verdict cv = engine_ ? engine_->on_command(command) : rewrite::Verdict{rewrite::Verdict::Kind::Pass, command, false, {}};
  rec.tags = cv.tags;
  auto finish = [&](Bytes response) {
    rec.response = response;
    rec.t_response_us = clock_.now().count();
    if (trace_) trace_->record(std::move(rec));
    return response;
  };

  if (cv.kind == rewrite::Verdict::Kind::Synthesize) {
    ++stats_.synthesized;
    rec.command = command;
    rec.synthesized = true;
    return finish(cv.bytes);
  }
  rec.command = cv.bytes;
  if (cv.modified) {
    rec.rewritten_command = true;
    rec.original_command = command;
  }

  Bytes response;
  try {
    response = upstream_.transmit(cv.bytes);
  } catch (const TunnelClosed& e) {
    spdlog::error("probe: tunnel lost: {}", e.what());
    stats_.tunnel_lost = true;
    rec.tags.push_back("tunnel-lost");
    return finish(apdu::ResponseApdu::status(0x6F00).bytes());
  } catch (const BackendError& e) {
    spdlog::warn("probe: {}", e.what());
    rec.tags.push_back("backend-error:" + to_hex(Bytes{static_cast<std::uint8_t>(to_error_code(e.code))}));
    return finish(apdu::ResponseApdu::status(0x6F00).bytes());
  }

  if (engine_) {
    rewrite::Verdict rv = engine_->on_response(response);
    for (const auto& t : rv.tags)
      if (std::find(rec.tags.begin(), rec.tags.end(), t) == rec.tags.end()) rec.tags.push_back(t);
    if (rv.modified) {
      rec.rewritten_response = true;
      rec.original_response = response;
    }
    response = std::move(rv.bytes);
  }
  return finish(std::move(response));
}

ProbeStats Probe::run() {
  Bytes upstream_atr;
  try {
    upstream_atr = upstream_.atr();
  } catch (const TunnelClosed&) {
    stats_.tunnel_lost = true;
    return stats_;
  } catch (const BackendError& e) {
    spdlog::warn("probe: no upstream ATR: {}", e.what());
  }

  PrefixChannel channel(modem_);
  try {
    modem_.send(local_atr(upstream_atr));
  } catch (const Iso7816Error&) {
    return stats_;
  }

  ProtocolParams params = policy_.params;
  std::optional<T0Card> t0;
  std::optional<T1Endpoint> t1;
  auto build = [&] {
    t0.reset();
    t1.reset();
    if (params.active_protocol == Protocol::T1) {
      T1Config cfg;
      cfg.null_interval = policy_.null_interval;
      t1.emplace(channel, T1Role::Card, params, cfg);
    } else {
      t0.emplace(channel, params, T0CardConfig{policy_.null_interval});
    }
  };
  const CardHandler handler = [this](const Bytes& c) { return handle(c); };

  bool first = true;
  for (;;) {
    try {
      if (first) {
        first = false;
        const auto b = channel.receive_byte(std::nullopt);
        if (*b == 0xFF) {
          stats_.pps = true;
          params = pps_exchange(policy_.params, channel, PpsSide::Responder, Micros{1'000'000}, *b);
        } else {
          channel.unread(*b);
        }
        build();
      }
      const bool alive = t1 ? t1->serve_one(handler) : t0->serve_one(handler);
      if (!alive || stats_.tunnel_lost) break;
    } catch (const Iso7816Error& e) {
      if (e.code == Errc::ChannelClosed) break;
      spdlog::warn("probe: modem-side error: {}", e.what());
      try {
        upstream_.reset();
        ++stats_.resets;
      } catch (const TunnelClosed&) {
        stats_.tunnel_lost = true;
        break;
      } catch (const BackendError& be) {
        spdlog::warn("probe: upstream reset failed: {}", be.what());
      }
      channel.discard_input();
      params = policy_.params;
      build();
    }
  }
  return stats_;
}

} // namespace simtunnel::relay
