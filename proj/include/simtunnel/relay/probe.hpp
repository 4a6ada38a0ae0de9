#pragma once

#include <memory>
#include <mutex>

#include "simtunnel/backend.hpp"
#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/params.hpp"
#include "simtunnel/relay/connection.hpp"
#include "simtunnel/rewrite/rules.hpp"
#include "simtunnel/trace/trace.hpp"

namespace simtunnel::relay {

/// A remote provider seen as a SimBackend. One request in flight at a time;
/// `latency` is slept on `clock` before each APDU_REQUEST leaves.
class TunnelBackend final : public SimBackend {
public:
  struct Options {
    Micros latency{0};
    /// Local give-up point; should exceed the provider's own deadline so
    /// that its ERROR(0x02) arrives first.
    Micros response_timeout{35'000'000};
    Clock* clock = nullptr;
  };

  TunnelBackend(std::shared_ptr<Connection> conn, Options options);

  /// These throw TunnelClosed if the tunnel goes away and BackendError when
  /// the provider answers ERROR.
  Bytes atr() override;
  Bytes transmit(const Bytes& command) override;
  void reset() override;

  Connection& connection() { return *conn_; }

private:
  RelayMessage request(const RelayMessage& m, MsgType expected);

  std::shared_ptr<Connection> conn_;
  Options options_;
  Clock& clock_;
  std::mutex mu_;
};

enum class AtrMode { Synthetic, MirrorHistorical };

struct ProbePolicy {
  AtrMode atr_mode = AtrMode::Synthetic;
  /// What the modem-facing card offers; active_protocol picks T=0 or T=1.
  iso7816::ProtocolParams params;
  Micros null_interval{200'000};
  Bytes historical = {'s', 'i', 'm', 't', 'u', 'n', 'n', 'e', 'l'};
};

struct ProbeStats {
  std::uint64_t commands = 0;
  std::uint64_t synthesized = 0;
  std::uint64_t resets = 0;
  bool pps = false;
  bool tunnel_lost = false;
};

/// Modem-facing card emulator. Presents a locally built ATR, then serves
/// T=0 or T=1 on `modem` and hands every command to `upstream` through the
/// optional rewrite engine, tracing each exchange.
class Probe {
public:
  Probe(SimBackend& upstream, iso7816::HalfDuplexChannel& modem, ProbePolicy policy,
        rewrite::Engine* engine = nullptr, trace::SessionTrace* trace = nullptr, Clock* clock = nullptr);

  /// Runs until the modem channel closes or the tunnel is lost.
  ProbeStats run();

  /// The ATR the modem will see for a given upstream ATR.
  Bytes local_atr(ByteView upstream_atr) const;

private:
  Bytes handle(const Bytes& command);

  SimBackend& upstream_;
  iso7816::HalfDuplexChannel& modem_;
  ProbePolicy policy_;
  rewrite::Engine* engine_;
  trace::SessionTrace* trace_;
  Clock& clock_;
  ProbeStats stats_;
};

} // namespace simtunnel::relay
