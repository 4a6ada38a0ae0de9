#pragma once

#include <atomic>
#include <mutex>
#include <vector>

#include "simtunnel/backend.hpp"
#include "simtunnel/sap/codec.hpp"

namespace simtunnel::sap {

struct SapServerOptions {
  /// Largest MaxMsgSize granted; bigger requests get this as a counter-proposal.
  std::uint16_t max_msg_size = 4096;
  /// Requests below this are refused as too small.
  std::uint16_t min_msg_size = 64;
};

/// Server half of SAP over any ordered byte stream. Stands in for a phone's
/// remote SIM access endpoint so the client can be exercised without radio.
class SapServer {
public:
  explicit SapServer(SimBackend& backend, SapServerOptions options = {});

  /// One session; returns after DISCONNECT or when the stream closes.
  void serve(ByteStream& stream);
  /// Serves TCP sessions one after another until `stop` is set.
  void serve_tcp(TcpListener& listener, const std::atomic<bool>& stop);
  /// Sends STATUS_IND on the active session and updates card availability.
  void notify_status(StatusChange change);

  /// Command APDUs as they reached the backend.
  std::vector<Bytes> apdus() const;
  std::size_t errors_sent() const { return errors_; }

private:
  void send(const SapMessage& m);
  SapMessage handle(const SapMessage& m);

  SimBackend& backend_;
  SapServerOptions options_;
  mutable std::mutex mu_;
  std::mutex write_mu_;
  ByteStream* stream_ = nullptr;
  bool connected_ = false;
  bool card_present_ = true;
  std::vector<Bytes> apdus_;
  std::atomic<std::size_t> errors_{0};
};

} // namespace simtunnel::sap
