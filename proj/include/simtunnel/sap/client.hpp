#pragma once

#include <condition_variable>
#include <deque>
#include <memory>
#include <mutex>
#include <thread>

#include "simtunnel/backend.hpp"
#include "simtunnel/clock.hpp"
#include "simtunnel/sap/codec.hpp"

namespace simtunnel::sap {

enum class ClientErrc { ConnectRefused, CardNotReady, ResultError, TransportClosed };

class SapClientError : public std::runtime_error {
public:
  SapClientError(ClientErrc code, const std::string& what, std::uint8_t result = 0)
      : std::runtime_error(what), code(code), result(result) {}
  ClientErrc code;
  std::uint8_t result; ///< ResultCode for ResultError
};

enum class ClientState { Disconnected, Connecting, Idle, AwaitAtr, AwaitApduResponse, Closing };

struct SapClientOptions {
  std::uint16_t max_msg_size = 4096;
  Micros timeout{5'000'000};
};

struct SapLogEntry {
  bool outgoing = false;
  SapMessage message;
  ClientState state{}; ///< client state when the message was sent or received
};

/// SAP client session presented as a SimBackend. The constructor runs the
/// whole connect sequence (CONNECT, card-reset status, ATR); STATUS_IND may
/// arrive at any time and is tracked by a reader thread.
class SapClient final : public SimBackend {
public:
  SapClient(std::unique_ptr<ByteStream> transport, SapClientOptions options = {});
  ~SapClient() override;
  SapClient(const SapClient&) = delete;
  SapClient& operator=(const SapClient&) = delete;

  Bytes atr() override;
  Bytes transmit(const Bytes& command) override;
  /// RESET_SIM, then a fresh ATR.
  void reset() override;
  /// Graceful DISCONNECT_REQ/RESP; also done by the destructor.
  void disconnect();

  std::uint16_t max_msg_size() const { return max_msg_size_; }
  ClientState state() const;
  bool card_available() const;
  std::vector<SapLogEntry> log() const;

private:
  void send(const SapMessage& m);
  /// Next non-STATUS_IND message; throws SapClientError(TransportClosed) on
  /// close and BackendError(Timeout) on silence.
  SapMessage await(std::uint8_t expected);
  void reader_loop();
  void set_state(ClientState s);
  void connect();
  Bytes fetch_atr();

  std::unique_ptr<ByteStream> transport_;
  SapClientOptions options_;
  std::uint16_t max_msg_size_ = 0;
  Bytes atr_;

  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<SapMessage> inbox_;
  std::vector<SapLogEntry> log_;
  ClientState state_ = ClientState::Disconnected;
  bool card_ok_ = false;
  bool card_reset_seen_ = false;
  bool closed_ = false;
  std::mutex call_mu_;
  std::thread reader_;
};

/// TCP binding (default port 7817). Throws NetError or SapClientError.
std::unique_ptr<SapClient> connect_sap_tcp(const Endpoint& ep, SapClientOptions options = {});

} // namespace simtunnel::sap
