#pragma once

#include <atomic>
#include <memory>

#include "simtunnel/stream.hpp"
#include "simtunnel/trace/trace.hpp"

namespace simtunnel::trace {

inline constexpr std::uint16_t kGsmtapPort = 4729;
inline constexpr std::uint8_t kGsmtapVersion = 2;
inline constexpr std::uint8_t kGsmtapHeaderWords = 4; ///< 16 octets
inline constexpr std::uint8_t kGsmtapTypeSim = 0x04;
inline constexpr std::uint8_t kGsmtapSimApdu = 0x00;
inline constexpr std::uint16_t kGsmtapArfcnUplink = 0x4000;

/// 16-octet GSMTAP v2 header for a SIM APDU; `uplink` marks modem-to-card.
Bytes gsmtap_header(bool uplink);
Bytes gsmtap_datagram(ByteView apdu, bool uplink);

class DatagramSender {
public:
  virtual ~DatagramSender() = default;
  /// False when the datagram could not be handed to the network.
  virtual bool send(ByteView datagram) = 0;
};

class UdpSender final : public DatagramSender {
public:
  /// Throws NetError when the socket cannot be created or the host is bad.
  explicit UdpSender(const Endpoint& dest);
  ~UdpSender() override;
  UdpSender(const UdpSender&) = delete;
  UdpSender& operator=(const UdpSender&) = delete;

  bool send(ByteView datagram) override;

private:
  int fd_ = -1;
};

/// Emits the command and response of each record as two datagrams. Send
/// failures only bump the drop counter.
class GsmtapExporter final : public TraceSink {
public:
  explicit GsmtapExporter(std::unique_ptr<DatagramSender> sender) : sender_(std::move(sender)) {}

  void append(const TraceRecord& r) override;
  std::uint64_t sent() const { return sent_; }
  std::uint64_t drops() const { return drops_; }

private:
  void emit(ByteView apdu, bool uplink);

  std::unique_ptr<DatagramSender> sender_;
  std::atomic<std::uint64_t> sent_{0};
  std::atomic<std::uint64_t> drops_{0};
};

} // namespace simtunnel::trace
