#pragma once

#include <cstdint>

// SIM Access Profile 1.1 numeric identifiers. Every value here is pinned by
// golden-byte tests; do not edit without updating tests/unit/test_sap.cpp.
namespace simtunnel::sap {

inline constexpr std::uint16_t kDefaultPort = 7817;
/// The smallest MaxMsgSize the client accepts in a counter-proposal.
inline constexpr std::uint16_t kMinMaxMsgSize = 512;

namespace msg {
inline constexpr std::uint8_t kConnectReq = 0x00;
inline constexpr std::uint8_t kConnectResp = 0x01;
inline constexpr std::uint8_t kDisconnectReq = 0x02;
inline constexpr std::uint8_t kDisconnectResp = 0x03;
inline constexpr std::uint8_t kDisconnectInd = 0x04;
inline constexpr std::uint8_t kTransferApduReq = 0x05;
inline constexpr std::uint8_t kTransferApduResp = 0x06;
inline constexpr std::uint8_t kTransferAtrReq = 0x07;
inline constexpr std::uint8_t kTransferAtrResp = 0x08;
inline constexpr std::uint8_t kPowerSimOffReq = 0x09;
inline constexpr std::uint8_t kPowerSimOffResp = 0x0A;
inline constexpr std::uint8_t kPowerSimOnReq = 0x0B;
inline constexpr std::uint8_t kPowerSimOnResp = 0x0C;
inline constexpr std::uint8_t kResetSimReq = 0x0D;
inline constexpr std::uint8_t kResetSimResp = 0x0E;
inline constexpr std::uint8_t kTransferCardReaderStatusReq = 0x0F;
inline constexpr std::uint8_t kTransferCardReaderStatusResp = 0x10;
inline constexpr std::uint8_t kStatusInd = 0x11;
inline constexpr std::uint8_t kErrorResp = 0x12;
inline constexpr std::uint8_t kSetTransportProtocolReq = 0x13;
inline constexpr std::uint8_t kSetTransportProtocolResp = 0x14;
inline constexpr std::uint8_t kLast = kSetTransportProtocolResp;
} // namespace msg

namespace param {
inline constexpr std::uint8_t kMaxMsgSize = 0x00;
inline constexpr std::uint8_t kConnectionStatus = 0x01;
inline constexpr std::uint8_t kResultCode = 0x02;
inline constexpr std::uint8_t kDisconnectionType = 0x03;
inline constexpr std::uint8_t kCommandApdu = 0x04;
inline constexpr std::uint8_t kResponseApdu = 0x05;
inline constexpr std::uint8_t kAtr = 0x06;
inline constexpr std::uint8_t kCardReaderStatus = 0x07;
inline constexpr std::uint8_t kStatusChange = 0x08;
inline constexpr std::uint8_t kTransportProtocol = 0x09;
inline constexpr std::uint8_t kCommandApdu7816 = 0x10;
} // namespace param

enum class ConnectionStatus : std::uint8_t {
  Ok = 0x00,
  UnableToConnect = 0x01,
  MaxMsgSizeUnsupported = 0x02,
  MaxMsgSizeTooSmall = 0x03,
  OkOngoingCall = 0x04,
};

enum class ResultCode : std::uint8_t {
  Ok = 0x00,
  NoReason = 0x01,
  CardNotAccessible = 0x02,
  CardPoweredOff = 0x03,
  CardRemoved = 0x04,
  CardPoweredOn = 0x05,
  DataNotAvailable = 0x06,
  NotSupported = 0x07,
};

enum class StatusChange : std::uint8_t {
  UnknownError = 0x00,
  CardReset = 0x01,
  CardNotAccessible = 0x02,
  CardRemoved = 0x03,
  CardInserted = 0x04,
  CardRecovered = 0x05,
};

enum class DisconnectionType : std::uint8_t { Graceful = 0x00, Immediate = 0x01 };

} // namespace simtunnel::sap
