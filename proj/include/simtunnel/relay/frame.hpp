#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "simtunnel/bytes.hpp"
#include "simtunnel/stream.hpp"

namespace simtunnel::relay {

inline constexpr std::uint16_t kDefaultPort = 7816;
inline constexpr std::uint8_t kProtocolVersion = 0x01;
inline constexpr std::size_t kMaxPayload = (1u << 24) - 1;

enum class MsgType : std::uint8_t {
  Hello = 0x01,
  AtrRequest = 0x02,
  AtrResponse = 0x03,
  ApduRequest = 0x04,
  ApduResponse = 0x05,
  Reset = 0x06,
  Error = 0x07,
  Ping = 0x08,
  Pong = 0x09,
};

bool is_known_type(std::uint8_t t);
const char* type_name(MsgType t);

struct RelayMessage {
  MsgType type = MsgType::Ping;
  Bytes payload;
  friend bool operator==(const RelayMessage&, const RelayMessage&) = default;
};

enum class FrameErrc { OversizedFrame, UnknownType, TruncatedStream };

class FrameError : public std::runtime_error {
public:
  FrameError(FrameErrc code, const std::string& what) : std::runtime_error(what), code(code) {}
  FrameErrc code;
};

/// type ++ u32be(length) ++ payload
Bytes encode_message(const RelayMessage& m);
/// Decodes the frame at the start of `buf`; `consumed` receives its size.
RelayMessage decode_message(ByteView buf, std::size_t& consumed);
/// Reads exactly one frame. A clean close before the first octet raises
/// StreamClosed; a close inside a frame raises TruncatedStream.
RelayMessage read_message(ByteStream& stream);

enum class Role : std::uint8_t { Probe = 0x01, Provider = 0x02 };
using SessionId = std::array<std::uint8_t, 16>;

struct Hello {
  std::uint8_t version = kProtocolVersion;
  Role role = Role::Probe;
  SessionId session_id{};
  friend bool operator==(const Hello&, const Hello&) = default;
};

Bytes encode_hello(const Hello& h);
/// Extra trailing octets are ignored. Throws FrameError(TruncatedStream) if short.
Hello decode_hello(ByteView payload);
SessionId random_session_id();

enum class ErrorCode : std::uint8_t {
  BackendUnavailable = 0x01,
  BackendTimeout = 0x02,
  MalformedApdu = 0x03,
};

} // namespace simtunnel::relay
