#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "simtunnel/bytes.hpp"
#include "simtunnel/sap/constants.hpp"
#include "simtunnel/stream.hpp"

namespace simtunnel::sap {

enum class SapErrc { Truncated, PaddingNonZero, UnknownMsgId, Oversized };

class SapError : public std::runtime_error {
public:
  SapError(SapErrc code, const std::string& what) : std::runtime_error(what), code(code) {}
  SapErrc code;
};

struct SapParameter {
  std::uint8_t id = 0;
  Bytes value;
  friend bool operator==(const SapParameter&, const SapParameter&) = default;
};

struct SapMessage {
  std::uint8_t id = 0;
  std::vector<SapParameter> params;

  const Bytes* find(std::uint8_t param_id) const;
  /// First octet of a one-octet parameter.
  std::optional<std::uint8_t> byte(std::uint8_t param_id) const;

  friend bool operator==(const SapMessage&, const SapMessage&) = default;
};

SapMessage make(std::uint8_t id, std::vector<SapParameter> params = {});
SapParameter u8_param(std::uint8_t id, std::uint8_t v);
SapParameter u16_param(std::uint8_t id, std::uint16_t v);

const char* msg_name(std::uint8_t id);

/// id, count, 2 reserved; each parameter is id, reserved, u16be length,
/// value, zero padding to a 4-octet boundary.
Bytes encode_sap(const SapMessage& m);

/// Decodes the message at the start of `buf`. Structural damage raises
/// Truncated. Non-zero padding and unknown message IDs are raised only
/// after the whole message was parsed, with `consumed` already set, so a
/// peer can answer ERROR_RESP and carry on.
SapMessage decode_sap(ByteView buf, std::size_t& consumed);

/// Stream flavour with the same error rules. A clean close before the first
/// octet raises StreamClosed.
SapMessage read_sap(ByteStream& stream);

} // namespace simtunnel::sap
