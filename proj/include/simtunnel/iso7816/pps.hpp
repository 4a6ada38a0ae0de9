#pragma once

#include <optional>

#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/params.hpp"

namespace simtunnel::iso7816 {

struct PpsFrame {
  Protocol protocol = Protocol::T0;
  std::optional<std::uint8_t> pps1; ///< Fi/Di code as in TA1

  friend bool operator==(const PpsFrame&, const PpsFrame&) = default;
};

/// PPSS=FF, PPS0, optional PPS1, PCK (XOR of all octets is zero).
Bytes encode_pps(const PpsFrame& frame);
/// Throws PpsChecksumError on a bad PCK, ProtocolViolation on a bad PPSS.
PpsFrame decode_pps(ByteView raw);

enum class PpsSide { Initiator, Responder };

/// Initiator: sends `requested` and returns the agreed parameters.
/// Responder: `requested` describes what this side accepts; the incoming
/// request is echoed when acceptable, or answered without PPS1 (defaults)
/// when only the protocol matches. `first_byte` lets a card loop that has
/// already consumed PPSS hand over.
ProtocolParams pps_exchange(const ProtocolParams& requested, HalfDuplexChannel& channel, PpsSide side,
                            Micros timeout = Micros{1'000'000},
                            std::optional<std::uint8_t> first_byte = std::nullopt);

} // namespace simtunnel::iso7816
