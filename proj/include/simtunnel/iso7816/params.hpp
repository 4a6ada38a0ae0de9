#pragma once

#include <chrono>
#include <cstdint>

#include "simtunnel/clock.hpp"

namespace simtunnel::iso7816 {

enum class Protocol : std::uint8_t { T0 = 0, T1 = 1 };

struct FiDi {
  int fi = 372;
  int di = 1;
  friend bool operator==(const FiDi&, const FiDi&) = default;
};

/// ISO 7816-3 Fi/Di tables. Throws Iso7816Error(ReservedFiDi) for RFU codes.
FiDi lookup_fidi(std::uint8_t ta1);
/// Inverse of lookup_fidi; Fi=372 encodes as high nibble 1. Throws
/// ReservedFiDi if either value is not in the tables.
std::uint8_t encode_fidi(FiDi fidi);

struct ProtocolParams {
  int fi = 372;
  int di = 1;
  Protocol active_protocol = Protocol::T0;
  int wi = 10;   ///< T=0 waiting-time integer, 1..255
  int bwi = 4;   ///< T=1 block-waiting integer, 0..9
  int cwi = 13;  ///< T=1 character-waiting integer, 0..15
  int ifsc = 32; ///< card receive size, 1..254
  int ifsd = 32; ///< terminal receive size, 1..254

  FiDi fidi() const { return {fi, di}; }
  /// Throws Iso7816Error(InvalidParams / ReservedFiDi).
  void validate() const;

  friend bool operator==(const ProtocolParams&, const ProtocolParams&) = default;
};

/// Wall-time view of the protocol timing integers for a nominal card clock.
/// 3.5712 MHz makes 960 * 372 clocks exactly 100 ms.
struct Timing {
  static constexpr double kDefaultClockHz = 3'571'200.0;

  Micros etu{};
  Micros wwt{}; ///< T=0 work waiting time: 960 * WI * Fi / f
  Micros bwt{}; ///< T=1 block waiting time: 11 etu + 2^BWI * 960 * 372 / f
  Micros cwt{}; ///< T=1 character waiting time: (11 + 2^CWI) etu

  static Timing from(const ProtocolParams& p, double clock_hz = kDefaultClockHz);
};

} // namespace simtunnel::iso7816
