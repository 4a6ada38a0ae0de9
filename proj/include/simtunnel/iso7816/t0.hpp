#pragma once

#include <cstdint>
#include <optional>

#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/params.hpp"

namespace simtunnel::iso7816 {

inline constexpr std::uint8_t kNullByte = 0x60;

/// Interface-device half of T=0. Maps an APDU onto a TPDU (case 4 is sent as
/// case 3; the 61xx that follows is left to the caller), follows procedure
/// bytes and re-issues the header once on 6Cxx.
class T0Terminal {
public:
  T0Terminal(HalfDuplexChannel& channel, const ProtocolParams& params);

  apdu::ResponseApdu exchange(const apdu::CommandApdu& cmd);

  int nulls_received() const { return nulls_; }

private:
  std::uint8_t next_procedure_byte();

  HalfDuplexChannel& channel_;
  Timing timing_;
  int nulls_ = 0;
};

struct T0CardConfig {
  Micros null_interval{200'000};
};

/// Card half of T=0: reads the TPDU, rebuilds the APDU, hands it to the
/// handler and keeps the terminal waiting with NULL bytes.
class T0Card {
public:
  T0Card(HalfDuplexChannel& channel, const ProtocolParams& params, T0CardConfig config = {});

  /// Serves one command. Returns false when the channel closed while idle.
  /// Throws Iso7816Error(ProtocolViolation) when the terminal stalls inside
  /// a TPDU.
  bool serve_one(const CardHandler& handler, std::optional<std::uint8_t> first_byte = std::nullopt);

  int nulls_sent() const { return nulls_; }

private:
  bool serve(const CardHandler& handler, std::optional<std::uint8_t> first_byte);

  HalfDuplexChannel& channel_;
  Timing timing_;
  T0CardConfig config_;
  int nulls_ = 0;
};

/// Terminal-side convenience wrapper.
apdu::ResponseApdu t0_exchange(const apdu::CommandApdu& cmd, HalfDuplexChannel& channel,
                               const ProtocolParams& params = {});

} // namespace simtunnel::iso7816
