#pragma once

#include <optional>

#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/iso7816/atr.hpp"
#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/t0.hpp"
#include "simtunnel/iso7816/t1.hpp"

namespace simtunnel::modem {

struct ModemOptions {
  /// Request these parameters with PPS after the ATR; nullopt keeps the
  /// ATR's defaults and skips PPS.
  std::optional<iso7816::ProtocolParams> pps;
  Micros atr_timeout{5'000'000};
};

/// Scripted interface device: reads the ATR, optionally negotiates PPS, then
/// exchanges APDUs with T=0 or T=1, whichever the card offered first.
class VirtualModem {
public:
  explicit VirtualModem(iso7816::HalfDuplexChannel& channel, ModemOptions options = {});

  /// Throws Iso7816Error on a missing or malformed ATR or a failed PPS.
  const iso7816::Atr& power_on();

  apdu::ResponseApdu exchange(const apdu::CommandApdu& cmd);
  /// Raw command in, data ++ SW out.
  Bytes transmit(const Bytes& command);

  const Bytes& atr_bytes() const { return atr_raw_; }
  const iso7816::ProtocolParams& params() const { return params_; }
  int waits_observed() const;

private:
  iso7816::HalfDuplexChannel& channel_;
  ModemOptions options_;
  Bytes atr_raw_;
  iso7816::Atr atr_;
  iso7816::ProtocolParams params_;
  std::optional<iso7816::T0Terminal> t0_;
  std::optional<iso7816::T1Endpoint> t1_;
};

} // namespace simtunnel::modem
