#include "simtunnel/iso7816/params.hpp"

#include <array>
#include <cmath>
#include <string>

#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::iso7816 {
namespace {
// 0 marks RFU entries.
constexpr std::array<int, 16> kFi{372, 372, 558, 744, 1116, 1488, 1860, 0,
                                  0,   512, 768, 1024, 1536, 2048, 0,    0};
constexpr std::array<int, 16> kDi{0, 1, 2, 4, 8, 16, 32, 64, 12, 20, 0, 0, 0, 0, 0, 0};
} // namespace

const char* to_string(Errc code) {
  switch (code) {
  case Errc::TruncatedAtr: return "TruncatedAtr";
  case Errc::BadTck: return "BadTck";
  case Errc::UnknownConvention: return "UnknownConvention";
  case Errc::HistoricalLengthMismatch: return "HistoricalLengthMismatch";
  case Errc::HistoricalTooLong: return "HistoricalTooLong";
  case Errc::ReservedFiDi: return "ReservedFiDi";
  case Errc::InvalidParams: return "InvalidParams";
  case Errc::PpsChecksumError: return "PpsChecksumError";
  case Errc::PpsMismatch: return "PpsMismatch";
  case Errc::Timeout: return "Timeout";
  case Errc::ProtocolViolation: return "ProtocolViolation";
  case Errc::ExchangeAborted: return "ExchangeAborted";
  case Errc::ResynchFailed: return "ResynchFailed";
  case Errc::ChannelClosed: return "ChannelClosed";
  case Errc::BadBlock: return "BadBlock";
  case Errc::ExtendedNotSupported: return "ExtendedNotSupported";
  }
  return "Unknown";
}

FiDi lookup_fidi(std::uint8_t ta1) {
  int fi = kFi[ta1 >> 4];
  int di = kDi[ta1 & 0x0F];
  if (fi == 0 || di == 0) throw Iso7816Error(Errc::ReservedFiDi, "TA1=" + std::to_string(ta1));
  return {fi, di};
}

std::uint8_t encode_fidi(FiDi fidi) {
  int fi_code = -1, di_code = -1;
  // Start at 1 so that Fi=372 picks the code without the 4 MHz fmax limit.
  for (int i = 1; i < 16; ++i)
    if (kFi[i] == fidi.fi) {
      fi_code = i;
      break;
    }
  for (int i = 1; i < 16; ++i)
    if (kDi[i] == fidi.di) {
      di_code = i;
      break;
    }
  if (fi_code < 0 || di_code < 0)
    throw Iso7816Error(Errc::ReservedFiDi,
                       "Fi=" + std::to_string(fidi.fi) + " Di=" + std::to_string(fidi.di));
  return static_cast<std::uint8_t>((fi_code << 4) | di_code);
}

void ProtocolParams::validate() const {
  encode_fidi(fidi());
  if (ifsc < 1 || ifsc > 254) throw Iso7816Error(Errc::InvalidParams, "IFSC out of range");
  if (ifsd < 1 || ifsd > 254) throw Iso7816Error(Errc::InvalidParams, "IFSD out of range");
  if (wi < 1 || wi > 255) throw Iso7816Error(Errc::InvalidParams, "WI out of range");
  if (bwi < 0 || bwi > 9) throw Iso7816Error(Errc::InvalidParams, "BWI out of range");
  if (cwi < 0 || cwi > 15) throw Iso7816Error(Errc::InvalidParams, "CWI out of range");
}

Timing Timing::from(const ProtocolParams& p, double clock_hz) {
  auto us = [&](double clocks) { return Micros{static_cast<std::int64_t>(std::llround(clocks / clock_hz * 1e6))}; };
  Timing t;
  double etu_clocks = static_cast<double>(p.fi) / p.di;
  t.etu = us(etu_clocks);
  t.wwt = us(960.0 * p.wi * p.fi);
  t.bwt = us(11 * etu_clocks + std::ldexp(1.0, p.bwi) * 960.0 * 372.0);
  t.cwt = us((11 + std::ldexp(1.0, p.cwi)) * etu_clocks);
  return t;
}

} // namespace simtunnel::iso7816
