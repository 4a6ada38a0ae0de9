#pragma once

#include <stdexcept>
#include <string>

namespace simtunnel::iso7816 {

enum class Errc {
  TruncatedAtr,
  BadTck,
  UnknownConvention,
  HistoricalLengthMismatch,
  HistoricalTooLong,
  ReservedFiDi,
  InvalidParams,
  PpsChecksumError,
  PpsMismatch,
  Timeout,
  ProtocolViolation,
  ExchangeAborted,
  ResynchFailed,
  ChannelClosed,
  BadBlock,
  ExtendedNotSupported,
};

const char* to_string(Errc code);

class Iso7816Error : public std::runtime_error {
public:
  Iso7816Error(Errc code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code(code) {}
  explicit Iso7816Error(Errc code) : std::runtime_error(to_string(code)), code(code) {}
  Errc code;
};

} // namespace simtunnel::iso7816
