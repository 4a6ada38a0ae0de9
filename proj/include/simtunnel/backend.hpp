#pragma once

#include <stdexcept>
#include <string>

#include "simtunnel/bytes.hpp"

namespace simtunnel {

enum class BackendErrc { Unavailable, Timeout, Malformed };

class BackendError : public std::runtime_error {
public:
  BackendError(BackendErrc code, const std::string& what) : std::runtime_error(what), code(code) {}
  BackendErrc code;
};

/// Whatever finally terminates SIM traffic: a virtual card, a SAP session to
/// a phone, a remote provider. Calls are serialized by the caller.
class SimBackend {
public:
  virtual ~SimBackend() = default;
  virtual Bytes atr() = 0;
  /// Raw command APDU in, data ++ SW1 SW2 out. Throws BackendError.
  virtual Bytes transmit(const Bytes& command) = 0;
  virtual void reset() = 0;
};

} // namespace simtunnel
