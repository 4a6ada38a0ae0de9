#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "simtunnel/bytes.hpp"
#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/params.hpp"

namespace simtunnel::iso7816 {

enum class Convention { Direct, Inverse };
enum class InterfaceKind { TA, TB, TC, TD };

struct InterfaceByte {
  int level = 1; ///< the i in TA_i
  InterfaceKind kind = InterfaceKind::TA;
  std::uint8_t value = 0;
  friend bool operator==(const InterfaceByte&, const InterfaceByte&) = default;
};

struct Atr {
  Convention convention = Convention::Direct;
  std::vector<InterfaceByte> interface_bytes;
  std::set<Protocol> offered_protocols;
  /// Every T value named by a TD byte, in order (may include T=15).
  std::vector<int> indicated_types;
  Bytes historical_bytes;
  std::optional<std::uint8_t> tck;

  std::optional<std::uint8_t> find(int level, InterfaceKind kind) const;
  /// First interface byte of `kind` in a group introduced by a TD_i naming
  /// protocol `t` (i >= 2 for T=1 specific bytes).
  std::optional<std::uint8_t> find_for_protocol(int t, InterfaceKind kind) const;

  FiDi fidi() const;
  /// Locally usable parameters; active protocol is the first one offered.
  ProtocolParams params() const;
};

Atr parse_atr(ByteView raw);

/// Minimal ATR offering exactly params.active_protocol. Non-default Fi/Di go
/// into TA1, WI into TC2 (T=0), IFSC/BWI/CWI into TA3/TB3 (T=1).
Bytes build_atr(const ProtocolParams& params, ByteView historical);

/// Reads one ATR off the channel, following the interface-byte presence bits.
Bytes receive_atr(HalfDuplexChannel& channel, Deadline deadline);

/// Multi-line human-readable breakdown used by `decode --atr`.
std::string describe_atr(const Atr& atr);

} // namespace simtunnel::iso7816
