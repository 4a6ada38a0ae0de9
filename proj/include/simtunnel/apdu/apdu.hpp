#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

#include "simtunnel/bytes.hpp"

/// APDU object model: short command/response APDUs, ISO 7816-4 case rules,
/// SIM command classification and status-word semantics.
namespace simtunnel::apdu {

enum class ApduCase { Case1, Case2, Case3, Case4 };

enum class ApduErrc { Truncated, LcMismatch, ExtendedNotSupported, Invalid };

class ApduError : public std::runtime_error {
public:
  ApduError(ApduErrc code, const std::string& what) : std::runtime_error(what), code(code) {}
  ApduErrc code;
};

struct CommandApdu {
  std::uint8_t cla = 0;
  std::uint8_t ins = 0;
  std::uint8_t p1 = 0;
  std::uint8_t p2 = 0;
  Bytes data;
  /// 1..256; a serialized Le octet of 0x00 means 256.
  std::optional<int> le;

  ApduCase apdu_case() const {
    if (data.empty()) return le ? ApduCase::Case2 : ApduCase::Case1;
    return le ? ApduCase::Case4 : ApduCase::Case3;
  }
  std::uint16_t p1p2() const { return be16(p1, p2); }

  friend bool operator==(const CommandApdu&, const CommandApdu&) = default;
};

struct ResponseApdu {
  Bytes data;
  std::uint8_t sw1 = 0x90;
  std::uint8_t sw2 = 0x00;

  std::uint16_t sw() const { return be16(sw1, sw2); }
  Bytes bytes() const;
  /// Last two octets are the status word. Throws ApduError(Truncated) below 2 bytes.
  static ResponseApdu from_bytes(ByteView raw);
  static ResponseApdu status(std::uint16_t sw) {
    return {{}, static_cast<std::uint8_t>(sw >> 8), static_cast<std::uint8_t>(sw & 0xFF)};
  }

  friend bool operator==(const ResponseApdu&, const ResponseApdu&) = default;
};

CommandApdu parse_command(ByteView raw);
Bytes serialize_command(const CommandApdu& cmd);

enum class SimCommand {
  Select,
  ReadBinary,
  UpdateBinary,
  ReadRecord,
  UpdateRecord,
  Status,
  GetResponse,
  Fetch,
  TerminalResponse,
  Envelope,
  Authenticate,
  VerifyPin,
  Unknown,
};

struct SimCommandKind {
  SimCommand kind = SimCommand::Unknown;
  std::uint8_t ins = 0; ///< meaningful for Unknown

  friend bool operator==(const SimCommandKind&, const SimCommandKind&) = default;
};

namespace ins {
inline constexpr std::uint8_t kSelect = 0xA4;
inline constexpr std::uint8_t kReadBinary = 0xB0;
inline constexpr std::uint8_t kUpdateBinary = 0xD6;
inline constexpr std::uint8_t kReadRecord = 0xB2;
inline constexpr std::uint8_t kUpdateRecord = 0xDC;
inline constexpr std::uint8_t kStatus = 0xF2;
inline constexpr std::uint8_t kGetResponse = 0xC0;
inline constexpr std::uint8_t kFetch = 0x12;
inline constexpr std::uint8_t kTerminalResponse = 0x14;
inline constexpr std::uint8_t kEnvelope = 0xC2;
inline constexpr std::uint8_t kAuthenticate = 0x88;
inline constexpr std::uint8_t kVerifyPin = 0x20;
} // namespace ins

/// Pure lookup on INS. CLA is not checked.
SimCommandKind classify_sim(std::uint8_t cla, std::uint8_t ins);
inline SimCommandKind classify_sim(const CommandApdu& cmd) { return classify_sim(cmd.cla, cmd.ins); }

/// Upper-case command name ("READ BINARY"), "UNKNOWN INS=EE" for the fallback.
std::string command_name(SimCommandKind kind);

/// Whether a T=0 card should ACK to receive P3 data bytes for this INS.
/// Unknown instructions are treated as outgoing.
bool ins_expects_command_data(std::uint8_t ins);

struct ProactiveIndication {
  int pending_length = 0;
  friend bool operator==(const ProactiveIndication&, const ProactiveIndication&) = default;
};

std::optional<ProactiveIndication> detect_proactive(const ResponseApdu& resp);

/// Meaning of a status word for the SWs the toolkit branches on; raw
/// upper-case hex ("6700") for everything else.
std::string status_meaning(std::uint16_t sw);

/// Symbolic name of a well-known file ID ("MF", "EF_IMSI"), empty if unknown.
std::string file_name(std::uint16_t fid);

/// One-line summary, format `<KIND>[ <detail>] → <result>`; the arrow and
/// result are omitted when there is no response.
std::string describe(const CommandApdu& cmd, const ResponseApdu* resp = nullptr);
inline std::string describe(const CommandApdu& cmd, const ResponseApdu& resp) { return describe(cmd, &resp); }

/// describe() on raw bytes; unparsable commands render as `MALFORMED <hex>`.
std::string describe_raw(ByteView command, const Bytes* response = nullptr);

} // namespace simtunnel::apdu
