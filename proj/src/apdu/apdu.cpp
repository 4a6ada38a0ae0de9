#include "simtunnel/apdu/apdu.hpp"

#include <array>
#include <cstdio>
#include <utility>

namespace simtunnel::apdu {
namespace {

std::string hex4(std::uint16_t v) {
  char buf[8];
  std::snprintf(buf, sizeof(buf), "%04X", v);
  return buf;
}

std::string hex2(std::uint8_t v) {
  char buf[4];
  std::snprintf(buf, sizeof(buf), "%02X", v);
  return buf;
}

constexpr std::array<std::pair<std::uint16_t, const char*>, 12> kFiles{{
    {0x3F00, "MF"},
    {0x7F10, "DF_TELECOM"},
    {0x7F20, "DF_GSM"},
    {0x7FFF, "ADF_USIM"},
    {0x2FE2, "EF_ICCID"},
    {0x2F00, "EF_DIR"},
    {0x6F07, "EF_IMSI"},
    {0x6FAD, "EF_AD"},
    {0x6F7E, "EF_LOCI"},
    {0x6F20, "EF_KC"},
    {0x6F46, "EF_SPN"},
    {0x6F40, "EF_MSISDN"},
}};

} // namespace

Bytes ResponseApdu::bytes() const {
  Bytes out = data;
  out.push_back(sw1);
  out.push_back(sw2);
  return out;
}

ResponseApdu ResponseApdu::from_bytes(ByteView raw) {
  if (raw.size() < 2) throw ApduError(ApduErrc::Truncated, "response shorter than a status word");
  ResponseApdu r;
  r.data.assign(raw.begin(), raw.end() - 2);
  r.sw1 = raw[raw.size() - 2];
  r.sw2 = raw[raw.size() - 1];
  return r;
}

CommandApdu parse_command(ByteView raw) {
  if (raw.size() < 4) throw ApduError(ApduErrc::Truncated, "APDU shorter than 4-byte header");
  CommandApdu cmd{raw[0], raw[1], raw[2], raw[3], {}, std::nullopt};
  if (raw.size() == 4) return cmd;
  if (raw.size() == 5) {
    cmd.le = raw[4] == 0 ? 256 : raw[4];
    return cmd;
  }
  std::size_t lc = raw[4];
  if (lc == 0) throw ApduError(ApduErrc::ExtendedNotSupported, "extended-length APDU not supported");
  if (raw.size() == 5 + lc) {
    cmd.data.assign(raw.begin() + 5, raw.end());
  } else if (raw.size() == 6 + lc) {
    cmd.data.assign(raw.begin() + 5, raw.end() - 1);
    cmd.le = raw.back() == 0 ? 256 : raw.back();
  } else {
    throw ApduError(ApduErrc::LcMismatch, "Lc=" + std::to_string(lc) + " does not match APDU length " +
                                               std::to_string(raw.size()));
  }
  return cmd;
}

Bytes serialize_command(const CommandApdu& cmd) {
  if (cmd.data.size() > 255) throw ApduError(ApduErrc::ExtendedNotSupported, "Lc > 255");
  if (cmd.le && (*cmd.le < 1 || *cmd.le > 256)) throw ApduError(ApduErrc::Invalid, "Le out of range");
  Bytes out{cmd.cla, cmd.ins, cmd.p1, cmd.p2};
  if (!cmd.data.empty()) {
    out.push_back(static_cast<std::uint8_t>(cmd.data.size()));
    append(out, cmd.data);
  }
  if (cmd.le) out.push_back(static_cast<std::uint8_t>(*cmd.le & 0xFF));
  return out;
}

SimCommandKind classify_sim(std::uint8_t /*cla*/, std::uint8_t code) {
  switch (code) {
  case ins::kSelect: return {SimCommand::Select, code};
  case ins::kReadBinary: return {SimCommand::ReadBinary, code};
  case ins::kUpdateBinary: return {SimCommand::UpdateBinary, code};
  case ins::kReadRecord: return {SimCommand::ReadRecord, code};
  case ins::kUpdateRecord: return {SimCommand::UpdateRecord, code};
  case ins::kStatus: return {SimCommand::Status, code};
  case ins::kGetResponse: return {SimCommand::GetResponse, code};
  case ins::kFetch: return {SimCommand::Fetch, code};
  case ins::kTerminalResponse: return {SimCommand::TerminalResponse, code};
  case ins::kEnvelope: return {SimCommand::Envelope, code};
  case ins::kAuthenticate: return {SimCommand::Authenticate, code};
  case ins::kVerifyPin: return {SimCommand::VerifyPin, code};
  default: return {SimCommand::Unknown, code};
  }
}

std::string command_name(SimCommandKind kind) {
  switch (kind.kind) {
  case SimCommand::Select: return "SELECT";
  case SimCommand::ReadBinary: return "READ BINARY";
  case SimCommand::UpdateBinary: return "UPDATE BINARY";
  case SimCommand::ReadRecord: return "READ RECORD";
  case SimCommand::UpdateRecord: return "UPDATE RECORD";
  case SimCommand::Status: return "STATUS";
  case SimCommand::GetResponse: return "GET RESPONSE";
  case SimCommand::Fetch: return "FETCH";
  case SimCommand::TerminalResponse: return "TERMINAL RESPONSE";
  case SimCommand::Envelope: return "ENVELOPE";
  case SimCommand::Authenticate: return "AUTHENTICATE";
  case SimCommand::VerifyPin: return "VERIFY PIN";
  case SimCommand::Unknown: break;
  }
  return "UNKNOWN INS=" + hex2(kind.ins);
}

bool ins_expects_command_data(std::uint8_t code) {
  switch (code) {
  case ins::kSelect:
  case ins::kUpdateBinary:
  case ins::kUpdateRecord:
  case ins::kTerminalResponse:
  case ins::kEnvelope:
  case ins::kAuthenticate:
  case ins::kVerifyPin:
  case 0x10: // TERMINAL PROFILE
  case 0xA2: // SEARCH RECORD
  case 0x24: // CHANGE PIN
  case 0x26: // DISABLE PIN
  case 0x28: // ENABLE PIN
  case 0x2C: // UNBLOCK PIN
  case 0x32: // INCREASE
    return true;
  default:
    return false;
  }
}

std::optional<ProactiveIndication> detect_proactive(const ResponseApdu& resp) {
  if (resp.sw1 != 0x91) return std::nullopt;
  return ProactiveIndication{resp.sw2};
}

std::string status_meaning(std::uint16_t sw) {
  std::uint8_t sw1 = sw >> 8, sw2 = sw & 0xFF;
  switch (sw) {
  case 0x9000: return "OK";
  case 0x6D00: return "instruction not supported";
  case 0x6E00: return "class not supported";
  case 0x6A82: return "file not found";
  case 0x6982: return "security status not satisfied";
  case 0x6983: return "authentication method blocked";
  default: break;
  }
  switch (sw1) {
  case 0x61: return "response pending (" + std::to_string(sw2 ? sw2 : 256) + " bytes)";
  case 0x6C: return "wrong Le (exact " + std::to_string(sw2 ? sw2 : 256) + ")";
  case 0x91: return "OK, proactive command pending (" + std::to_string(sw2) + " bytes)";
  default: return hex4(sw);
  }
}

std::string file_name(std::uint16_t fid) {
  for (auto [id, name] : kFiles)
    if (id == fid) return name;
  return {};
}

std::string describe(const CommandApdu& cmd, const ResponseApdu* resp) {
  auto kind = classify_sim(cmd);
  std::string line = command_name(kind);
  std::string detail;
  auto offset = [&] {
    int off = ((cmd.p1 & 0x7F) << 8) | cmd.p2;
    return off ? "offset=" + std::to_string(off) + " " : std::string();
  };

  switch (kind.kind) {
  case SimCommand::Select:
    if (cmd.data.size() == 2) {
      auto fid = be16(cmd.data[0], cmd.data[1]);
      auto name = file_name(fid);
      detail = name.empty() ? hex4(fid) : name + " (" + hex4(fid) + ")";
    } else if (!cmd.data.empty()) {
      detail = "path=" + to_hex(cmd.data);
    }
    break;
  case SimCommand::ReadBinary:
    detail = offset() + (cmd.le ? "le=" + std::to_string(*cmd.le) : "no le");
    break;
  case SimCommand::UpdateBinary:
    detail = offset() + "lc=" + std::to_string(cmd.data.size());
    break;
  case SimCommand::ReadRecord:
    detail = "rec=" + std::to_string(cmd.p1) + (cmd.le ? " le=" + std::to_string(*cmd.le) : "");
    break;
  case SimCommand::UpdateRecord:
    detail = "rec=" + std::to_string(cmd.p1) + " lc=" + std::to_string(cmd.data.size());
    break;
  default:
    if (!cmd.data.empty()) detail = "lc=" + std::to_string(cmd.data.size());
    if (cmd.le) detail += (detail.empty() ? "" : " ") + std::string("le=") + std::to_string(*cmd.le);
    break;
  }
  if (!detail.empty()) line += " " + detail;
  if (!resp) return line;

  line += " → ";
  if (!resp->data.empty()) line += std::to_string(resp->data.size()) + " bytes, ";
  line += status_meaning(resp->sw());
  return line;
}

std::string describe_raw(ByteView command, const Bytes* response) {
  std::optional<CommandApdu> cmd;
  try {
    cmd = parse_command(command);
  } catch (const ApduError&) {
  }
  std::optional<ResponseApdu> resp;
  if (response && response->size() >= 2) resp = ResponseApdu::from_bytes(*response);

  if (cmd) return describe(*cmd, resp ? &*resp : nullptr) + (response && !resp ? " → no status" : "");
  std::string line = "MALFORMED " + to_hex(command);
  if (resp) {
    line += " → ";
    if (!resp->data.empty()) line += std::to_string(resp->data.size()) + " bytes, ";
    line += status_meaning(resp->sw());
  } else if (response) {
    line += " → no status";
  }
  return line;
}

} // namespace simtunnel::apdu
