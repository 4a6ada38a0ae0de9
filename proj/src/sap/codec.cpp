#include "simtunnel/sap/codec.hpp"

#include <functional>

namespace simtunnel::sap {

const Bytes* SapMessage::find(std::uint8_t param_id) const {
  for (const auto& p : params)
    if (p.id == param_id) return &p.value;
  return nullptr;
}

std::optional<std::uint8_t> SapMessage::byte(std::uint8_t param_id) const {
  const Bytes* v = find(param_id);
  if (!v || v->empty()) return std::nullopt;
  return (*v)[0];
}

SapMessage make(std::uint8_t id, std::vector<SapParameter> params) { return SapMessage{id, std::move(params)}; }

SapParameter u8_param(std::uint8_t id, std::uint8_t v) { return {id, Bytes{v}}; }

SapParameter u16_param(std::uint8_t id, std::uint16_t v) {
  return {id, Bytes{static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)}};
}

const char* msg_name(std::uint8_t id) {
  static const char* const kNames[] = {
      "CONNECT_REQ",        "CONNECT_RESP",       "DISCONNECT_REQ",    "DISCONNECT_RESP",
      "DISCONNECT_IND",     "TRANSFER_APDU_REQ",  "TRANSFER_APDU_RESP", "TRANSFER_ATR_REQ",
      "TRANSFER_ATR_RESP",  "POWER_SIM_OFF_REQ",  "POWER_SIM_OFF_RESP", "POWER_SIM_ON_REQ",
      "POWER_SIM_ON_RESP",  "RESET_SIM_REQ",      "RESET_SIM_RESP",     "TRANSFER_CARD_READER_STATUS_REQ",
      "TRANSFER_CARD_READER_STATUS_RESP", "STATUS_IND", "ERROR_RESP", "SET_TRANSPORT_PROTOCOL_REQ",
      "SET_TRANSPORT_PROTOCOL_RESP"};
  return id <= msg::kLast ? kNames[id] : "UNKNOWN";
}

Bytes encode_sap(const SapMessage& m) {
  if (m.params.size() > 255) throw SapError(SapErrc::Oversized, "more than 255 parameters");
  Bytes out{m.id, static_cast<std::uint8_t>(m.params.size()), 0, 0};
  for (const auto& p : m.params) {
    if (p.value.size() > 0xFFFF) throw SapError(SapErrc::Oversized, "parameter value above 65535 octets");
    const auto n = p.value.size();
    out.push_back(p.id);
    out.push_back(0);
    out.push_back(static_cast<std::uint8_t>(n >> 8));
    out.push_back(static_cast<std::uint8_t>(n));
    out.insert(out.end(), p.value.begin(), p.value.end());
    out.resize(out.size() + (4 - n % 4) % 4, 0);
  }
  return out;
}

namespace {

using ReadFn = std::function<void(std::span<std::uint8_t>)>;

SapMessage parse(const ReadFn& read) {
  std::uint8_t header[4];
  read(header);
  SapMessage m;
  m.id = header[0];
  bool bad_padding = false;
  for (int i = 0; i < header[1]; ++i) {
    std::uint8_t ph[4];
    read(ph);
    SapParameter p;
    p.id = ph[0];
    p.value.resize((std::size_t{ph[2]} << 8) | ph[3]);
    if (!p.value.empty()) read(p.value);
    std::uint8_t pad[3] = {0, 0, 0};
    const std::size_t npad = (4 - p.value.size() % 4) % 4;
    if (npad) read(std::span<std::uint8_t>(pad, npad));
    for (std::size_t k = 0; k < npad; ++k) bad_padding |= pad[k] != 0;
    m.params.push_back(std::move(p));
  }
  if (m.id > msg::kLast) throw SapError(SapErrc::UnknownMsgId, "unknown SAP message id " + to_hex(Bytes{m.id}));
  if (bad_padding) throw SapError(SapErrc::PaddingNonZero, "non-zero parameter padding");
  return m;
}

} // namespace

SapMessage decode_sap(ByteView buf, std::size_t& consumed) {
  consumed = 0;
  std::size_t pos = 0;
  const ReadFn read = [&](std::span<std::uint8_t> out) {
    if (buf.size() - pos < out.size()) throw SapError(SapErrc::Truncated, "SAP message truncated");
    std::copy_n(buf.begin() + static_cast<std::ptrdiff_t>(pos), out.size(), out.begin());
    pos += out.size();
  };
  try {
    SapMessage m = parse(read);
    consumed = pos;
    return m;
  } catch (const SapError& e) {
    if (e.code != SapErrc::Truncated) consumed = pos;
    throw;
  }
}

SapMessage read_sap(ByteStream& stream) {
  bool started = false;
  const ReadFn read = [&](std::span<std::uint8_t> out) {
    try {
      stream.read_exact(out);
    } catch (const StreamClosed& e) {
      if (!started && e.bytes_read == 0) throw;
      throw SapError(SapErrc::Truncated, "stream closed inside a SAP message");
    }
    started = true;
  };
  return parse(read);
}

} // namespace simtunnel::sap
