#include "simtunnel/iso7816/pps.hpp"

#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::iso7816 {
namespace {

Bytes read_pps(HalfDuplexChannel& channel, Deadline deadline, std::optional<std::uint8_t> first_byte) {
  auto need = [&](std::size_t n) {
    auto b = channel.receive(n, deadline);
    if (!b) throw Iso7816Error(Errc::Timeout, "waiting for PPS");
    return *b;
  };
  Bytes raw;
  raw.push_back(first_byte ? *first_byte : need(1)[0]);
  if (raw[0] != 0xFF) throw Iso7816Error(Errc::ProtocolViolation, "PPSS is not FF");
  raw.push_back(need(1)[0]);
  std::uint8_t pps0 = raw[1];
  std::size_t optional_bytes = ((pps0 >> 4) & 1) + ((pps0 >> 5) & 1) + ((pps0 >> 6) & 1);
  append(raw, need(optional_bytes + 1));
  return raw;
}

ProtocolParams apply(ProtocolParams base, const PpsFrame& f) {
  base.active_protocol = f.protocol;
  FiDi fidi = f.pps1 ? lookup_fidi(*f.pps1) : FiDi{};
  base.fi = fidi.fi;
  base.di = fidi.di;
  return base;
}

} // namespace

Bytes encode_pps(const PpsFrame& frame) {
  Bytes out{0xFF, static_cast<std::uint8_t>(static_cast<std::uint8_t>(frame.protocol) | (frame.pps1 ? 0x10 : 0))};
  if (frame.pps1) out.push_back(*frame.pps1);
  out.push_back(xor_fold(out));
  return out;
}

PpsFrame decode_pps(ByteView raw) {
  if (raw.size() < 3 || raw[0] != 0xFF) throw Iso7816Error(Errc::ProtocolViolation, "not a PPS frame");
  if (xor_fold(raw) != 0) throw Iso7816Error(Errc::PpsChecksumError, to_hex(raw));
  std::uint8_t pps0 = raw[1];
  std::size_t expected = 3 + ((pps0 >> 4) & 1) + ((pps0 >> 5) & 1) + ((pps0 >> 6) & 1);
  if (raw.size() != expected) throw Iso7816Error(Errc::ProtocolViolation, "PPS length does not match PPS0");
  int t = pps0 & 0x0F;
  if (t > 1) throw Iso7816Error(Errc::PpsMismatch, "unsupported protocol T=" + std::to_string(t));
  PpsFrame f{static_cast<Protocol>(t), std::nullopt};
  if (pps0 & 0x10) f.pps1 = raw[2];
  return f;
}

ProtocolParams pps_exchange(const ProtocolParams& requested, HalfDuplexChannel& channel, PpsSide side,
                            Micros timeout, std::optional<std::uint8_t> first_byte) {
  requested.validate();
  if (side == PpsSide::Initiator) {
    PpsFrame req{requested.active_protocol, encode_fidi(requested.fidi())};
    channel.send(encode_pps(req));
    PpsFrame resp = decode_pps(read_pps(channel, deadline_in(timeout), std::nullopt));
    if (resp.protocol != req.protocol) throw Iso7816Error(Errc::PpsMismatch, "protocol changed");
    if (resp.pps1 && resp.pps1 != req.pps1) throw Iso7816Error(Errc::PpsMismatch, "PPS1 changed");
    return apply(requested, resp);
  }

  PpsFrame req = decode_pps(read_pps(channel, first_byte ? deadline_in(timeout) : Deadline{}, first_byte));
  if (req.protocol != requested.active_protocol)
    throw Iso7816Error(Errc::PpsMismatch, "requested protocol not offered");
  PpsFrame resp = req;
  bool acceptable_fidi = true;
  if (req.pps1) {
    try {
      auto asked = lookup_fidi(*req.pps1);
      acceptable_fidi = asked == requested.fidi() || asked == FiDi{};
    } catch (const Iso7816Error&) {
      acceptable_fidi = false;
    }
  }
  if (!acceptable_fidi) resp.pps1.reset();
  channel.send(encode_pps(resp));
  return apply(requested, resp);
}

} // namespace simtunnel::iso7816
