#include "simtunnel/iso7816/atr.hpp"

#include <sstream>

#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::iso7816 {
namespace {

constexpr InterfaceKind kKinds[] = {InterfaceKind::TA, InterfaceKind::TB, InterfaceKind::TC, InterfaceKind::TD};

int presence_count(std::uint8_t y) {
  int n = 0;
  for (int bit = 4; bit < 8; ++bit) n += (y >> bit) & 1;
  return n;
}

const char* kind_name(InterfaceKind k) {
  switch (k) {
  case InterfaceKind::TA: return "TA";
  case InterfaceKind::TB: return "TB";
  case InterfaceKind::TC: return "TC";
  case InterfaceKind::TD: return "TD";
  }
  return "?";
}

} // namespace

std::optional<std::uint8_t> Atr::find(int level, InterfaceKind kind) const {
  for (auto& ib : interface_bytes)
    if (ib.level == level && ib.kind == kind) return ib.value;
  return std::nullopt;
}

std::optional<std::uint8_t> Atr::find_for_protocol(int t, InterfaceKind kind) const {
  // Group i+1 is introduced by TD_i whose low nibble is its protocol.
  for (auto& td : interface_bytes) {
    if (td.kind != InterfaceKind::TD || (td.value & 0x0F) != t || td.level < (t == 1 ? 2 : 1)) continue;
    if (auto v = find(td.level + 1, kind)) return v;
  }
  return std::nullopt;
}

FiDi Atr::fidi() const {
  if (auto ta1 = find(1, InterfaceKind::TA)) return lookup_fidi(*ta1);
  return {};
}

ProtocolParams Atr::params() const {
  ProtocolParams p;
  auto f = fidi();
  p.fi = f.fi;
  p.di = f.di;
  p.active_protocol = offered_protocols.empty() ? Protocol::T0 : *offered_protocols.begin();
  if (auto tc2 = find(2, InterfaceKind::TC)) p.wi = *tc2;
  if (auto ifsc = find_for_protocol(1, InterfaceKind::TA)) p.ifsc = *ifsc;
  if (auto tb = find_for_protocol(1, InterfaceKind::TB)) {
    p.bwi = *tb >> 4;
    p.cwi = *tb & 0x0F;
  }
  return p;
}

Atr parse_atr(ByteView raw) {
  if (raw.size() < 2) throw Iso7816Error(Errc::TruncatedAtr, "ATR shorter than TS+T0");
  Atr atr;
  if (raw[0] == 0x3B)
    atr.convention = Convention::Direct;
  else if (raw[0] == 0x3F)
    atr.convention = Convention::Inverse;
  else
    throw Iso7816Error(Errc::UnknownConvention, "TS=" + to_hex(raw.subspan(0, 1)));

  std::size_t pos = 1;
  const std::size_t historical_len = raw[1] & 0x0F;
  std::uint8_t y = raw[1] & 0xF0;
  bool needs_tck = false;
  for (int level = 1; y; ++level) {
    if (pos + static_cast<std::size_t>(presence_count(y)) >= raw.size())
      throw Iso7816Error(Errc::TruncatedAtr, "interface bytes cut short at level " + std::to_string(level));
    std::uint8_t next_y = 0;
    for (int i = 0; i < 4; ++i) {
      if (!(y & (0x10 << i))) continue;
      std::uint8_t v = raw[++pos];
      atr.interface_bytes.push_back({level, kKinds[i], v});
      if (kKinds[i] == InterfaceKind::TD) {
        int t = v & 0x0F;
        atr.indicated_types.push_back(t);
        if (t == 0) atr.offered_protocols.insert(Protocol::T0);
        if (t == 1) atr.offered_protocols.insert(Protocol::T1);
        if (t != 0) needs_tck = true;
        next_y = v & 0xF0;
      }
    }
    y = next_y;
  }
  if (atr.offered_protocols.empty()) atr.offered_protocols.insert(Protocol::T0);

  std::size_t remaining = raw.size() - pos - 1;
  if (remaining != historical_len + (needs_tck ? 1 : 0)) {
    if (needs_tck && remaining == historical_len)
      throw Iso7816Error(Errc::TruncatedAtr, "TCK missing");
    throw Iso7816Error(Errc::HistoricalLengthMismatch,
                       "expected " + std::to_string(historical_len) + " historical bytes");
  }
  atr.historical_bytes.assign(raw.begin() + static_cast<std::ptrdiff_t>(pos + 1),
                              raw.begin() + static_cast<std::ptrdiff_t>(pos + 1 + historical_len));
  if (needs_tck) {
    atr.tck = raw.back();
    if (xor_fold(raw.subspan(1)) != 0) throw Iso7816Error(Errc::BadTck, "checksum mismatch");
  }
  // Reject RFU codes early so every parsed ATR yields usable parameters.
  atr.fidi();
  return atr;
}

Bytes build_atr(const ProtocolParams& params, ByteView historical) {
  if (historical.size() > 15) throw Iso7816Error(Errc::HistoricalTooLong, std::to_string(historical.size()));
  params.validate();

  const bool t1 = params.active_protocol == Protocol::T1;
  const bool custom_fidi = params.fidi() != FiDi{};
  const bool custom_wi = !t1 && params.wi != 10;
  const bool custom_t1 = t1 && (params.ifsc != 32 || params.bwi != 4 || params.cwi != 13);
  const bool custom_ifsc = t1 && params.ifsc != 32;
  const bool custom_bwt = t1 && (params.bwi != 4 || params.cwi != 13);

  Bytes out{0x3B, 0x00};
  std::uint8_t y1 = 0;
  if (custom_fidi) y1 |= 0x10;
  if (t1 || custom_wi) y1 |= 0x80;
  out[1] = static_cast<std::uint8_t>(y1 | historical.size());
  if (custom_fidi) out.push_back(encode_fidi(params.fidi()));

  if (t1) {
    out.push_back(static_cast<std::uint8_t>((custom_t1 ? 0x80 : 0x00) | 0x01)); // TD1
    if (custom_t1) {
      out.push_back(static_cast<std::uint8_t>((custom_ifsc ? 0x10 : 0) | (custom_bwt ? 0x20 : 0) | 0x01)); // TD2
      if (custom_ifsc) out.push_back(static_cast<std::uint8_t>(params.ifsc));                         // TA3
      if (custom_bwt) out.push_back(static_cast<std::uint8_t>((params.bwi << 4) | params.cwi));      // TB3
    }
  } else if (custom_wi) {
    out.push_back(0x40); // TD1: TC2 follows, T=0
    out.push_back(static_cast<std::uint8_t>(params.wi));
  }
  append(out, historical);
  if (t1) out.push_back(xor_fold(ByteView(out).subspan(1)));
  return out;
}

Bytes receive_atr(HalfDuplexChannel& channel, Deadline deadline) {
  auto need = [&](std::size_t n) {
    auto b = channel.receive(n, deadline);
    if (!b) throw Iso7816Error(Errc::Timeout, "waiting for ATR");
    return *b;
  };
  Bytes atr = need(2);
  std::uint8_t y = atr[1] & 0xF0;
  std::size_t historical = atr[1] & 0x0F;
  bool tck = false;
  while (y) {
    Bytes group = need(static_cast<std::size_t>(presence_count(y)));
    append(atr, group);
    if (y & 0x80) {
      std::uint8_t td = group.back();
      if ((td & 0x0F) != 0) tck = true;
      y = td & 0xF0;
    } else {
      y = 0;
    }
  }
  std::size_t rest = historical + (tck ? 1 : 0);
  if (rest) append(atr, need(rest));
  return atr;
}

std::string describe_atr(const Atr& atr) {
  std::ostringstream os;
  os << "convention: " << (atr.convention == Convention::Direct ? "direct" : "inverse") << "\n";
  os << "protocols:";
  for (auto p : atr.offered_protocols) os << (p == Protocol::T0 ? " T=0" : " T=1");
  os << "\n";
  for (auto& ib : atr.interface_bytes) {
    os << kind_name(ib.kind) << ib.level << ": " << to_spaced_hex(ByteView(&ib.value, 1)) << "\n";
  }
  auto f = atr.fidi();
  os << "Fi/Di: " << f.fi << "/" << f.di << "\n";
  os << "historical bytes: " << (atr.historical_bytes.empty() ? "(none)" : to_spaced_hex(atr.historical_bytes)) << "\n";
  if (atr.tck)
    os << "TCK: " << to_spaced_hex(ByteView(&*atr.tck, 1)) << " ok\n";
  else
    os << "TCK: absent\n";
  return os.str();
}

} // namespace simtunnel::iso7816
