#include "simtunnel/relay/frame.hpp"

#include <random>

namespace simtunnel::relay {

bool is_known_type(std::uint8_t t) { return t >= 0x01 && t <= 0x09; }

const char* type_name(MsgType t) {
  switch (t) {
  case MsgType::Hello:
    return "HELLO";
  case MsgType::AtrRequest:
    return "ATR_REQUEST";
  case MsgType::AtrResponse:
    return "ATR_RESPONSE";
  case MsgType::ApduRequest:
    return "APDU_REQUEST";
  case MsgType::ApduResponse:
    return "APDU_RESPONSE";
  case MsgType::Reset:
    return "RESET";
  case MsgType::Error:
    return "ERROR";
  case MsgType::Ping:
    return "PING";
  case MsgType::Pong:
    return "PONG";
  }
  return "?";
}

Bytes encode_message(const RelayMessage& m) {
  if (m.payload.size() > kMaxPayload) throw FrameError(FrameErrc::OversizedFrame, "payload exceeds 2^24-1 octets");
  const auto n = static_cast<std::uint32_t>(m.payload.size());
  Bytes out;
  out.reserve(5 + m.payload.size());
  out.push_back(static_cast<std::uint8_t>(m.type));
  for (int shift = 24; shift >= 0; shift -= 8) out.push_back(static_cast<std::uint8_t>(n >> shift));
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

namespace {

std::uint32_t check_header(ByteView h) {
  if (!is_known_type(h[0])) throw FrameError(FrameErrc::UnknownType, "unknown message type " + to_hex(h.first(1)));
  const std::uint32_t n = (std::uint32_t{h[1]} << 24) | (std::uint32_t{h[2]} << 16) | (std::uint32_t{h[3]} << 8) | h[4];
  if (n > kMaxPayload) throw FrameError(FrameErrc::OversizedFrame, "declared length " + std::to_string(n));
  return n;
}

} // namespace

RelayMessage decode_message(ByteView buf, std::size_t& consumed) {
  if (buf.empty()) throw FrameError(FrameErrc::TruncatedStream, "empty buffer");
  if (!is_known_type(buf[0])) throw FrameError(FrameErrc::UnknownType, "unknown message type " + to_hex(buf.first(1)));
  if (buf.size() < 5) throw FrameError(FrameErrc::TruncatedStream, "short frame header");
  const std::uint32_t n = check_header(buf.first(5));
  if (buf.size() < 5 + std::size_t{n}) throw FrameError(FrameErrc::TruncatedStream, "short frame payload");
  consumed = 5 + std::size_t{n};
  return RelayMessage{static_cast<MsgType>(buf[0]), Bytes(buf.begin() + 5, buf.begin() + 5 + n)};
}

RelayMessage read_message(ByteStream& stream) {
  std::array<std::uint8_t, 5> header{};
  try {
    stream.read_exact(header);
  } catch (const StreamClosed& e) {
    if (e.bytes_read == 0) throw;
    throw FrameError(FrameErrc::TruncatedStream, "stream closed inside a frame header");
  }
  const std::uint32_t n = check_header(header);
  RelayMessage m{static_cast<MsgType>(header[0]), Bytes(n)};
  try {
    if (n) stream.read_exact(m.payload);
  } catch (const StreamClosed&) {
    throw FrameError(FrameErrc::TruncatedStream, "stream closed inside a frame payload");
  }
  return m;
}

Bytes encode_hello(const Hello& h) {
  Bytes out(18);
  out[0] = h.version;
  out[1] = static_cast<std::uint8_t>(h.role);
  std::copy(h.session_id.begin(), h.session_id.end(), out.begin() + 2);
  return out;
}

Hello decode_hello(ByteView payload) {
  if (payload.size() < 18) throw FrameError(FrameErrc::TruncatedStream, "HELLO shorter than 18 octets");
  Hello h;
  h.version = payload[0];
  h.role = static_cast<Role>(payload[1]);
  std::copy(payload.begin() + 2, payload.begin() + 18, h.session_id.begin());
  return h;
}

SessionId random_session_id() {
  static thread_local std::random_device rd;
  SessionId id{};
  for (auto& b : id) b = static_cast<std::uint8_t>(rd());
  return id;
}

} // namespace simtunnel::relay
