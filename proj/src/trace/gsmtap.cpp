#include "simtunnel/trace/gsmtap.hpp"

#include <arpa/inet.h>
#include <netdb.h>
#include <sys/socket.h>
#include <unistd.h>

#include <cstring>

namespace simtunnel::trace {

Bytes gsmtap_header(bool uplink) {
  const std::uint16_t arfcn = uplink ? kGsmtapArfcnUplink : 0;
  return Bytes{
      kGsmtapVersion, kGsmtapHeaderWords, kGsmtapTypeSim,
      0x00,                                                                    // timeslot
      static_cast<std::uint8_t>(arfcn >> 8), static_cast<std::uint8_t>(arfcn), // arfcn
      0x00, 0x00,                                                              // signal dBm, SNR
      0x00, 0x00, 0x00, 0x00,                                                  // frame number
      kGsmtapSimApdu,
      0x00, 0x00, 0x00, // antenna, sub-slot, reserved
  };
}

Bytes gsmtap_datagram(ByteView apdu, bool uplink) {
  Bytes out = gsmtap_header(uplink);
  append(out, apdu);
  return out;
}

UdpSender::UdpSender(const Endpoint& dest) {
  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_DGRAM;
  addrinfo* res = nullptr;
  const std::string port = std::to_string(dest.port);
  if (getaddrinfo(dest.host.c_str(), port.c_str(), &hints, &res) != 0 || !res)
    throw NetError("cannot resolve " + dest.to_string());
  fd_ = ::socket(res->ai_family, res->ai_socktype, 0);
  if (fd_ < 0) {
    freeaddrinfo(res);
    throw NetError(std::string("socket: ") + std::strerror(errno));
  }
  // Connected UDP so ICMP unreachable surfaces as a send error.
  int rc = ::connect(fd_, res->ai_addr, res->ai_addrlen);
  freeaddrinfo(res);
  if (rc != 0) {
    ::close(fd_);
    throw NetError("connect " + dest.to_string() + ": " + std::strerror(errno));
  }
}

UdpSender::~UdpSender() {
  if (fd_ >= 0) ::close(fd_);
}

bool UdpSender::send(ByteView datagram) {
  return ::send(fd_, datagram.data(), datagram.size(), MSG_DONTWAIT | MSG_NOSIGNAL) ==
         static_cast<ssize_t>(datagram.size());
}

void GsmtapExporter::emit(ByteView apdu, bool uplink) {
  bool ok = false;
  try {
    ok = sender_ && sender_->send(gsmtap_datagram(apdu, uplink));
  } catch (...) {
    ok = false;
  }
  if (ok) ++sent_;
  else ++drops_;
}

void GsmtapExporter::append(const TraceRecord& r) {
  emit(r.command, true);
  emit(r.response, false);
}

} // namespace simtunnel::trace
