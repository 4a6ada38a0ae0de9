#include "simtunnel/modem/virtual_modem.hpp"

#include "simtunnel/iso7816/errors.hpp"
#include "simtunnel/iso7816/pps.hpp"

namespace simtunnel::modem {

using namespace iso7816;

VirtualModem::VirtualModem(HalfDuplexChannel& channel, ModemOptions options)
    : channel_(channel), options_(std::move(options)) {}

const Atr& VirtualModem::power_on() {
  atr_raw_ = receive_atr(channel_, deadline_in(options_.atr_timeout));
  atr_ = parse_atr(atr_raw_);
  params_ = atr_.params();
  if (options_.pps) params_ = pps_exchange(*options_.pps, channel_, PpsSide::Initiator);
  t0_.reset();
  t1_.reset();
  if (params_.active_protocol == Protocol::T1) {
    t1_.emplace(channel_, T1Role::Terminal, params_);
  } else {
    t0_.emplace(channel_, params_);
  }
  return atr_;
}

apdu::ResponseApdu VirtualModem::exchange(const apdu::CommandApdu& cmd) {
  if (t1_) return t1_->exchange(cmd);
  if (t0_) return t0_->exchange(cmd);
  throw Iso7816Error(Errc::ProtocolViolation, "exchange before power_on");
}

Bytes VirtualModem::transmit(const Bytes& command) { return exchange(apdu::parse_command(command)).bytes(); }

int VirtualModem::waits_observed() const {
  if (t1_) return t1_->wtx_requests();
  if (t0_) return t0_->nulls_received();
  return 0;
}

} // namespace simtunnel::modem
