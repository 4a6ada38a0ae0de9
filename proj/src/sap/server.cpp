#include "simtunnel/sap/server.hpp"

#include <spdlog/spdlog.h>

namespace simtunnel::sap {
namespace {

SapMessage error_resp() { return make(msg::kErrorResp); }

SapMessage result_only(std::uint8_t id, ResultCode rc) {
  return make(id, {u8_param(param::kResultCode, static_cast<std::uint8_t>(rc))});
}

} // namespace

SapServer::SapServer(SimBackend& backend, SapServerOptions options) : backend_(backend), options_(options) {}

std::vector<Bytes> SapServer::apdus() const {
  std::lock_guard lock(mu_);
  return apdus_;
}

void SapServer::send(const SapMessage& m) {
  ByteStream* s = nullptr;
  {
    std::lock_guard lock(mu_);
    s = stream_;
  }
  if (!s) return;
  if (m.id == msg::kErrorResp) ++errors_;
  std::lock_guard lock(write_mu_);
  s->write_all(encode_sap(m));
}

void SapServer::notify_status(StatusChange change) {
  bool active = false;
  {
    std::lock_guard lock(mu_);
    switch (change) {
    case StatusChange::CardRemoved:
    case StatusChange::CardNotAccessible:
    case StatusChange::UnknownError:
      card_present_ = false;
      break;
    default:
      card_present_ = true;
    }
    active = stream_ && connected_;
  }
  if (active) send(make(msg::kStatusInd, {u8_param(param::kStatusChange, static_cast<std::uint8_t>(change))}));
}

SapMessage SapServer::handle(const SapMessage& m) {
  bool present = false;
  {
    std::lock_guard lock(mu_);
    if (m.id != msg::kConnectReq && !connected_) return error_resp();
    present = card_present_;
  }

  switch (m.id) {
  case msg::kConnectReq: {
    const Bytes* size = m.find(param::kMaxMsgSize);
    if (!size || size->size() != 2) return error_resp();
    const std::uint16_t want = be16((*size)[0], (*size)[1]);
    if (want > options_.max_msg_size) {
      return make(msg::kConnectResp,
                  {u8_param(param::kConnectionStatus, static_cast<std::uint8_t>(ConnectionStatus::MaxMsgSizeUnsupported)),
                   u16_param(param::kMaxMsgSize, options_.max_msg_size)});
    }
    if (want < options_.min_msg_size) {
      return make(msg::kConnectResp,
                  {u8_param(param::kConnectionStatus, static_cast<std::uint8_t>(ConnectionStatus::MaxMsgSizeTooSmall)),
                   u16_param(param::kMaxMsgSize, options_.min_msg_size)});
    }
    std::lock_guard lock(mu_);
    connected_ = true;
    return make(msg::kConnectResp, {u8_param(param::kConnectionStatus, static_cast<std::uint8_t>(ConnectionStatus::Ok))});
  }

  case msg::kTransferAtrReq:
    if (!present) return result_only(msg::kTransferAtrResp, ResultCode::CardRemoved);
    try {
      return make(msg::kTransferAtrResp, {u8_param(param::kResultCode, 0), {param::kAtr, backend_.atr()}});
    } catch (const BackendError&) {
      return result_only(msg::kTransferAtrResp, ResultCode::DataNotAvailable);
    }

  case msg::kTransferApduReq: {
    const Bytes* cmd = m.find(param::kCommandApdu);
    if (!cmd) cmd = m.find(param::kCommandApdu7816);
    if (!cmd) return error_resp();
    if (!present) return result_only(msg::kTransferApduResp, ResultCode::CardRemoved);
    {
      std::lock_guard lock(mu_);
      apdus_.push_back(*cmd);
    }
    try {
      return make(msg::kTransferApduResp, {u8_param(param::kResultCode, 0), {param::kResponseApdu, backend_.transmit(*cmd)}});
    } catch (const BackendError& e) {
      return result_only(msg::kTransferApduResp,
                         e.code == BackendErrc::Unavailable ? ResultCode::CardNotAccessible : ResultCode::NoReason);
    }
  }

  case msg::kResetSimReq:
    if (!present) return result_only(msg::kResetSimResp, ResultCode::CardRemoved);
    backend_.reset();
    return result_only(msg::kResetSimResp, ResultCode::Ok);

  case msg::kPowerSimOffReq:
  case msg::kPowerSimOnReq:
  case msg::kTransferCardReaderStatusReq:
  case msg::kSetTransportProtocolReq:
    return result_only(static_cast<std::uint8_t>(m.id + 1), ResultCode::NotSupported);

  default:
    return error_resp();
  }
}

void SapServer::serve(ByteStream& stream) {
  {
    std::lock_guard lock(mu_);
    stream_ = &stream;
    connected_ = false;
  }
  for (;;) {
    SapMessage m;
    try {
      m = read_sap(stream);
    } catch (const StreamClosed&) {
      break;
    } catch (const SapError& e) {
      if (e.code == SapErrc::Truncated) break;
      spdlog::warn("sap server: {}", e.what());
      send(error_resp());
      continue;
    } catch (const std::exception&) {
      break;
    }

    try {
      if (m.id == msg::kDisconnectReq) {
        send(make(msg::kDisconnectResp));
        break;
      }
      const SapMessage reply = handle(m);
      send(reply);
      if (reply.id == msg::kConnectResp && reply.byte(param::kConnectionStatus) == 0) {
        bool present = false;
        {
          std::lock_guard lock(mu_);
          present = card_present_;
        }
        const auto change = present ? StatusChange::CardReset : StatusChange::CardRemoved;
        send(make(msg::kStatusInd, {u8_param(param::kStatusChange, static_cast<std::uint8_t>(change))}));
      }
    } catch (const std::exception& e) {
      spdlog::warn("sap server: session ended: {}", e.what());
      break;
    }
  }
  {
    std::lock_guard lock(mu_);
    stream_ = nullptr;
    connected_ = false;
  }
  stream.close();
}

void SapServer::serve_tcp(TcpListener& listener, const std::atomic<bool>& stop) {
  while (!stop) {
    auto stream = listener.accept(std::chrono::milliseconds(200));
    if (!stream) continue;
    spdlog::info("sap server: client connected");
    serve(*stream);
    spdlog::info("sap server: session closed");
  }
}

} // namespace simtunnel::sap
