#include "simtunnel/sap/client.hpp"

#include <spdlog/spdlog.h>

namespace simtunnel::sap {

SapClient::SapClient(std::unique_ptr<ByteStream> transport, SapClientOptions options)
    : transport_(std::move(transport)), options_(options) {
  reader_ = std::thread([this] { reader_loop(); });
  try {
    connect();
  } catch (...) {
    transport_->close();
    reader_.join();
    throw;
  }
}

SapClient::~SapClient() {
  disconnect();
  transport_->close();
  if (reader_.joinable()) reader_.join();
}

ClientState SapClient::state() const {
  std::lock_guard lock(mu_);
  return state_;
}

bool SapClient::card_available() const {
  std::lock_guard lock(mu_);
  return card_ok_ && !closed_;
}

std::vector<SapLogEntry> SapClient::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

void SapClient::set_state(ClientState s) {
  std::lock_guard lock(mu_);
  state_ = s;
}

void SapClient::send(const SapMessage& m) {
  {
    std::lock_guard lock(mu_);
    if (closed_) throw SapClientError(ClientErrc::TransportClosed, "SAP transport closed");
    log_.push_back({true, m, state_});
  }
  try {
    transport_->write_all(encode_sap(m));
  } catch (const std::exception& e) {
    throw SapClientError(ClientErrc::TransportClosed, std::string("SAP write failed: ") + e.what());
  }
}

SapMessage SapClient::await(std::uint8_t expected) {
  std::unique_lock lock(mu_);
  if (!cv_.wait_for(lock, options_.timeout, [&] { return !inbox_.empty() || closed_; }))
    throw BackendError(BackendErrc::Timeout, std::string("no ") + msg_name(expected) + " from SAP server");
  if (inbox_.empty()) throw SapClientError(ClientErrc::TransportClosed, "SAP transport closed");
  SapMessage m = std::move(inbox_.front());
  inbox_.pop_front();
  if (m.id != expected) {
    throw SapClientError(ClientErrc::ResultError,
                         std::string("expected ") + msg_name(expected) + ", got " + msg_name(m.id));
  }
  return m;
}

void SapClient::reader_loop() {
  for (;;) {
    SapMessage m;
    try {
      m = read_sap(*transport_);
    } catch (const SapError& e) {
      if (e.code != SapErrc::Truncated) {
        spdlog::warn("sap client: ignoring message: {}", e.what());
        continue;
      }
      break;
    } catch (...) {
      break;
    }
    std::lock_guard lock(mu_);
    log_.push_back({false, m, state_});
    if (m.id == msg::kStatusInd) {
      const auto change = static_cast<StatusChange>(m.byte(param::kStatusChange).value_or(0));
      switch (change) {
      case StatusChange::CardReset:
        card_reset_seen_ = true;
        card_ok_ = true;
        break;
      case StatusChange::CardInserted:
      case StatusChange::CardRecovered:
        card_ok_ = true;
        break;
      default:
        card_ok_ = false;
      }
    } else if (m.id == msg::kDisconnectInd) {
      card_ok_ = false;
    } else {
      inbox_.push_back(std::move(m));
    }
    cv_.notify_all();
  }
  std::lock_guard lock(mu_);
  closed_ = true;
  card_ok_ = false;
  cv_.notify_all();
}

void SapClient::connect() {
  set_state(ClientState::Connecting);
  std::uint16_t size = options_.max_msg_size;
  for (int attempt = 0;; ++attempt) {
    send(make(msg::kConnectReq, {u16_param(param::kMaxMsgSize, size)}));
    const SapMessage r = await(msg::kConnectResp);
    const auto status = static_cast<ConnectionStatus>(r.byte(param::kConnectionStatus).value_or(0xFF));
    if (status == ConnectionStatus::Ok || status == ConnectionStatus::OkOngoingCall) break;
    const Bytes* offer = r.find(param::kMaxMsgSize);
    const bool negotiable =
        status == ConnectionStatus::MaxMsgSizeUnsupported || status == ConnectionStatus::MaxMsgSizeTooSmall;
    if (!negotiable || !offer || offer->size() != 2 || attempt > 0)
      throw SapClientError(ClientErrc::ConnectRefused, "SAP server refused the connection");
    const std::uint16_t proposed = be16((*offer)[0], (*offer)[1]);
    if (proposed < kMinMaxMsgSize)
      throw SapClientError(ClientErrc::ConnectRefused, "SAP server offered MaxMsgSize " + std::to_string(proposed));
    spdlog::info("sap client: accepting MaxMsgSize {} (asked for {})", proposed, size);
    size = proposed;
  }
  max_msg_size_ = size;

  {
    std::unique_lock lock(mu_);
    cv_.wait_for(lock, options_.timeout, [&] { return card_reset_seen_ || closed_; });
    if (!card_reset_seen_ || !card_ok_) throw SapClientError(ClientErrc::CardNotReady, "SAP card not ready");
  }
  set_state(ClientState::Idle);
  atr_ = fetch_atr();
}

Bytes SapClient::fetch_atr() {
  send(make(msg::kTransferAtrReq));
  set_state(ClientState::AwaitAtr);
  const SapMessage r = await(msg::kTransferAtrResp);
  set_state(ClientState::Idle);
  const auto rc = r.byte(param::kResultCode).value_or(0xFF);
  if (rc != 0) throw SapClientError(ClientErrc::ResultError, "TRANSFER_ATR failed", rc);
  const Bytes* atr = r.find(param::kAtr);
  if (!atr) throw SapClientError(ClientErrc::ResultError, "TRANSFER_ATR_RESP without ATR");
  return *atr;
}

Bytes SapClient::atr() {
  std::lock_guard call(call_mu_);
  if (!card_available()) throw BackendError(BackendErrc::Unavailable, "SAP card unavailable");
  return atr_;
}

Bytes SapClient::transmit(const Bytes& command) {
  std::lock_guard call(call_mu_);
  {
    std::lock_guard lock(mu_);
    if (closed_ || !card_ok_) throw BackendError(BackendErrc::Unavailable, "SAP card unavailable");
    if (state_ != ClientState::Idle) throw BackendError(BackendErrc::Unavailable, "SAP session not idle");
    inbox_.clear(); // a reply that outlived its deadline
  }
  if (command.size() + 8 > max_msg_size_) throw BackendError(BackendErrc::Malformed, "APDU exceeds MaxMsgSize");
  SapMessage r;
  try {
    send(make(msg::kTransferApduReq, {{param::kCommandApdu, command}}));
    set_state(ClientState::AwaitApduResponse);
    r = await(msg::kTransferApduResp);
  } catch (const SapClientError& e) {
    set_state(ClientState::Idle);
    throw BackendError(BackendErrc::Unavailable, e.what());
  } catch (const BackendError&) {
    set_state(ClientState::Idle);
    throw;
  }
  set_state(ClientState::Idle);
  const auto rc = r.byte(param::kResultCode).value_or(0xFF);
  if (rc != 0) throw BackendError(BackendErrc::Unavailable, "SAP result code " + to_hex(Bytes{rc}));
  const Bytes* resp = r.find(param::kResponseApdu);
  if (!resp || resp->size() < 2) throw BackendError(BackendErrc::Unavailable, "TRANSFER_APDU_RESP without response");
  return *resp;
}

void SapClient::reset() {
  std::lock_guard call(call_mu_);
  try {
    send(make(msg::kResetSimReq));
    const SapMessage r = await(msg::kResetSimResp);
    if (r.byte(param::kResultCode).value_or(0xFF) != 0) throw BackendError(BackendErrc::Unavailable, "RESET_SIM failed");
    atr_ = fetch_atr();
  } catch (const SapClientError& e) {
    set_state(ClientState::Idle);
    throw BackendError(BackendErrc::Unavailable, e.what());
  }
}

void SapClient::disconnect() {
  std::lock_guard call(call_mu_);
  {
    std::lock_guard lock(mu_);
    if (closed_ || state_ == ClientState::Disconnected || state_ == ClientState::Closing) return;
  }
  set_state(ClientState::Closing);
  try {
    send(make(msg::kDisconnectReq));
    await(msg::kDisconnectResp);
  } catch (const std::exception& e) {
    spdlog::debug("sap client: disconnect: {}", e.what());
  }
  set_state(ClientState::Disconnected);
  transport_->close();
}

} // namespace simtunnel::sap

namespace simtunnel::sap {

std::unique_ptr<SapClient> connect_sap_tcp(const Endpoint& ep, SapClientOptions options) {
  return std::make_unique<SapClient>(TcpStream::connect(ep), options);
}

} // namespace simtunnel::sap
