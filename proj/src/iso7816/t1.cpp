#include "simtunnel/iso7816/t1.hpp"

#include <future>

#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::iso7816 {
namespace {

struct Resynched {};

template <class... Ts> struct overloaded : Ts... { using Ts::operator()...; };

T1Block r_block(bool seq, RError err = RError::Ok) { return T1Block::make(RBlock{seq, err}); }

bool is_s(const T1Block& b, SOp op, bool response) {
  auto k = b.kind();
  auto* s = std::get_if<SBlock>(&k);
  return s && s->op == op && s->response == response;
}

} // namespace

BlockKind decode_pcb(std::uint8_t pcb) {
  if (!(pcb & 0x80)) {
    if (pcb & 0x1F) throw Iso7816Error(Errc::BadBlock, "I-block PCB with RFU bits set");
    return IBlock{(pcb & 0x40) != 0, (pcb & 0x20) != 0};
  }
  if ((pcb & 0xC0) == 0x80) {
    std::uint8_t err = pcb & 0x0F;
    if ((pcb & 0x20) || err > 2) throw Iso7816Error(Errc::BadBlock, "undefined R-block PCB");
    return RBlock{(pcb & 0x10) != 0, static_cast<RError>(err)};
  }
  std::uint8_t op = pcb & 0x1F;
  if (op > 3) throw Iso7816Error(Errc::BadBlock, "undefined S-block PCB");
  return SBlock{static_cast<SOp>(op), (pcb & 0x20) != 0};
}

std::uint8_t encode_pcb(const BlockKind& kind) {
  return std::visit(overloaded{
                        [](const IBlock& i) -> std::uint8_t {
                          return static_cast<std::uint8_t>((i.seq ? 0x40 : 0) | (i.more ? 0x20 : 0));
                        },
                        [](const RBlock& r) -> std::uint8_t {
                          return static_cast<std::uint8_t>(0x80 | (r.seq ? 0x10 : 0) | static_cast<std::uint8_t>(r.err));
                        },
                        [](const SBlock& s) -> std::uint8_t {
                          return static_cast<std::uint8_t>(0xC0 | (s.response ? 0x20 : 0) | static_cast<std::uint8_t>(s.op));
                        },
                    },
                    kind);
}

T1Block T1Block::make(const BlockKind& kind, Bytes inf) { return T1Block{0x00, encode_pcb(kind), std::move(inf)}; }

Bytes T1Block::encode() const {
  if (inf.size() > 254) throw Iso7816Error(Errc::BadBlock, "INF longer than 254 bytes");
  Bytes out{nad, pcb, static_cast<std::uint8_t>(inf.size())};
  append(out, inf);
  out.push_back(lrc(out));
  return out;
}

T1Block T1Block::decode(ByteView frame) {
  if (frame.size() < 4) throw Iso7816Error(Errc::BadBlock, "block shorter than prologue + epilogue");
  std::size_t len = frame[2];
  if (len == 255) throw Iso7816Error(Errc::BadBlock, "LEN=255");
  if (frame.size() != len + 4) throw Iso7816Error(Errc::BadBlock, "LEN does not match block size");
  if (lrc(frame) != 0) throw Iso7816Error(Errc::BadBlock, "LRC mismatch");
  decode_pcb(frame[1]);
  return T1Block{frame[0], frame[1], Bytes(frame.begin() + 3, frame.end() - 1)};
}

std::vector<Bytes> chain_chunks(ByteView data, std::size_t ifs) {
  std::vector<Bytes> out;
  if (ifs == 0) throw Iso7816Error(Errc::InvalidParams, "IFS of zero");
  for (std::size_t off = 0; off < data.size(); off += ifs) {
    auto n = std::min(ifs, data.size() - off);
    out.emplace_back(data.begin() + static_cast<std::ptrdiff_t>(off),
                     data.begin() + static_cast<std::ptrdiff_t>(off + n));
  }
  if (out.empty()) out.emplace_back();
  return out;
}

T1Endpoint::T1Endpoint(HalfDuplexChannel& channel, T1Role role, const ProtocolParams& params, T1Config config)
    : channel_(channel), role_(role), params_(params), timing_(Timing::from(params)), config_(config) {
  params_.validate();
}

void T1Endpoint::send_block(const T1Block& b) {
  channel_.send(b.encode());
  last_sent_ = b;
  if (std::holds_alternative<IBlock>(b.kind())) {
    last_i_ = b;
    i_unacked_ = true;
  }
  log_.push_back({true, b, Micros{0}});
}

std::optional<T1Block> T1Endpoint::receive_block(Deadline deadline, Micros wait) {
  auto prologue = channel_.receive(3, deadline);
  if (!prologue) {
    last_failure_timeout_ = true;
    log_.push_back({false, std::nullopt, wait});
    return std::nullopt;
  }
  last_failure_timeout_ = false;
  std::size_t len = (*prologue)[2];
  std::optional<T1Block> block;
  if (len != 255) {
    auto rest = channel_.receive(len + 1, deadline_in(timing_.cwt + timing_.etu * static_cast<int>(len + 1)));
    if (rest) {
      Bytes frame = *prologue;
      append(frame, *rest);
      try {
        block = T1Block::decode(frame);
        if (block->nad != 0) block.reset();
      } catch (const Iso7816Error&) {
      }
    }
  }
  if (!block) channel_.discard_input();
  log_.push_back({false, block, wait});
  return block;
}

std::optional<T1Block> T1Endpoint::receive_for_terminal() {
  Micros wait = timing_.bwt * wtx_factor_;
  wtx_factor_ = 1;
  return receive_block(deadline_in(wait), wait);
}

void T1Endpoint::on_failure(bool timeout) {
  ++retries_;
  last_failure_timeout_ = timeout;
  if (role_ == T1Role::Terminal && retries_ > config_.max_retries) throw NeedResynch{};
  send_block(r_block(nr_, timeout ? RError::Other : RError::CrcLrc));
}

void T1Endpoint::retransmit_last() {
  ++retries_;
  if (role_ == T1Role::Terminal && retries_ > config_.max_retries) throw NeedResynch{};
  ++retransmissions_;
  // Reuse send_block bookkeeping, but a repeated I-block keeps its ack state.
  if (last_sent_) {
    auto b = *last_sent_;
    send_block(b);
  } else {
    send_block(r_block(nr_, RError::Other));
  }
}

void T1Endpoint::wait_chain_ack(const T1Block& sent) {
  const bool sent_seq = std::get<IBlock>(sent.kind()).seq;
  for (;;) {
    auto rx = role_ == T1Role::Terminal ? receive_for_terminal() : receive_block(Deadline{}, Micros{0});
    if (!rx) {
      on_failure(last_failure_timeout_);
      continue;
    }
    auto kind = rx->kind();
    if (auto* r = std::get_if<RBlock>(&kind)) {
      if (r->seq != sent_seq) {
        ns_ = !ns_;
        i_unacked_ = false;
        retries_ = 0;
        return;
      }
      ++retries_;
      if (role_ == T1Role::Terminal && retries_ > config_.max_retries) throw NeedResynch{};
      ++retransmissions_;
      send_block(sent);
      continue;
    }
    if (auto* s = std::get_if<SBlock>(&kind); s && !s->response) {
      if (s->op == SOp::Resynch && role_ == T1Role::Card) {
        send_block(T1Block::make(SBlock{SOp::Resynch, true}));
        throw Resynched{};
      }
      if (s->op == SOp::Abort) {
        send_block(T1Block::make(SBlock{SOp::Abort, true}));
        throw Iso7816Error(Errc::ExchangeAborted, "peer aborted chain");
      }
      if (s->op == SOp::Wtx && role_ == T1Role::Terminal) {
        wtx_factor_ = std::max<int>(1, rx->inf.empty() ? 1 : rx->inf[0]);
        send_block(T1Block::make(SBlock{SOp::Wtx, true}, rx->inf));
        continue;
      }
    }
    on_failure(false);
  }
}

void T1Endpoint::send_chain(ByteView data, std::size_t ifs) {
  auto chunks = chain_chunks(data, ifs);
  for (std::size_t i = 0; i < chunks.size(); ++i) {
    const bool more = i + 1 < chunks.size();
    auto blk = T1Block::make(IBlock{ns_, more}, chunks[i]);
    send_block(blk);
    if (more) wait_chain_ack(blk);
  }
}

Bytes T1Endpoint::transceive_once(ByteView command) {
  send_chain(command, static_cast<std::size_t>(params_.ifsc));

  Bytes response;
  for (;;) {
    auto rx = receive_for_terminal();
    if (!rx) {
      on_failure(last_failure_timeout_);
      continue;
    }
    auto kind = rx->kind();
    if (auto* i = std::get_if<IBlock>(&kind)) {
      if (i->seq != nr_) {
        on_failure(false);
        continue;
      }
      if (i_unacked_) {
        i_unacked_ = false;
        ns_ = !ns_;
      }
      nr_ = !nr_;
      retries_ = 0;
      append(response, rx->inf);
      if (!i->more) return response;
      send_block(r_block(nr_));
      continue;
    }
    if (auto* r = std::get_if<RBlock>(&kind)) {
      if (i_unacked_ && last_i_ && r->seq == std::get<IBlock>(last_i_->kind()).seq) {
        ++retries_;
        if (retries_ > config_.max_retries) throw NeedResynch{};
        ++retransmissions_;
        send_block(*last_i_);
      } else if (last_sent_ && std::holds_alternative<IBlock>(last_sent_->kind())) {
        on_failure(false);
      } else {
        retransmit_last();
      }
      continue;
    }
    auto& s = std::get<SBlock>(kind);
    if (!s.response && s.op == SOp::Wtx) {
      ++wtx_requests_;
      retries_ = 0;
      wtx_factor_ = std::max<int>(1, rx->inf.empty() ? 1 : rx->inf[0]);
      send_block(T1Block::make(SBlock{SOp::Wtx, true}, rx->inf));
    } else if (!s.response && s.op == SOp::Ifs && rx->inf.size() == 1 && rx->inf[0] >= 1 && rx->inf[0] <= 254) {
      params_.ifsc = rx->inf[0];
      send_block(T1Block::make(SBlock{SOp::Ifs, true}, rx->inf));
    } else if (!s.response && s.op == SOp::Abort) {
      send_block(T1Block::make(SBlock{SOp::Abort, true}));
      throw Iso7816Error(Errc::ExchangeAborted, "card aborted the exchange");
    } else {
      on_failure(false);
    }
  }
}

void T1Endpoint::resynch() {
  ++resynchs_;
  for (int attempt = 0; attempt < config_.max_resynch; ++attempt) {
    send_block(T1Block::make(SBlock{SOp::Resynch, false}));
    auto rx = receive_for_terminal();
    if (rx && is_s(*rx, SOp::Resynch, true)) {
      ns_ = nr_ = false;
      i_unacked_ = false;
      last_i_.reset();
      retries_ = 0;
      return;
    }
  }
  throw Iso7816Error(last_failure_timeout_ ? Errc::Timeout : Errc::ResynchFailed, "card did not resynchronise");
}

Bytes T1Endpoint::transceive(ByteView command) {
  if (role_ != T1Role::Terminal) throw Iso7816Error(Errc::ProtocolViolation, "transceive on card endpoint");
  for (int attempt = 0; attempt < 2; ++attempt) {
    try {
      return transceive_once(command);
    } catch (const NeedResynch&) {
      resynch();
    }
  }
  throw Iso7816Error(Errc::ResynchFailed, "exchange failed after resynchronisation");
}

apdu::ResponseApdu T1Endpoint::exchange(const apdu::CommandApdu& cmd) {
  return apdu::ResponseApdu::from_bytes(transceive(apdu::serialize_command(cmd)));
}

bool T1Endpoint::serve_one(const CardHandler& handler) {
  if (role_ != T1Role::Card) throw Iso7816Error(Errc::ProtocolViolation, "serve_one on terminal endpoint");
  try {
    Bytes command;
    bool started = false;
    for (;;) {
      auto rx = receive_block(Deadline{}, Micros{0});
      if (!rx) {
        on_failure(false);
        continue;
      }
      auto kind = rx->kind();
      if (auto* i = std::get_if<IBlock>(&kind)) {
        if (i->seq != nr_) {
          on_failure(false);
          continue;
        }
        if (i_unacked_) {
          i_unacked_ = false;
          ns_ = !ns_;
        }
        nr_ = !nr_;
        retries_ = 0;
        started = true;
        append(command, rx->inf);
        if (i->more) {
          send_block(r_block(nr_));
          continue;
        }
        break;
      }
      if (auto* r = std::get_if<RBlock>(&kind)) {
        if (i_unacked_ && last_i_ && r->seq == std::get<IBlock>(last_i_->kind()).seq) {
          ++retransmissions_;
          send_block(*last_i_);
        } else if (!last_sent_ || std::holds_alternative<IBlock>(last_sent_->kind())) {
          send_block(r_block(nr_, RError::Other));
        } else {
          retransmit_last();
        }
        continue;
      }
      auto& s = std::get<SBlock>(kind);
      if (!s.response && s.op == SOp::Resynch) {
        send_block(T1Block::make(SBlock{SOp::Resynch, true}));
        ns_ = nr_ = false;
        i_unacked_ = false;
        last_i_.reset();
        command.clear();
        started = false;
        ++resynchs_;
      } else if (!s.response && s.op == SOp::Ifs && rx->inf.size() == 1 && rx->inf[0] >= 1 && rx->inf[0] <= 254) {
        params_.ifsd = rx->inf[0];
        send_block(T1Block::make(SBlock{SOp::Ifs, true}, rx->inf));
      } else if (!s.response && s.op == SOp::Abort) {
        send_block(T1Block::make(SBlock{SOp::Abort, true}));
        command.clear();
        started = false;
      } else {
        on_failure(false);
      }
    }
    (void)started;

    auto fut = std::async(std::launch::async, [&handler, command] { return handler(command); });
    while (fut.wait_for(config_.null_interval) != std::future_status::ready) {
      ++wtx_requests_;
      send_block(T1Block::make(SBlock{SOp::Wtx, false}, Bytes{config_.wtx_multiplier}));
      for (;;) {
        auto rx = receive_block(Deadline{}, Micros{0});
        if (!rx) {
          on_failure(false);
          continue;
        }
        if (is_s(*rx, SOp::Wtx, true)) {
          retries_ = 0;
          break;
        }
        if (is_s(*rx, SOp::Resynch, false)) {
          send_block(T1Block::make(SBlock{SOp::Resynch, true}));
          ns_ = nr_ = false;
          i_unacked_ = false;
          last_i_.reset();
          ++resynchs_;
          fut.wait();
          return true;
        }
        if (std::holds_alternative<RBlock>(rx->kind())) {
          retransmit_last();
          continue;
        }
        on_failure(false);
      }
    }

    Bytes response;
    try {
      response = fut.get();
    } catch (const std::exception&) {
      response = {0x6F, 0x00};
    }
    if (response.size() < 2) response = {0x6F, 0x00};
    send_chain(response, static_cast<std::size_t>(params_.ifsd));
    return true;
  } catch (const Resynched&) {
    ns_ = nr_ = false;
    i_unacked_ = false;
    last_i_.reset();
    ++resynchs_;
    return true;
  } catch (const Iso7816Error& e) {
    if (e.code == Errc::ChannelClosed) return false;
    throw;
  }
}

apdu::ResponseApdu t1_exchange(const apdu::CommandApdu& cmd, HalfDuplexChannel& channel,
                               const ProtocolParams& params) {
  T1Endpoint terminal(channel, T1Role::Terminal, params);
  return terminal.exchange(cmd);
}

} // namespace simtunnel::iso7816
