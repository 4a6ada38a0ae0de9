#include "simtunnel/iso7816/channel.hpp"

#include <future>
#include <thread>

#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::iso7816 {

struct LoopbackLink::Queue {
  mutable std::mutex mu;
  std::condition_variable cv;
  std::deque<std::pair<std::uint8_t, SteadyTime>> bytes;
  bool closed = false;
  std::uint64_t sends = 0;
  SendHook hook;
  Micros byte_latency{0};
  Bytes transcript;

  std::size_t visible(SteadyTime now) const {
    std::size_t n = 0;
    for (auto& [b, at] : bytes) {
      if (at > now) break;
      ++n;
    }
    return n;
  }
};

class LoopbackLink::End final : public HalfDuplexChannel {
public:
  End(std::shared_ptr<Queue> in, std::shared_ptr<Queue> out) : in_(std::move(in)), out_(std::move(out)) {}

  void send(ByteView bytes) override {
    std::lock_guard lk(out_->mu);
    if (out_->closed) throw Iso7816Error(Errc::ChannelClosed);
    Bytes data(bytes.begin(), bytes.end());
    if (out_->hook) out_->hook(out_->sends, data);
    ++out_->sends;
    auto at = std::chrono::steady_clock::now();
    if (!out_->bytes.empty()) at = std::max(at, out_->bytes.back().second);
    for (auto b : data) {
      at += out_->byte_latency;
      out_->bytes.emplace_back(b, at);
    }
    append(out_->transcript, data);
    out_->cv.notify_all();
  }

  std::optional<Bytes> receive(std::size_t n, Deadline deadline) override {
    std::unique_lock lk(in_->mu);
    for (;;) {
      auto now = std::chrono::steady_clock::now();
      if (in_->visible(now) >= n) break;
      if (in_->closed && in_->bytes.size() < n) throw Iso7816Error(Errc::ChannelClosed);
      // Wake up when the next byte becomes visible, the deadline passes, or a sender notifies.
      SteadyTime wake = SteadyTime::max();
      if (deadline) wake = *deadline;
      if (in_->bytes.size() > in_->visible(now)) wake = std::min(wake, in_->bytes[in_->visible(now)].second);
      if (deadline && now >= *deadline) return std::nullopt;
      if (wake == SteadyTime::max())
        in_->cv.wait(lk);
      else
        in_->cv.wait_until(lk, wake);
    }
    Bytes out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      out.push_back(in_->bytes.front().first);
      in_->bytes.pop_front();
    }
    return out;
  }

  void discard_input() override {
    std::lock_guard lk(in_->mu);
    in_->bytes.clear();
  }

  void close() override {
    for (auto& q : {in_, out_}) {
      std::lock_guard lk(q->mu);
      q->closed = true;
      q->cv.notify_all();
    }
  }

private:
  std::shared_ptr<Queue> in_;
  std::shared_ptr<Queue> out_;
};

LoopbackLink::LoopbackLink()
    : to_card_(std::make_shared<Queue>()),
      to_terminal_(std::make_shared<Queue>()),
      terminal_(std::make_unique<End>(to_terminal_, to_card_)),
      card_(std::make_unique<End>(to_card_, to_terminal_)) {}

LoopbackLink::~LoopbackLink() { close(); }

HalfDuplexChannel& LoopbackLink::terminal_end() { return *terminal_; }
HalfDuplexChannel& LoopbackLink::card_end() { return *card_; }

void LoopbackLink::set_send_hook(LinkDirection dir, SendHook hook) {
  auto& q = dir == LinkDirection::ToCard ? *to_card_ : *to_terminal_;
  std::lock_guard lk(q.mu);
  q.hook = std::move(hook);
}

void LoopbackLink::set_byte_latency(LinkDirection dir, Micros per_byte) {
  auto& q = dir == LinkDirection::ToCard ? *to_card_ : *to_terminal_;
  std::lock_guard lk(q.mu);
  q.byte_latency = per_byte;
}

Bytes LoopbackLink::transcript(LinkDirection dir) const {
  auto& q = dir == LinkDirection::ToCard ? *to_card_ : *to_terminal_;
  std::lock_guard lk(q.mu);
  return q.transcript;
}

void LoopbackLink::close() { terminal_->close(); }

void StreamChannel::send(ByteView bytes) {
  try {
    stream_->write_all(bytes);
  } catch (const StreamClosed&) {
    throw Iso7816Error(Errc::ChannelClosed);
  }
}

std::optional<Bytes> StreamChannel::receive(std::size_t n, Deadline deadline) {
  try {
    while (buffer_.size() < n) {
      auto wait = std::chrono::milliseconds(100);
      if (deadline) {
        auto now = std::chrono::steady_clock::now();
        if (now >= *deadline) return std::nullopt;
        wait = std::min(wait, std::chrono::ceil<std::chrono::milliseconds>(*deadline - now));
      }
      if (!stream_->wait_readable(wait)) continue;
      std::uint8_t b = 0;
      stream_->read_exact(std::span(&b, 1));
      buffer_.push_back(b);
    }
  } catch (const StreamClosed&) {
    throw Iso7816Error(Errc::ChannelClosed);
  }
  Bytes out(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
  buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(n));
  return out;
}

void StreamChannel::discard_input() {
  buffer_.clear();
  try {
    while (stream_->wait_readable(std::chrono::milliseconds(0))) {
      std::uint8_t b = 0;
      stream_->read_exact(std::span(&b, 1));
    }
  } catch (const StreamClosed&) {
  }
}

Bytes run_with_heartbeat(const CardHandler& handler, const Bytes& command, Micros interval,
                         const std::function<void()>& beat) {
  auto fut = std::async(std::launch::async, [&handler, command] { return handler(command); });
  while (fut.wait_for(interval) != std::future_status::ready) beat();
  return fut.get();
}

} // namespace simtunnel::iso7816
