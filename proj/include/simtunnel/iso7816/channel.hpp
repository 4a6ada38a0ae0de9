#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>

#include "simtunnel/bytes.hpp"
#include "simtunnel/clock.hpp"
#include "simtunnel/stream.hpp"

namespace simtunnel::iso7816 {

using SteadyTime = std::chrono::steady_clock::time_point;
/// Absolute receive deadline; std::nullopt waits until data or close.
using Deadline = std::optional<SteadyTime>;

inline Deadline deadline_in(Micros d) { return std::chrono::steady_clock::now() + d; }

/// The electrical SIM interface reduced to a half-duplex octet pipe. Turn
/// taking is the caller's job; the channel never reorders bytes.
class HalfDuplexChannel {
public:
  virtual ~HalfDuplexChannel() = default;
  virtual void send(ByteView bytes) = 0;
  /// Exactly n bytes, or nullopt if the deadline passes first (nothing is
  /// consumed then). Throws Iso7816Error(ChannelClosed) once closed and drained.
  virtual std::optional<Bytes> receive(std::size_t n, Deadline deadline) = 0;
  /// Drops everything buffered so far; used after a garbled block.
  virtual void discard_input() = 0;
  virtual void close() = 0;

  std::optional<std::uint8_t> receive_byte(Deadline deadline) {
    auto b = receive(1, deadline);
    if (!b) return std::nullopt;
    return (*b)[0];
  }
};

enum class LinkDirection { ToCard, ToTerminal };

/// Mutates the bytes of the `index`-th send() call in one direction.
using SendHook = std::function<void(std::uint64_t index, Bytes& bytes)>;

/// In-memory channel pair with latency and corruption injection.
class LoopbackLink {
public:
  LoopbackLink();
  ~LoopbackLink();
  LoopbackLink(const LoopbackLink&) = delete;
  LoopbackLink& operator=(const LoopbackLink&) = delete;

  HalfDuplexChannel& terminal_end();
  HalfDuplexChannel& card_end();

  void set_send_hook(LinkDirection dir, SendHook hook);
  void set_byte_latency(LinkDirection dir, Micros per_byte);
  /// Every byte that crossed the link in `dir`, post-hook.
  Bytes transcript(LinkDirection dir) const;
  void close();

  struct Queue;
  class End;

private:
  std::shared_ptr<Queue> to_card_;
  std::shared_ptr<Queue> to_terminal_;
  std::unique_ptr<End> terminal_;
  std::unique_ptr<End> card_;
};

/// Adapts an ordered byte stream (e.g. a TCP socket towards an external
/// modem bridge) to the channel interface.
class StreamChannel final : public HalfDuplexChannel {
public:
  explicit StreamChannel(std::unique_ptr<ByteStream> stream) : stream_(std::move(stream)) {}

  void send(ByteView bytes) override;
  std::optional<Bytes> receive(std::size_t n, Deadline deadline) override;
  void discard_input() override;
  void close() override { stream_->close(); }

private:
  std::unique_ptr<ByteStream> stream_;
  Bytes buffer_;
};

/// Card-side application callback: raw command APDU in, response bytes
/// (data ++ SW1 SW2) out.
using CardHandler = std::function<Bytes(const Bytes& command)>;

/// Runs `handler` off-thread and calls `beat` every `interval` until it
/// finishes. Handler exceptions propagate.
Bytes run_with_heartbeat(const CardHandler& handler, const Bytes& command, Micros interval,
                         const std::function<void()>& beat);

} // namespace simtunnel::iso7816
