#pragma once

#include <atomic>
#include <chrono>
#include <thread>

namespace simtunnel {

using Micros = std::chrono::microseconds;
using Millis = std::chrono::milliseconds;

/// Monotonic time source used for trace timestamps, injected latency,
/// keepalive scheduling and paced replay. Blocking I/O deadlines always use
/// std::chrono::steady_clock directly.
class Clock {
public:
  virtual ~Clock() = default;
  virtual Micros now() const = 0;
  virtual void sleep_for(Micros d) = 0;
};

class SystemClock final : public Clock {
public:
  Micros now() const override {
    return std::chrono::duration_cast<Micros>(
        std::chrono::steady_clock::now().time_since_epoch());
  }
  void sleep_for(Micros d) override {
    if (d.count() > 0) std::this_thread::sleep_for(d);
  }
};

/// Virtual time. sleep_for() advances the clock instantly, so latency
/// injected through it costs no wall time and shows up exactly in timestamps.
class ManualClock final : public Clock {
public:
  explicit ManualClock(Micros start = Micros{0}) : now_(start.count()) {}

  Micros now() const override { return Micros{now_.load()}; }
  void sleep_for(Micros d) override { advance(d); }
  void advance(Micros d) {
    if (d.count() > 0) now_.fetch_add(d.count());
  }

private:
  std::atomic<std::int64_t> now_;
};

Clock& system_clock();

} // namespace simtunnel
