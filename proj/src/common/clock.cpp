#include "simtunnel/clock.hpp"

namespace simtunnel {

Clock& system_clock() {
  static SystemClock clock;
  return clock;
}

} // namespace simtunnel
