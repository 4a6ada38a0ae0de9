#pragma once

#include <string>
#include <vector>

#include "simtunnel/backend.hpp"
#include "simtunnel/clock.hpp"
#include "simtunnel/trace/trace.hpp"

namespace simtunnel::trace {

struct ReplayOptions {
  /// Reproduce the recorded gaps between commands.
  bool paced = false;
  Clock* clock = nullptr; ///< defaults to the system clock
};

struct ReplayEntry {
  std::uint64_t seq = 0;
  Bytes command;
  Bytes expected;
  Bytes actual;
  bool match = false;
  bool skipped = false; ///< synthesized record, never reached the card
  std::string error;
  std::int64_t issued_at_us = 0;
};

struct ReplayReport {
  std::vector<ReplayEntry> entries;

  std::size_t matched() const;
  std::size_t mismatched() const;
  bool ok() const { return mismatched() == 0; }
};

/// Re-issues every non-synthesized command in order and compares with the
/// response the card originally gave.
ReplayReport replay(const TraceFile& trace, SimBackend& target, ReplayOptions options = {});

/// One line per record plus a summary line.
std::string format_report(const ReplayReport& report);

} // namespace simtunnel::trace
