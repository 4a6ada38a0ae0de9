#include "simtunnel/trace/replay.hpp"

#include <sstream>

#include "simtunnel/apdu/apdu.hpp"

namespace simtunnel::trace {

std::size_t ReplayReport::matched() const {
  std::size_t n = 0;
  for (auto& e : entries) n += (!e.skipped && e.match) ? 1 : 0;
  return n;
}

std::size_t ReplayReport::mismatched() const {
  std::size_t n = 0;
  for (auto& e : entries) n += (!e.skipped && !e.match) ? 1 : 0;
  return n;
}

ReplayReport replay(const TraceFile& trace, SimBackend& target, ReplayOptions options) {
  Clock& clock = options.clock ? *options.clock : system_clock();
  ReplayReport report;
  const Micros start = clock.now();
  const std::int64_t first_t = trace.records.empty() ? 0 : trace.records.front().t_command_us;

  for (const auto& rec : trace.records) {
    ReplayEntry e;
    e.seq = rec.seq;
    e.command = rec.command;
    e.expected = rec.original_response ? *rec.original_response : rec.response;
    if (rec.synthesized) {
      e.skipped = true;
      report.entries.push_back(std::move(e));
      continue;
    }
    if (options.paced) {
      const Micros due = start + Micros{rec.t_command_us - first_t};
      const Micros now = clock.now();
      if (due > now) clock.sleep_for(due - now);
    }
    e.issued_at_us = (clock.now() - start).count();
    try {
      e.actual = target.transmit(rec.command);
      e.match = e.actual == e.expected;
    } catch (const BackendError& err) {
      e.error = err.what();
    }
    report.entries.push_back(std::move(e));
  }
  return report;
}

std::string format_report(const ReplayReport& report) {
  std::ostringstream out;
  for (const auto& e : report.entries) {
    out << "#" << e.seq << ' ';
    if (e.skipped) {
      out << "skipped (synthesized)\n";
      continue;
    }
    out << (e.match ? "match    " : "MISMATCH ") << apdu::describe_raw(e.command, nullptr);
    if (!e.match) {
      out << " expected " << to_hex(e.expected) << " got " << (e.error.empty() ? to_hex(e.actual) : "error: " + e.error);
    }
    out << '\n';
  }
  const std::size_t total = report.matched() + report.mismatched();
  out << report.matched() << "/" << total << " matched";
  if (report.mismatched()) out << ", " << report.mismatched() << " mismatched";
  out << '\n';
  return out.str();
}

} // namespace simtunnel::trace
