#pragma once

#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/bytes.hpp"

namespace simtunnel::modem {

class ScriptError : public std::runtime_error {
public:
  ScriptError(int line, const std::string& what)
      : std::runtime_error("line " + std::to_string(line) + ": " + what), line(line) {}
  int line;
};

struct Expectation {
  enum class Kind { Sw, Data };
  Kind kind = Kind::Sw;
  int line = 0;
  std::string sw_pattern; ///< four upper-case hex digits, '?' matches any nibble
  Bytes data;

  bool sw_matches(std::uint16_t sw) const;
};

struct ScriptStep {
  int line = 0;
  Bytes command;
  std::vector<Expectation> expectations;
};

struct Script {
  std::vector<ScriptStep> steps;
};

/// One raw command APDU per line, optionally followed by `expect <sw>` and
/// `expect-data <hex>` lines that apply to it. `#` starts a comment.
Script parse_script(const std::string& text);
Script parse_script_file(const std::string& path);

struct StepOutcome {
  ScriptStep step;
  Bytes response; ///< data ++ SW1 SW2; empty if the exchange failed
  std::string error;
  std::vector<std::string> failures;
  bool ok() const { return error.empty() && failures.empty(); }
};

struct ScriptResult {
  std::vector<StepOutcome> steps;
  bool ok() const;
  std::size_t failed() const;
};

using Exchange = std::function<Bytes(const Bytes& command)>;

/// Runs every step in order. An exception from `exchange` is recorded and
/// stops the run.
ScriptResult run_script(const Script& script, const Exchange& exchange);

/// `line N: <describe> [FAIL ...]` per step, then `k/n steps ok`.
std::string format_result(const ScriptResult& result);

} // namespace simtunnel::modem
