#pragma once

#include <iosfwd>
#include <map>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "simtunnel/clock.hpp"

namespace simtunnel::cli {

/// Process exit codes. Stable; scripts depend on them.
enum Exit : int {
  kOk = 0,
  kInternal = 1,
  kConfig = 2,
  kBind = 3,
  kTunnel = 4,
  kMismatch = 5,
};

class CliError : public std::runtime_error {
public:
  CliError(int code, const std::string& what) : std::runtime_error(what), code(code) {}
  int code;
};

/// "250ms", "2s", "1.5s". A bare number is rejected. Throws CliError(kConfig).
Micros parse_duration(const std::string& text);

/// Config-file key table: key -> bound setting.
using Binding = std::variant<std::string*, bool*>;
using KeyTable = std::map<std::string, Binding>;

/// Loads a flat JSON object into the bound settings. Unknown keys and wrong
/// value types are config errors.
void apply_config_file(const std::string& path, const KeyTable& keys);
void apply_config_text(const std::string& text, const KeyTable& keys);

/// Finds `--config X` or `--config=X` in argv; empty when absent.
std::string find_config_arg(const std::vector<std::string>& args);

/// Sets the spdlog level from SIMTUNNEL_LOG (default warn), logging to stderr.
void setup_logging();

/// Full command line entry point; returns the exit code.
int run(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace simtunnel::cli
