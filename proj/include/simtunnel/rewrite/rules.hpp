#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "simtunnel/bytes.hpp"

namespace simtunnel::rewrite {

enum class RuleErrc { SchemaError, UnknownAction, BadHex };

class RuleError : public std::runtime_error {
public:
  RuleError(RuleErrc code, const std::string& what) : std::runtime_error(what), code(code) {}
  RuleErrc code;
};

enum class Direction { ToCard, ToModem, Both };

struct Matcher {
  struct Masked {
    std::uint8_t value = 0;
    std::uint8_t mask = 0xFF;
  };
  std::optional<Masked> cla;
  std::optional<std::uint8_t> ins;
  std::optional<std::uint16_t> p1p2;
  std::optional<Bytes> data_prefix;
  std::optional<std::uint16_t> selected_file;

  /// `command` is the raw command APDU; data_prefix looks at the octets after
  /// the 5-byte header.
  bool matches(ByteView command, std::optional<std::uint16_t> selected) const;
};

struct Action {
  enum class Kind { Pass, Drop, ReplaceAt, SetResponse, Tag };
  Kind kind = Kind::Pass;
  std::uint16_t sw = 0x9000;  ///< Drop, SetResponse
  std::size_t offset = 0;     ///< ReplaceAt
  Bytes bytes;                ///< ReplaceAt payload, SetResponse data
  std::string label;          ///< Tag

  bool terminal() const { return kind != Kind::Tag; }
};

struct Rule {
  std::string name;
  Direction direction = Direction::Both;
  Matcher match;
  Action action;
  bool enabled = true;
};

std::vector<Rule> compile_rules(const nlohmann::json& doc);
/// Empty or whitespace-only text compiles to no rules.
std::vector<Rule> compile_rules_text(const std::string& text);
std::vector<Rule> compile_rules_file(const std::string& path);

struct Verdict {
  enum class Kind { Pass, Synthesize };
  Kind kind = Kind::Pass;
  /// Pass: bytes to forward. Synthesize: the response handed to the modem.
  Bytes bytes;
  bool modified = false;
  std::vector<std::string> tags;
};

/// Per-session rule evaluation. Rules are immutable; the engine carries the
/// selected-file context and the command that elicited the next response.
class Engine {
public:
  Engine() = default;
  explicit Engine(std::vector<Rule> rules) : rules_(std::move(rules)) {}

  /// Command from the modem. A Synthesize verdict ends the exchange locally.
  Verdict on_command(const Bytes& command);
  /// Response to the most recent forwarded command.
  Verdict on_response(const Bytes& response);

  std::optional<std::uint16_t> selected_file() const { return selected_; }
  std::uint64_t errors() const { return errors_; }
  const std::vector<Rule>& rules() const { return rules_; }

private:
  Verdict evaluate(Direction dir, const Bytes& payload);

  std::vector<Rule> rules_;
  std::optional<std::uint16_t> selected_;
  std::optional<std::uint16_t> pending_select_;
  Bytes last_command_;
  std::uint64_t errors_ = 0;
};

} // namespace simtunnel::rewrite
