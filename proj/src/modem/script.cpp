#include "simtunnel/modem/script.hpp"

#include <cctype>
#include <fstream>
#include <sstream>

namespace simtunnel::modem {
namespace {

std::string trim(std::string s) {
  const auto hash = s.find('#');
  if (hash != std::string::npos) s.erase(hash);
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string strip_spaces(const std::string& s) {
  std::string out;
  for (char c : s) {
    if (c != ' ' && c != '\t') out += static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  }
  return out;
}

Bytes parse_hex(int line, const std::string& text, const char* what) {
  try {
    return from_hex(text);
  } catch (const std::exception& e) {
    throw ScriptError(line, std::string("bad ") + what + ": " + e.what());
  }
}

} // namespace

bool Expectation::sw_matches(std::uint16_t sw) const {
  static const char* kHex = "0123456789ABCDEF";
  for (int i = 0; i < 4; ++i) {
    const char want = sw_pattern[static_cast<std::size_t>(i)];
    if (want == '?') continue;
    if (want != kHex[(sw >> (12 - 4 * i)) & 0xF]) return false;
  }
  return true;
}

Script parse_script(const std::string& text) {
  Script script;
  std::istringstream in(text);
  std::string raw;
  int line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const std::string s = trim(raw);
    if (s.empty()) continue;

    const auto space = s.find_first_of(" \t");
    const std::string word = s.substr(0, space);
    const std::string rest = space == std::string::npos ? std::string{} : trim(s.substr(space));

    if (word == "expect" || word == "expect-data") {
      if (script.steps.empty()) throw ScriptError(line, word + " before any APDU");
      Expectation e;
      e.line = line;
      if (word == "expect") {
        e.kind = Expectation::Kind::Sw;
        e.sw_pattern = strip_spaces(rest);
        if (e.sw_pattern.size() != 4 ||
            e.sw_pattern.find_first_not_of("0123456789ABCDEF?") != std::string::npos) {
          throw ScriptError(line, "expect needs four hex digits or '?', got '" + rest + "'");
        }
      } else {
        e.kind = Expectation::Kind::Data;
        e.data = parse_hex(line, rest, "expect-data");
      }
      script.steps.back().expectations.push_back(std::move(e));
      continue;
    }

    ScriptStep step;
    step.line = line;
    step.command = parse_hex(line, s, "APDU");
    if (step.command.size() < 4) throw ScriptError(line, "APDU shorter than four octets");
    try {
      apdu::parse_command(step.command);
    } catch (const apdu::ApduError& e) {
      throw ScriptError(line, std::string("malformed APDU: ") + e.what());
    }
    script.steps.push_back(std::move(step));
  }
  return script;
}

Script parse_script_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ScriptError(0, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_script(ss.str());
}

bool ScriptResult::ok() const { return failed() == 0; }

std::size_t ScriptResult::failed() const {
  std::size_t n = 0;
  for (const auto& s : steps) n += s.ok() ? 0 : 1;
  return n;
}

ScriptResult run_script(const Script& script, const Exchange& exchange) {
  ScriptResult result;
  for (const auto& step : script.steps) {
    StepOutcome out;
    out.step = step;
    try {
      out.response = exchange(step.command);
    } catch (const std::exception& e) {
      out.error = e.what();
      result.steps.push_back(std::move(out));
      break;
    }
    if (out.response.size() < 2) {
      out.error = "response shorter than a status word";
      result.steps.push_back(std::move(out));
      break;
    }
    const auto resp = apdu::ResponseApdu::from_bytes(out.response);
    for (const auto& e : step.expectations) {
      if (e.kind == Expectation::Kind::Sw && !e.sw_matches(resp.sw())) {
        out.failures.push_back("expected sw " + e.sw_pattern + " got " + to_hex(Bytes{resp.sw1, resp.sw2}));
      } else if (e.kind == Expectation::Kind::Data && resp.data != e.data) {
        out.failures.push_back("expected data " + to_hex(e.data) + " got " + to_hex(resp.data));
      }
    }
    result.steps.push_back(std::move(out));
  }
  return result;
}

std::string format_result(const ScriptResult& result) {
  std::ostringstream os;
  std::size_t ok = 0;
  for (const auto& s : result.steps) {
    os << "line " << s.step.line << ": ";
    if (!s.error.empty()) {
      os << apdu::describe_raw(s.step.command) << " [ERROR " << s.error << "]\n";
      continue;
    }
    os << apdu::describe_raw(s.step.command, &s.response);
    for (const auto& f : s.failures) os << " [FAIL " << f << "]";
    os << '\n';
    ok += s.ok() ? 1 : 0;
  }
  os << ok << "/" << result.steps.size() << " steps ok\n";
  return os.str();
}

} // namespace simtunnel::modem
