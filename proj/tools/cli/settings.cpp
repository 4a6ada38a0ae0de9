#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "cli.hpp"

namespace simtunnel::cli {

Micros parse_duration(const std::string& text) {
  double scale = 0;
  std::string number;
  if (text.size() > 2 && text.ends_with("ms")) {
    scale = 1e3;
    number = text.substr(0, text.size() - 2);
  } else if (text.size() > 1 && text.ends_with("s")) {
    scale = 1e6;
    number = text.substr(0, text.size() - 1);
  } else {
    throw CliError(kConfig, "duration '" + text + "' needs a unit (ms or s)");
  }
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(number, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != number.size() || !std::isfinite(v) || v < 0)
    throw CliError(kConfig, "invalid duration '" + text + "'");
  return Micros{static_cast<Micros::rep>(std::llround(v * scale))};
}

void apply_config_text(const std::string& text, const KeyTable& keys) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw CliError(kConfig, std::string("config is not valid JSON: ") + e.what());
  }
  if (!doc.is_object()) throw CliError(kConfig, "config must be a JSON object");
  for (const auto& [key, value] : doc.items()) {
    auto it = keys.find(key);
    if (it == keys.end()) throw CliError(kConfig, "unknown config key '" + key + "'");
    if (auto* s = std::get_if<std::string*>(&it->second)) {
      if (!value.is_string()) throw CliError(kConfig, "config key '" + key + "' must be a string");
      **s = value.get<std::string>();
    } else {
      if (!value.is_boolean()) throw CliError(kConfig, "config key '" + key + "' must be true or false");
      *std::get<bool*>(it->second) = value.get<bool>();
    }
  }
}

void apply_config_file(const std::string& path, const KeyTable& keys) {
  std::ifstream in(path);
  if (!in) throw CliError(kConfig, "cannot read config " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  apply_config_text(ss.str(), keys);
}

std::string find_config_arg(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].starts_with("--config=")) return args[i].substr(9);
  }
  return {};
}

void setup_logging() {
  auto logger = spdlog::stderr_color_mt("simtunnel");
  spdlog::set_default_logger(logger);
  spdlog::set_pattern("%H:%M:%S.%e %^%l%$ %v");
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("SIMTUNNEL_LOG"); env && *env) {
    level = spdlog::level::from_str(env);
    // from_str maps anything unknown to off; say so instead of going quiet
    if (level == spdlog::level::off && std::string(env) != "off") {
      level = spdlog::level::warn;
      spdlog::warn("unknown SIMTUNNEL_LOG level '{}', using warn", env);
    }
  }
  spdlog::set_level(level);
}

} // namespace simtunnel::cli
