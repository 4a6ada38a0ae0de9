#include "simtunnel/rewrite/rules.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

namespace simtunnel::rewrite {
namespace {

using nlohmann::json;

[[noreturn]] void schema(const std::string& what) { throw RuleError(RuleErrc::SchemaError, what); }

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) schema(where + ": expected an object");
  for (auto& [key, _] : obj.items())
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
      schema(where + ": unknown key '" + key + "'");
}

Bytes hex(const json& v, const std::string& where) {
  if (!v.is_string()) schema(where + ": expected a hex string");
  try {
    return from_hex(v.get<std::string>());
  } catch (const HexError& e) {
    throw RuleError(RuleErrc::BadHex, where + ": " + e.what());
  }
}

Bytes hex_exact(const json& v, std::size_t n, const std::string& where) {
  Bytes b = hex(v, where);
  if (b.size() != n) schema(where + ": expected " + std::to_string(n) + " octet(s)");
  return b;
}

std::uint16_t hex16(const json& v, const std::string& where) {
  Bytes b = hex_exact(v, 2, where);
  return be16(b[0], b[1]);
}

Matcher compile_match(const json& m, const std::string& where) {
  only_keys(m, {"cla", "ins", "p1p2", "data_prefix", "selected_file"}, where);
  Matcher out;
  if (m.contains("cla")) {
    const json& c = m["cla"];
    if (c.is_object()) {
      only_keys(c, {"value", "mask"}, where + ".cla");
      if (!c.contains("value")) schema(where + ".cla: value missing");
      Matcher::Masked mk;
      mk.value = hex_exact(c["value"], 1, where + ".cla.value")[0];
      mk.mask = c.contains("mask") ? hex_exact(c["mask"], 1, where + ".cla.mask")[0] : 0xFF;
      out.cla = mk;
    } else {
      out.cla = Matcher::Masked{hex_exact(c, 1, where + ".cla")[0], 0xFF};
    }
  }
  if (m.contains("ins")) out.ins = hex_exact(m["ins"], 1, where + ".ins")[0];
  if (m.contains("p1p2")) out.p1p2 = hex16(m["p1p2"], where + ".p1p2");
  if (m.contains("data_prefix")) out.data_prefix = hex(m["data_prefix"], where + ".data_prefix");
  if (m.contains("selected_file")) out.selected_file = hex16(m["selected_file"], where + ".selected_file");
  return out;
}

Action compile_action(const json& a, const std::string& where) {
  if (!a.is_object() || !a.contains("type") || !a["type"].is_string()) schema(where + ": action needs a type");
  const std::string type = a["type"].get<std::string>();
  Action out;
  if (type == "pass") {
    only_keys(a, {"type"}, where);
    out.kind = Action::Kind::Pass;
  } else if (type == "drop") {
    only_keys(a, {"type", "sw"}, where);
    out.kind = Action::Kind::Drop;
    if (!a.contains("sw")) schema(where + ": drop needs sw");
    out.sw = hex16(a["sw"], where + ".sw");
  } else if (type == "replace_at") {
    only_keys(a, {"type", "offset", "bytes"}, where);
    out.kind = Action::Kind::ReplaceAt;
    if (!a.contains("offset") || !a["offset"].is_number_unsigned()) schema(where + ": offset must be a non-negative integer");
    out.offset = a["offset"].get<std::size_t>();
    if (!a.contains("bytes")) schema(where + ": replace_at needs bytes");
    out.bytes = hex(a["bytes"], where + ".bytes");
    if (out.bytes.empty()) schema(where + ": replace_at with no bytes");
  } else if (type == "set_response") {
    only_keys(a, {"type", "data", "sw"}, where);
    out.kind = Action::Kind::SetResponse;
    if (a.contains("data")) out.bytes = hex(a["data"], where + ".data");
    if (!a.contains("sw")) schema(where + ": set_response needs sw");
    out.sw = hex16(a["sw"], where + ".sw");
  } else if (type == "tag") {
    only_keys(a, {"type", "label"}, where);
    out.kind = Action::Kind::Tag;
    if (!a.contains("label") || !a["label"].is_string() || a["label"].get<std::string>().empty())
      schema(where + ": tag needs a label");
    out.label = a["label"].get<std::string>();
  } else {
    throw RuleError(RuleErrc::UnknownAction, where + ": unknown action '" + type + "'");
  }
  return out;
}

bool successful(const Bytes& response) {
  if (response.size() < 2) return false;
  std::uint8_t sw1 = response[response.size() - 2];
  return sw1 == 0x90 || sw1 == 0x91 || sw1 == 0x61 || sw1 == 0x9F;
}

Bytes sw_bytes(std::uint16_t sw) { return {static_cast<std::uint8_t>(sw >> 8), static_cast<std::uint8_t>(sw & 0xFF)}; }

} // namespace

bool Matcher::matches(ByteView command, std::optional<std::uint16_t> selected) const {
  if (command.size() < 4) return !cla && !ins && !p1p2 && (!data_prefix || data_prefix->empty()) && !selected_file;
  if (cla && (command[0] & cla->mask) != (cla->value & cla->mask)) return false;
  if (ins && command[1] != *ins) return false;
  if (p1p2 && be16(command[2], command[3]) != *p1p2) return false;
  if (selected_file && selected != selected_file) return false;
  if (data_prefix && !data_prefix->empty()) {
    if (command.size() < 5 + data_prefix->size()) return false;
    if (!std::equal(data_prefix->begin(), data_prefix->end(), command.begin() + 5)) return false;
  }
  return true;
}

std::vector<Rule> compile_rules(const json& doc) {
  const json* list = &doc;
  if (doc.is_null()) return {};
  if (doc.is_object()) {
    only_keys(doc, {"rules"}, "rules document");
    if (!doc.contains("rules")) return {};
    list = &doc["rules"];
  }
  if (!list->is_array()) schema("rules must be a list");

  std::vector<Rule> out;
  for (std::size_t i = 0; i < list->size(); ++i) {
    const json& r = (*list)[i];
    const std::string where = "rules[" + std::to_string(i) + "]";
    only_keys(r, {"name", "direction", "match", "action", "enabled"}, where);
    Rule rule;
    rule.name = r.contains("name") && r["name"].is_string() ? r["name"].get<std::string>() : where;
    if (r.contains("direction")) {
      const json& d = r["direction"];
      const std::string dir = d.is_string() ? d.get<std::string>() : "";
      if (dir == "to_card") rule.direction = Direction::ToCard;
      else if (dir == "to_modem") rule.direction = Direction::ToModem;
      else if (dir == "both") rule.direction = Direction::Both;
      else schema(where + ": direction must be to_card, to_modem or both");
    }
    if (r.contains("enabled")) {
      if (!r["enabled"].is_boolean()) schema(where + ": enabled must be a boolean");
      rule.enabled = r["enabled"].get<bool>();
    }
    rule.match = r.contains("match") ? compile_match(r["match"], where + ".match") : Matcher{};
    if (!r.contains("action")) schema(where + ": action missing");
    rule.action = compile_action(r["action"], where + ".action");
    out.push_back(std::move(rule));
  }
  return out;
}

std::vector<Rule> compile_rules_text(const std::string& text) {
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) return {};
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    schema(std::string("not valid JSON: ") + e.what());
  }
  return compile_rules(doc);
}

std::vector<Rule> compile_rules_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) schema("cannot open rules file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return compile_rules_text(ss.str());
}

Verdict Engine::evaluate(Direction dir, const Bytes& payload) {
  Verdict v;
  v.bytes = payload;
  const Bytes& subject = dir == Direction::ToCard ? payload : last_command_;
  for (const auto& rule : rules_) {
    if (!rule.enabled) continue;
    if (rule.direction != Direction::Both && rule.direction != dir) continue;
    if (!rule.match.matches(subject, selected_)) continue;

    const Action& a = rule.action;
    switch (a.kind) {
    case Action::Kind::Tag:
      v.tags.push_back(a.label);
      continue;
    case Action::Kind::Pass:
      return v;
    case Action::Kind::ReplaceAt:
      if (a.offset + a.bytes.size() > payload.size()) {
        ++errors_;
        return v;
      }
      std::copy(a.bytes.begin(), a.bytes.end(), v.bytes.begin() + static_cast<std::ptrdiff_t>(a.offset));
      v.modified = v.bytes != payload;
      return v;
    case Action::Kind::Drop:
    case Action::Kind::SetResponse: {
      Bytes response = a.kind == Action::Kind::SetResponse ? a.bytes : Bytes{};
      append(response, sw_bytes(a.sw));
      if (dir == Direction::ToCard) v.kind = Verdict::Kind::Synthesize;
      v.modified = dir == Direction::ToCard || response != payload;
      v.bytes = std::move(response);
      return v;
    }
    }
  }
  return v;
}

Verdict Engine::on_command(const Bytes& command) {
  Verdict v = evaluate(Direction::ToCard, command);
  pending_select_.reset();
  if (v.kind == Verdict::Kind::Pass) {
    last_command_ = v.bytes;
    const Bytes& c = v.bytes;
    if (c.size() >= 7 && c[1] == 0xA4 && c[4] == 2) pending_select_ = be16(c[5], c[6]);
  }
  return v;
}

Verdict Engine::on_response(const Bytes& response) {
  if (pending_select_ && successful(response)) selected_ = pending_select_;
  pending_select_.reset();
  return evaluate(Direction::ToModem, response);
}

} // namespace simtunnel::rewrite
