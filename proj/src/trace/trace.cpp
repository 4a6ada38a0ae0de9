#include "simtunnel/trace/trace.hpp"

#include <chrono>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>
#include <openssl/evp.h>

namespace simtunnel::trace {
namespace {

using nlohmann::json;

Bytes hex_of(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_string()) throw TraceError(std::string("missing hex field '") + key + "'");
  try {
    return from_hex(it->get<std::string>());
  } catch (const HexError& e) {
    throw TraceError(std::string("field '") + key + "': " + e.what());
  }
}

std::int64_t int_of(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || !it->is_number_integer()) throw TraceError(std::string("missing integer field '") + key + "'");
  return it->get<std::int64_t>();
}

json parse_line(const std::string& line) {
  try {
    return json::parse(line);
  } catch (const json::parse_error& e) {
    throw TraceError(std::string("not a JSON line: ") + e.what());
  }
}

SessionHeader header_from(const json& j) {
  SessionHeader h;
  h.tool_version = j.value("version", "");
  h.session_id = hex_of(j, "session_id");
  h.role = j.value("role", "");
  h.wall_anchor_us = int_of(j, "wall_anchor_us");
  h.mono_anchor_us = int_of(j, "mono_anchor_us");
  if (j.contains("profile_sha256") && j["profile_sha256"].is_string()) h.profile_sha256 = j["profile_sha256"];
  if (j.contains("rules_sha256") && j["rules_sha256"].is_string()) h.rules_sha256 = j["rules_sha256"];
  return h;
}

TraceRecord record_from(const json& j) {
  TraceRecord r;
  auto seq = int_of(j, "seq");
  if (seq < 0) throw TraceError("negative seq");
  r.seq = static_cast<std::uint64_t>(seq);
  r.session_id = hex_of(j, "session_id");
  r.t_command_us = int_of(j, "t_command_us");
  r.t_response_us = int_of(j, "t_response_us");
  r.command = hex_of(j, "command");
  r.response = hex_of(j, "response");
  if (j.contains("tags")) {
    if (!j["tags"].is_array()) throw TraceError("tags must be a list");
    for (auto& t : j["tags"]) {
      if (!t.is_string()) throw TraceError("tags must be strings");
      r.tags.push_back(t.get<std::string>());
    }
  }
  if (j.contains("rewritten")) {
    const json& rw = j["rewritten"];
    r.rewritten_command = rw.value("command", false);
    r.rewritten_response = rw.value("response", false);
  }
  if (j.contains("original_command")) r.original_command = hex_of(j, "original_command");
  if (j.contains("original_response")) r.original_response = hex_of(j, "original_response");
  r.synthesized = j.value("synthesized", false);
  return r;
}

} // namespace

std::string to_jsonl(const TraceRecord& r) {
  json j;
  j["type"] = "apdu";
  j["seq"] = r.seq;
  j["session_id"] = to_hex(r.session_id);
  j["t_command_us"] = r.t_command_us;
  j["t_response_us"] = r.t_response_us;
  j["command"] = to_hex(r.command);
  j["response"] = to_hex(r.response);
  j["tags"] = r.tags;
  j["rewritten"] = {{"command", r.rewritten_command}, {"response", r.rewritten_response}};
  if (r.original_command) j["original_command"] = to_hex(*r.original_command);
  if (r.original_response) j["original_response"] = to_hex(*r.original_response);
  j["synthesized"] = r.synthesized;
  return j.dump();
}

std::string to_jsonl(const SessionHeader& h) {
  json j;
  j["type"] = "session";
  j["version"] = h.tool_version;
  j["session_id"] = to_hex(h.session_id);
  j["role"] = h.role;
  j["wall_anchor_us"] = h.wall_anchor_us;
  j["mono_anchor_us"] = h.mono_anchor_us;
  if (h.profile_sha256) j["profile_sha256"] = *h.profile_sha256;
  if (h.rules_sha256) j["rules_sha256"] = *h.rules_sha256;
  return j.dump();
}

TraceRecord record_from_jsonl(const std::string& line) {
  json j = parse_line(line);
  if (!j.is_object() || j.value("type", "") != "apdu") throw TraceError("not an apdu record");
  return record_from(j);
}

TraceFile read_trace(std::istream& in) {
  TraceFile out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string at = "line " + std::to_string(lineno) + ": ";
    try {
      json j = parse_line(line);
      if (!j.is_object()) throw TraceError("expected an object");
      const std::string type = j.value("type", "");
      if (type == "session") {
        if (out.header || !out.records.empty()) throw TraceError("session header must come first, once");
        out.header = header_from(j);
        continue;
      }
      if (type != "apdu") throw TraceError("unknown record type '" + type + "'");
      TraceRecord r = record_from(j);
      const std::uint64_t expected = out.records.empty() ? 1 : out.records.back().seq + 1;
      if (r.seq != expected)
        throw TraceError("seq gap: expected " + std::to_string(expected) + ", found " + std::to_string(r.seq));
      if (r.t_response_us < r.t_command_us) throw TraceError("response timestamp precedes command");
      if (out.header && r.session_id != out.header->session_id) throw TraceError("session id differs from header");
      out.records.push_back(std::move(r));
    } catch (const TraceError& e) {
      throw TraceError(at + e.what());
    }
  }
  return out;
}

TraceFile read_trace_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw TraceError("cannot open trace " + path);
  return read_trace(in);
}

std::string sha256_hex(ByteView data) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (EVP_Digest(data.data(), data.size(), md, &len, EVP_sha256(), nullptr) != 1) throw TraceError("SHA-256 failed");
  return to_hex(ByteView(md, len));
}

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw TraceError("cannot read " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string s = ss.str();
  return sha256_hex(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

JsonlWriter::JsonlWriter(const std::string& path, const SessionHeader& header)
    : owned_(std::make_unique<std::ofstream>(path, std::ios::trunc)), out_(owned_.get()) {
  if (!*out_) throw TraceError("cannot open trace output " + path);
  *out_ << to_jsonl(header) << '\n';
  out_->flush();
}

JsonlWriter::JsonlWriter(std::ostream& out, const SessionHeader& header) : out_(&out) {
  *out_ << to_jsonl(header) << '\n';
}

JsonlWriter::~JsonlWriter() {
  try {
    flush();
  } catch (...) {
  }
}

void JsonlWriter::append(const TraceRecord& r) {
  std::lock_guard lock(mu_);
  *out_ << to_jsonl(r) << '\n';
  if (!*out_) throw TraceError("trace write failed");
}

void JsonlWriter::flush() {
  std::lock_guard lock(mu_);
  out_->flush();
}

void MemorySink::append(const TraceRecord& r) {
  std::lock_guard lock(mu_);
  records_.push_back(r);
}

std::vector<TraceRecord> MemorySink::records() const {
  std::lock_guard lock(mu_);
  return records_;
}

void TeeSink::append(const TraceRecord& r) {
  for (auto& s : sinks_) s->append(r);
}

void TeeSink::flush() {
  for (auto& s : sinks_) s->flush();
}

void SessionTrace::record(TraceRecord r) {
  std::lock_guard lock(mu_);
  r.seq = next_seq_++;
  r.session_id = session_id_;
  if (sink_) sink_->append(r);
}

void SessionTrace::flush() {
  std::lock_guard lock(mu_);
  if (sink_) sink_->flush();
}

SessionHeader make_header(const Bytes& session_id, const std::string& role, Clock& clock) {
  SessionHeader h;
  h.session_id = session_id;
  h.role = role;
  h.mono_anchor_us = clock.now().count();
  h.wall_anchor_us = std::chrono::duration_cast<Micros>(std::chrono::system_clock::now().time_since_epoch()).count();
  return h;
}

} // namespace simtunnel::trace
