#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "simtunnel/bytes.hpp"
#include "simtunnel/clock.hpp"

namespace simtunnel::trace {

inline constexpr const char* kToolVersion = "0.1.0";

class TraceError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TraceRecord {
  std::uint64_t seq = 0;
  Bytes session_id;
  std::int64_t t_command_us = 0;
  std::int64_t t_response_us = 0;
  Bytes command;  ///< as forwarded to the card (post-rewrite)
  Bytes response; ///< as delivered to the modem (post-rewrite)
  std::vector<std::string> tags;
  bool rewritten_command = false;
  bool rewritten_response = false;
  std::optional<Bytes> original_command;
  std::optional<Bytes> original_response;
  bool synthesized = false; ///< answered locally, never reached the card

  friend bool operator==(const TraceRecord&, const TraceRecord&) = default;
};

struct SessionHeader {
  std::string tool_version = kToolVersion;
  Bytes session_id;
  std::string role;
  std::int64_t wall_anchor_us = 0; ///< Unix time when the session started
  std::int64_t mono_anchor_us = 0; ///< monotonic clock reading at the same moment
  std::optional<std::string> profile_sha256;
  std::optional<std::string> rules_sha256;

  friend bool operator==(const SessionHeader&, const SessionHeader&) = default;
};

std::string to_jsonl(const TraceRecord& r);
std::string to_jsonl(const SessionHeader& h);
/// Throws TraceError on malformed lines.
TraceRecord record_from_jsonl(const std::string& line);

struct TraceFile {
  std::optional<SessionHeader> header;
  std::vector<TraceRecord> records;
};

/// Validates seq (gapless, starting at 1), timestamps and session ids.
TraceFile read_trace(std::istream& in);
TraceFile read_trace_file(const std::string& path);

std::string sha256_hex(ByteView data);
/// SHA-256 of a file's bytes; throws TraceError if unreadable.
std::string sha256_file(const std::string& path);

class TraceSink {
public:
  virtual ~TraceSink() = default;
  virtual void append(const TraceRecord& r) = 0;
  virtual void flush() {}
};

class JsonlWriter final : public TraceSink {
public:
  /// Opens (truncates) `path` and writes the header line.
  JsonlWriter(const std::string& path, const SessionHeader& header);
  JsonlWriter(std::ostream& out, const SessionHeader& header);
  ~JsonlWriter() override;

  void append(const TraceRecord& r) override;
  void flush() override;

private:
  std::unique_ptr<std::ostream> owned_;
  std::ostream* out_;
  std::mutex mu_;
};

class MemorySink final : public TraceSink {
public:
  void append(const TraceRecord& r) override;
  std::vector<TraceRecord> records() const;

private:
  mutable std::mutex mu_;
  std::vector<TraceRecord> records_;
};

class TeeSink final : public TraceSink {
public:
  explicit TeeSink(std::vector<std::shared_ptr<TraceSink>> sinks) : sinks_(std::move(sinks)) {}
  void append(const TraceRecord& r) override;
  void flush() override;

private:
  std::vector<std::shared_ptr<TraceSink>> sinks_;
};

/// Assigns seq and session id, and serializes appends for one session.
class SessionTrace {
public:
  SessionTrace(std::shared_ptr<TraceSink> sink, Bytes session_id)
      : sink_(std::move(sink)), session_id_(std::move(session_id)) {}

  void record(TraceRecord r);
  void flush();
  const Bytes& session_id() const { return session_id_; }

private:
  std::shared_ptr<TraceSink> sink_;
  Bytes session_id_;
  std::mutex mu_;
  std::uint64_t next_seq_ = 1;
};

SessionHeader make_header(const Bytes& session_id, const std::string& role, Clock& clock);

} // namespace simtunnel::trace
