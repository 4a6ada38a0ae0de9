#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <memory>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>

#include "simtunnel/bytes.hpp"

namespace simtunnel {

/// Raised when the peer closed the stream. `bytes_read` tells how far a
/// read_exact() got, so framing layers can tell a clean close from a cut frame.
class StreamClosed : public std::runtime_error {
public:
  explicit StreamClosed(std::size_t bytes_read = 0)
      : std::runtime_error("stream closed"), bytes_read(bytes_read) {}
  std::size_t bytes_read;
};

class NetError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Ordered, reliable byte stream (TCP socket, in-memory pipe, ...).
class ByteStream {
public:
  virtual ~ByteStream() = default;
  virtual void write_all(ByteView data) = 0;
  virtual void read_exact(std::span<std::uint8_t> out) = 0;
  /// True once at least one byte (or EOF) is pending.
  virtual bool wait_readable(std::chrono::milliseconds timeout) = 0;
  /// Shuts both directions down and wakes blocked readers.
  virtual void close() = 0;

  Bytes read_bytes(std::size_t n) {
    Bytes out(n);
    read_exact(out);
    return out;
  }
};

/// Two connected in-memory streams.
std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_memory_stream_pair();

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;
  std::string to_string() const { return host + ":" + std::to_string(port); }
};

/// "host:port", ":port" or "host". Missing parts take the defaults.
Endpoint parse_endpoint(const std::string& text, std::uint16_t default_port,
                        const std::string& default_host = "127.0.0.1");

class TcpStream final : public ByteStream {
public:
  explicit TcpStream(int fd);
  ~TcpStream() override;
  TcpStream(const TcpStream&) = delete;
  TcpStream& operator=(const TcpStream&) = delete;

  static std::unique_ptr<TcpStream> connect(const Endpoint& ep,
                                            std::chrono::milliseconds timeout = std::chrono::seconds(5));

  void write_all(ByteView data) override;
  void read_exact(std::span<std::uint8_t> out) override;
  bool wait_readable(std::chrono::milliseconds timeout) override;
  void close() override;

private:
  int fd_;
  std::mutex write_mu_;
};

class TcpListener {
public:
  /// Binds and listens; port 0 picks an ephemeral port. Throws NetError.
  explicit TcpListener(const Endpoint& ep);
  ~TcpListener();
  TcpListener(const TcpListener&) = delete;
  TcpListener& operator=(const TcpListener&) = delete;

  std::uint16_t port() const { return port_; }
  /// Returns nullptr on timeout or after close().
  std::unique_ptr<TcpStream> accept(std::chrono::milliseconds timeout);
  void close();

private:
  int fd_;
  std::uint16_t port_ = 0;
};

} // namespace simtunnel
