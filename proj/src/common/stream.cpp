#include "simtunnel/stream.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <atomic>
#include <cerrno>
#include <cstring>

namespace simtunnel {
namespace {

struct Pipe {
  std::mutex mu;
  std::condition_variable cv;
  std::deque<std::uint8_t> data;
  bool closed = false;
};

class MemoryStream final : public ByteStream {
public:
  MemoryStream(std::shared_ptr<Pipe> in, std::shared_ptr<Pipe> out)
      : in_(std::move(in)), out_(std::move(out)) {}
  ~MemoryStream() override { close(); }

  void write_all(ByteView data) override {
    std::lock_guard lk(out_->mu);
    if (out_->closed) throw StreamClosed();
    out_->data.insert(out_->data.end(), data.begin(), data.end());
    out_->cv.notify_all();
  }

  void read_exact(std::span<std::uint8_t> out) override {
    std::unique_lock lk(in_->mu);
    std::size_t got = 0;
    while (got < out.size()) {
      in_->cv.wait(lk, [&] { return !in_->data.empty() || in_->closed; });
      if (in_->data.empty()) throw StreamClosed(got);
      while (got < out.size() && !in_->data.empty()) {
        out[got++] = in_->data.front();
        in_->data.pop_front();
      }
    }
  }

  bool wait_readable(std::chrono::milliseconds timeout) override {
    std::unique_lock lk(in_->mu);
    return in_->cv.wait_for(lk, timeout, [&] { return !in_->data.empty() || in_->closed; });
  }

  void close() override {
    for (auto& p : {in_, out_}) {
      std::lock_guard lk(p->mu);
      p->closed = true;
      p->cv.notify_all();
    }
  }

private:
  std::shared_ptr<Pipe> in_;
  std::shared_ptr<Pipe> out_;
};

std::string errno_text(const char* what) {
  return std::string(what) + ": " + std::strerror(errno);
}

sockaddr_in resolve(const Endpoint& ep) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(ep.port);
  std::string host = ep.host.empty() ? "0.0.0.0" : ep.host;
  if (host == "localhost") host = "127.0.0.1";
  if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) == 1) return addr;

  addrinfo hints{};
  hints.ai_family = AF_INET;
  hints.ai_socktype = SOCK_STREAM;
  addrinfo* res = nullptr;
  if (getaddrinfo(host.c_str(), nullptr, &hints, &res) != 0 || !res)
    throw NetError("cannot resolve host '" + host + "'");
  addr.sin_addr = reinterpret_cast<sockaddr_in*>(res->ai_addr)->sin_addr;
  freeaddrinfo(res);
  return addr;
}

} // namespace

std::pair<std::unique_ptr<ByteStream>, std::unique_ptr<ByteStream>> make_memory_stream_pair() {
  auto a = std::make_shared<Pipe>();
  auto b = std::make_shared<Pipe>();
  return {std::make_unique<MemoryStream>(a, b), std::make_unique<MemoryStream>(b, a)};
}

Endpoint parse_endpoint(const std::string& text, std::uint16_t default_port,
                        const std::string& default_host) {
  Endpoint ep{default_host, default_port};
  if (text.empty()) return ep;
  auto colon = text.rfind(':');
  if (colon == std::string::npos) {
    ep.host = text;
    return ep;
  }
  if (colon > 0) ep.host = text.substr(0, colon);
  std::string port = text.substr(colon + 1);
  if (!port.empty()) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
      v = std::stoul(port, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != port.size() || v > 65535) throw NetError("invalid port in '" + text + "'");
    ep.port = static_cast<std::uint16_t>(v);
  }
  return ep;
}

TcpStream::TcpStream(int fd) : fd_(fd) {
  int one = 1;
  ::setsockopt(fd_, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
}

TcpStream::~TcpStream() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpStream> TcpStream::connect(const Endpoint& ep, std::chrono::milliseconds timeout) {
  sockaddr_in addr = resolve(ep);
  int fd = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd < 0) throw NetError(errno_text("socket"));

  int flags = ::fcntl(fd, F_GETFL, 0);
  ::fcntl(fd, F_SETFL, flags | O_NONBLOCK);
  int rc = ::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr));
  if (rc < 0 && errno != EINPROGRESS) {
    auto msg = errno_text("connect");
    ::close(fd);
    throw NetError(msg + " (" + ep.to_string() + ")");
  }
  if (rc < 0) {
    pollfd p{fd, POLLOUT, 0};
    rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
    int err = 0;
    socklen_t len = sizeof(err);
    ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &len);
    if (rc <= 0 || err != 0) {
      ::close(fd);
      throw NetError("connect to " + ep.to_string() + " failed: " +
                     (rc == 0 ? std::string("timeout") : std::string(std::strerror(err))));
    }
  }
  ::fcntl(fd, F_SETFL, flags);
  return std::make_unique<TcpStream>(fd);
}

void TcpStream::write_all(ByteView data) {
  std::lock_guard lk(write_mu_);
  std::size_t off = 0;
  while (off < data.size()) {
    ssize_t n = ::send(fd_, data.data() + off, data.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw StreamClosed();
    }
    off += static_cast<std::size_t>(n);
  }
}

void TcpStream::read_exact(std::span<std::uint8_t> out) {
  std::size_t got = 0;
  while (got < out.size()) {
    ssize_t n = ::recv(fd_, out.data() + got, out.size() - got, 0);
    if (n < 0 && errno == EINTR) continue;
    if (n <= 0) throw StreamClosed(got);
    got += static_cast<std::size_t>(n);
  }
}

bool TcpStream::wait_readable(std::chrono::milliseconds timeout) {
  pollfd p{fd_, POLLIN, 0};
  int rc = ::poll(&p, 1, static_cast<int>(timeout.count()));
  return rc > 0;
}

void TcpStream::close() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

TcpListener::TcpListener(const Endpoint& ep) {
  sockaddr_in addr = resolve(ep);
  fd_ = ::socket(AF_INET, SOCK_STREAM | SOCK_CLOEXEC, 0);
  if (fd_ < 0) throw NetError(errno_text("socket"));
  int one = 1;
  ::setsockopt(fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
  if (::bind(fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) < 0 || ::listen(fd_, 16) < 0) {
    auto msg = errno_text("bind/listen") + " (" + ep.to_string() + ")";
    ::close(fd_);
    fd_ = -1;
    throw NetError(msg);
  }
  socklen_t len = sizeof(addr);
  ::getsockname(fd_, reinterpret_cast<sockaddr*>(&addr), &len);
  port_ = ntohs(addr.sin_port);
}

TcpListener::~TcpListener() {
  if (fd_ >= 0) ::close(fd_);
}

std::unique_ptr<TcpStream> TcpListener::accept(std::chrono::milliseconds timeout) {
  if (fd_ < 0) return nullptr;
  pollfd p{fd_, POLLIN, 0};
  if (::poll(&p, 1, static_cast<int>(timeout.count())) <= 0) return nullptr;
  if (p.revents & (POLLERR | POLLHUP | POLLNVAL)) return nullptr;
  int fd = ::accept4(fd_, nullptr, nullptr, SOCK_CLOEXEC);
  if (fd < 0) return nullptr;
  return std::make_unique<TcpStream>(fd);
}

void TcpListener::close() {
  if (fd_ >= 0) ::shutdown(fd_, SHUT_RDWR);
}

} // namespace simtunnel
