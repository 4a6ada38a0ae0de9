#pragma once

#include <atomic>
#include <functional>
#include <list>
#include <memory>
#include <mutex>
#include <thread>

#include "simtunnel/backend.hpp"
#include "simtunnel/relay/connection.hpp"
#include "simtunnel/trace/trace.hpp"

namespace simtunnel::relay {

struct ProviderPolicy {
  Micros response_deadline{30'000'000};
  Micros hello_timeout{10'000'000};
  ConnectionConfig connection;
};

using BackendFactory = std::function<std::unique_ptr<SimBackend>()>;
/// Called once per session after HELLO; may return nullptr for no trace.
using TraceFactory = std::function<std::shared_ptr<trace::SessionTrace>(const SessionId&)>;

ErrorCode to_error_code(BackendErrc e);

struct ProviderStats {
  std::uint64_t sessions = 0;
  std::uint64_t apdus = 0;
  std::uint64_t errors = 0;
  std::uint64_t resets = 0;
};

/// SIM-terminating end of the tunnel. Each session owns a fresh backend from
/// the factory and handles its messages strictly in order.
class Provider {
public:
  Provider(BackendFactory backends, ProviderPolicy policy = {}, TraceFactory traces = {}, Clock* clock = nullptr);
  ~Provider();

  /// Runs one session on an accepted stream until it closes.
  void serve_session(std::unique_ptr<ByteStream> stream);
  /// Accept loop; every session gets its own thread. Returns after stop().
  void serve(TcpListener& listener);
  /// Ends serve() and closes live sessions.
  void stop();

  ProviderStats stats() const;

private:
  BackendFactory backends_;
  ProviderPolicy policy_;
  TraceFactory traces_;
  Clock& clock_;
  std::atomic<bool> stopping_{false};
  mutable std::mutex mu_;
  std::list<Connection*> live_;
  TcpListener* listener_ = nullptr; ///< guarded by mu_; woken by stop()
  ProviderStats stats_;
};

} // namespace simtunnel::relay
