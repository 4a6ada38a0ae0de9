#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <list>
#include <mutex>
#include <ostream>
#include <thread>

#include <pthread.h>

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include "cli.hpp"
#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/iso7816/atr.hpp"
#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/errors.hpp"
#include "simtunnel/modem/script.hpp"
#include "simtunnel/modem/virtual_modem.hpp"
#include "simtunnel/relay/connection.hpp"
#include "simtunnel/relay/probe.hpp"
#include "simtunnel/relay/provider.hpp"
#include "simtunnel/rewrite/rules.hpp"
#include "simtunnel/sap/client.hpp"
#include "simtunnel/sap/server.hpp"
#include "simtunnel/trace/gsmtap.hpp"
#include "simtunnel/trace/replay.hpp"
#include "simtunnel/trace/trace.hpp"
#include "simtunnel/vsim/card.hpp"
#include "simtunnel/vsim/profile.hpp"

namespace simtunnel::cli {
namespace {

constexpr std::uint16_t kRelayPort = 7816;

struct ProvideSettings {
  std::string config, profile, sap, listen = ":7816", trace, gsmtap, deadline = "30s";
};

struct ProbeSettings {
  std::string config, connect = "127.0.0.1:7816", rules, trace, gsmtap, protocol = "t0", latency = "0ms",
                      null_interval = "200ms", virtual_modem, atr_mode = "synthetic";
};

struct ReplaySettings {
  std::string config, trace, connect, profile;
  bool paced = false;
};

struct DecodeSettings {
  std::string trace, atr, apdu, response;
};

struct SapServerSettings {
  std::string config, profile, listen = ":7817";
};

// Blocks SIGINT/SIGTERM for this thread and every thread started after it,
// so the waiting thread can pick them up with sigwait.
class SignalGate {
public:
  SignalGate() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, &old_);
  }
  ~SignalGate() { pthread_sigmask(SIG_SETMASK, &old_, nullptr); }
  int wait() {
    int sig = 0;
    sigwait(&set_, &sig);
    return sig;
  }

private:
  sigset_t set_{};
  sigset_t old_{};
};

std::shared_ptr<const vsim::SimProfile> load_profile_or_fail(const std::string& path) {
  try {
    return std::make_shared<const vsim::SimProfile>(vsim::load_profile_file(path));
  } catch (const std::exception& e) {
    throw CliError(kConfig, "profile " + path + ": " + e.what());
  }
}

Endpoint endpoint_or_fail(const std::string& text, std::uint16_t port, const std::string& host) {
  try {
    return parse_endpoint(text, port, host);
  } catch (const NetError& e) {
    throw CliError(kConfig, e.what());
  }
}

std::unique_ptr<TcpListener> listen_or_fail(const Endpoint& ep) {
  try {
    return std::make_unique<TcpListener>(ep);
  } catch (const NetError& e) {
    throw CliError(kBind, "cannot listen on " + ep.to_string() + ": " + e.what());
  }
}

std::shared_ptr<trace::GsmtapExporter> gsmtap_or_fail(const std::string& dest) {
  if (dest.empty()) return nullptr;
  try {
    return std::make_shared<trace::GsmtapExporter>(
        std::make_unique<trace::UdpSender>(endpoint_or_fail(dest, trace::kGsmtapPort, "127.0.0.1")));
  } catch (const NetError& e) {
    throw CliError(kConfig, std::string("gsmtap: ") + e.what());
  }
}

/// "{session}" in the path is replaced by the session id; otherwise the
/// first session gets the path itself and later ones a ".N" suffix.
std::string trace_path(const std::string& pattern, const Bytes& session, int n) {
  const auto pos = pattern.find("{session}");
  if (pos != std::string::npos) return pattern.substr(0, pos) + to_hex(session) + pattern.substr(pos + 9);
  return n == 1 ? pattern : pattern + "." + std::to_string(n);
}

std::shared_ptr<relay::Connection> dial_provider(const std::string& where, relay::SessionId& id) {
  const Endpoint ep = endpoint_or_fail(where, kRelayPort, "127.0.0.1");
  try {
    auto conn = std::make_shared<relay::Connection>(TcpStream::connect(ep));
    id = relay::random_session_id();
    relay::handshake(*conn, relay::Role::Probe, id);
    return conn;
  } catch (const std::exception& e) {
    throw CliError(kTunnel, "cannot reach provider at " + ep.to_string() + ": " + e.what());
  }
}

int cmd_provide(const ProvideSettings& s, std::ostream& out) {
  if (s.profile.empty() == s.sap.empty()) throw CliError(kConfig, "give exactly one of --profile or --sap");
  relay::ProviderPolicy policy;
  policy.response_deadline = parse_duration(s.deadline);

  relay::BackendFactory backends;
  std::optional<std::string> profile_sha;
  if (!s.profile.empty()) {
    auto profile = load_profile_or_fail(s.profile);
    profile_sha = trace::sha256_file(s.profile);
    backends = [profile] { return std::make_unique<vsim::VsimBackend>(profile); };
  } else {
    const Endpoint sap_ep = endpoint_or_fail(s.sap, sap::kDefaultPort, "127.0.0.1");
    backends = [sap_ep] { return sap::connect_sap_tcp(sap_ep); };
  }

  auto gsmtap = gsmtap_or_fail(s.gsmtap);
  std::mutex writers_mu;
  std::list<std::shared_ptr<trace::TraceSink>> writers;
  int sessions = 0;
  relay::TraceFactory traces;
  if (!s.trace.empty() || gsmtap) {
    traces = [&](const relay::SessionId& sid) {
      const Bytes id(sid.begin(), sid.end());
      std::vector<std::shared_ptr<trace::TraceSink>> sinks;
      if (gsmtap) sinks.push_back(gsmtap);
      if (!s.trace.empty()) {
        std::lock_guard lock(writers_mu);
        auto header = trace::make_header(id, "provider", system_clock());
        header.profile_sha256 = profile_sha;
        auto w = std::make_shared<trace::JsonlWriter>(trace_path(s.trace, id, ++sessions), header);
        writers.push_back(w);
        sinks.push_back(w);
      }
      return std::make_shared<trace::SessionTrace>(std::make_shared<trace::TeeSink>(std::move(sinks)), id);
    };
  }

  SignalGate gate;
  auto listener = listen_or_fail(endpoint_or_fail(s.listen, kRelayPort, "0.0.0.0"));
  relay::Provider provider(backends, policy, traces);
  std::thread server([&] { provider.serve(*listener); });
  out << "provider listening on port " << listener->port() << std::endl;
  spdlog::info("provider listening on port {}", listener->port());

  const int sig = gate.wait();
  spdlog::info("signal {}: shutting down", sig);
  provider.stop();
  server.join();
  {
    std::lock_guard lock(writers_mu);
    for (auto& w : writers) w->flush();
  }
  const auto st = provider.stats();
  out << "sessions " << st.sessions << " apdus " << st.apdus << " errors " << st.errors << std::endl;
  return kOk;
}

int cmd_probe(const ProbeSettings& s, std::ostream& out) {
  if (s.virtual_modem.empty())
    throw CliError(kConfig, "no modem attachment: pass --virtual-modem <script>");
  relay::ProbePolicy policy;
  if (s.protocol == "t0" || s.protocol == "T0")
    policy.params.active_protocol = iso7816::Protocol::T0;
  else if (s.protocol == "t1" || s.protocol == "T1")
    policy.params.active_protocol = iso7816::Protocol::T1;
  else
    throw CliError(kConfig, "--protocol must be t0 or t1");
  if (s.atr_mode == "synthetic")
    policy.atr_mode = relay::AtrMode::Synthetic;
  else if (s.atr_mode == "mirror")
    policy.atr_mode = relay::AtrMode::MirrorHistorical;
  else
    throw CliError(kConfig, "--atr-mode must be synthetic or mirror");
  policy.null_interval = parse_duration(s.null_interval);
  const Micros latency = parse_duration(s.latency);

  std::vector<rewrite::Rule> rules;
  std::optional<std::string> rules_sha;
  if (!s.rules.empty()) {
    try {
      rules = rewrite::compile_rules_file(s.rules);
      rules_sha = trace::sha256_file(s.rules);
    } catch (const std::exception& e) {
      throw CliError(kConfig, "rules " + s.rules + ": " + e.what());
    }
  }
  modem::Script script;
  try {
    script = modem::parse_script_file(s.virtual_modem);
  } catch (const std::exception& e) {
    throw CliError(kConfig, "script " + s.virtual_modem + ": " + e.what());
  }
  auto gsmtap = gsmtap_or_fail(s.gsmtap);

  relay::SessionId sid{};
  auto conn = dial_provider(s.connect, sid);
  const Bytes id(sid.begin(), sid.end());

  std::vector<std::shared_ptr<trace::TraceSink>> sinks;
  if (gsmtap) sinks.push_back(gsmtap);
  if (!s.trace.empty()) {
    auto header = trace::make_header(id, "probe", system_clock());
    header.rules_sha256 = rules_sha;
    try {
      sinks.push_back(std::make_shared<trace::JsonlWriter>(s.trace, header));
    } catch (const std::exception& e) {
      throw CliError(kConfig, "trace " + s.trace + ": " + e.what());
    }
  }
  auto tee = std::make_shared<trace::TeeSink>(sinks);
  trace::SessionTrace session_trace(tee, id);

  relay::TunnelBackend tunnel(conn, {latency, latency + Micros{35'000'000}, nullptr});
  rewrite::Engine engine(rules);
  iso7816::LoopbackLink link;
  relay::Probe probe(tunnel, link.card_end(), policy, &engine, &session_trace);
  relay::ProbeStats stats;
  std::thread probe_thread([&] {
    try {
      stats = probe.run();
    } catch (const std::exception& e) {
      spdlog::error("probe: {}", e.what());
      stats.tunnel_lost = true;
      link.close();
    }
  });

  modem::ScriptResult result;
  bool powered = false;
  try {
    modem::VirtualModem modem(link.terminal_end());
    modem.power_on();
    powered = true;
    result = modem::run_script(script, [&](const Bytes& cmd) { return modem.transmit(cmd); });
  } catch (const std::exception& e) {
    spdlog::error("virtual modem: {}", e.what());
  }
  link.close();
  probe_thread.join();
  conn->close();
  session_trace.flush();

  out << modem::format_result(result);
  if (!powered || stats.tunnel_lost) {
    out << "tunnel failure" << (conn->close_reason().empty() ? "" : ": " + conn->close_reason()) << "\n";
    return kTunnel;
  }
  return result.ok() ? kOk : kMismatch;
}

std::string describe_record(const trace::TraceRecord& r) {
  std::string line = "#" + std::to_string(r.seq) + " " + apdu::describe_raw(r.command, &r.response);
  if (r.synthesized) line += " [synthesized]";
  if (r.rewritten_command || r.rewritten_response) line += " [rewritten]";
  for (const auto& t : r.tags) line += " {" + t + "}";
  return line;
}

int cmd_decode(const DecodeSettings& s, std::ostream& out) {
  const int given = !s.trace.empty() + !s.atr.empty() + !s.apdu.empty();
  if (given != 1) throw CliError(kConfig, "give exactly one of a trace file, --atr or --apdu");
  try {
    if (!s.atr.empty()) {
      out << iso7816::describe_atr(iso7816::parse_atr(from_hex(s.atr)));
      return kOk;
    }
    if (!s.apdu.empty()) {
      const Bytes cmd = from_hex(s.apdu);
      const Bytes resp = s.response.empty() ? Bytes{} : from_hex(s.response);
      out << apdu::describe_raw(cmd, s.response.empty() ? nullptr : &resp) << "\n";
      return kOk;
    }
    const trace::TraceFile file = trace::read_trace_file(s.trace);
    if (file.header) {
      out << "session " << to_hex(file.header->session_id) << " role " << file.header->role << " tool "
          << file.header->tool_version << "\n";
    }
    for (const auto& r : file.records) out << describe_record(r) << "\n";
    return kOk;
  } catch (const CliError&) {
    throw;
  } catch (const std::exception& e) {
    throw CliError(kConfig, e.what());
  }
}

int cmd_replay(const ReplaySettings& s, std::ostream& out) {
  if (s.connect.empty() == s.profile.empty()) throw CliError(kConfig, "give exactly one of --connect or --profile");
  trace::TraceFile file;
  try {
    file = trace::read_trace_file(s.trace);
  } catch (const std::exception& e) {
    throw CliError(kConfig, "trace " + s.trace + ": " + e.what());
  }
  std::unique_ptr<SimBackend> target;
  std::shared_ptr<relay::Connection> conn;
  if (!s.profile.empty()) {
    target = std::make_unique<vsim::VsimBackend>(load_profile_or_fail(s.profile));
  } else {
    relay::SessionId sid{};
    conn = dial_provider(s.connect, sid);
    target = std::make_unique<relay::TunnelBackend>(conn, relay::TunnelBackend::Options{});
  }
  trace::ReplayReport report;
  try {
    report = trace::replay(file, *target, {s.paced, nullptr});
  } catch (const relay::TunnelClosed& e) {
    throw CliError(kTunnel, std::string("tunnel closed during replay: ") + e.what());
  }
  if (conn) conn->close();
  out << trace::format_report(report);
  return report.ok() ? kOk : kMismatch;
}

int cmd_sap_server(const SapServerSettings& s, std::ostream& out) {
  if (s.profile.empty()) throw CliError(kConfig, "--profile is required");
  vsim::VsimBackend card(load_profile_or_fail(s.profile));
  sap::SapServer server(card);
  SignalGate gate;
  auto listener = listen_or_fail(endpoint_or_fail(s.listen, sap::kDefaultPort, "0.0.0.0"));
  std::atomic<bool> stop{false};
  std::thread worker([&] { server.serve_tcp(*listener, stop); });
  out << "sap server listening on port " << listener->port() << std::endl;
  gate.wait();
  stop = true;
  listener->close();
  worker.join();
  out << "apdus " << server.apdus().size() << std::endl;
  return kOk;
}

} // namespace

int run(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"SIM tunnel: relay SIM traffic between a modem and a remote card"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(trace::kToolVersion));

  ProvideSettings provide;
  auto* p = app.add_subcommand("provide", "terminate tunnel sessions on a SIM backend");
  p->add_option("--config", provide.config, "JSON file with the same keys as the flags");
  p->add_option("--profile", provide.profile, "virtual SIM profile (JSON)");
  p->add_option("--sap", provide.sap, "SAP server host:port to use as the card");
  p->add_option("--listen", provide.listen, "listen address [host]:port");
  p->add_option("--trace", provide.trace, "JSONL trace path; {session} expands to the session id");
  p->add_option("--gsmtap", provide.gsmtap, "host[:port] to mirror APDUs to as GSMTAP");
  p->add_option("--deadline", provide.deadline, "backend response deadline, e.g. 30s");

  ProbeSettings probe;
  auto* pr = app.add_subcommand("probe", "emulate the card towards a modem and relay to a provider");
  pr->add_option("--config", probe.config, "JSON file with the same keys as the flags");
  pr->add_option("--connect", probe.connect, "provider host:port");
  pr->add_option("--rules", probe.rules, "rewrite rules (JSON)");
  pr->add_option("--trace", probe.trace, "JSONL trace path");
  pr->add_option("--gsmtap", probe.gsmtap, "host[:port] to mirror APDUs to as GSMTAP");
  pr->add_option("--protocol", probe.protocol, "t0 or t1 towards the modem");
  pr->add_option("--latency", probe.latency, "artificial delay added to every tunnelled APDU");
  pr->add_option("--null-interval", probe.null_interval, "T=0 NULL byte period while waiting");
  pr->add_option("--atr-mode", probe.atr_mode, "synthetic or mirror");
  pr->add_option("--virtual-modem", probe.virtual_modem, "drive the card side from this command script");

  DecodeSettings decode;
  auto* d = app.add_subcommand("decode", "print a trace or a single ATR/APDU in readable form");
  d->add_option("trace", decode.trace, "JSONL trace file");
  d->add_option("--atr", decode.atr, "ATR hex");
  d->add_option("--apdu", decode.apdu, "command APDU hex");
  d->add_option("--response", decode.response, "response hex for --apdu");

  ReplaySettings replay;
  auto* r = app.add_subcommand("replay", "re-issue a recorded session and compare responses");
  r->add_option("--config", replay.config, "JSON file with the same keys as the flags");
  r->add_option("trace", replay.trace, "JSONL trace file")->required();
  r->add_option("--connect", replay.connect, "provider host:port");
  r->add_option("--profile", replay.profile, "virtual SIM profile (JSON)");
  r->add_flag("--paced", replay.paced, "keep the recorded gaps between commands");

  SapServerSettings sap_server;
  auto* ss = app.add_subcommand("sap-server", "serve a virtual SIM over SAP on TCP");
  ss->add_option("--config", sap_server.config, "JSON file with the same keys as the flags");
  ss->add_option("--profile", sap_server.profile, "virtual SIM profile (JSON)");
  ss->add_option("--listen", sap_server.listen, "listen address [host]:port");

  try {
    // Config values go in first so that explicit flags override them.
    std::vector<std::string> args(argv + 1, argv + argc);
    if (const std::string cfg = find_config_arg(args); !cfg.empty() && !args.empty()) {
      KeyTable keys;
      if (args[0] == "provide")
        keys = {{"profile", &provide.profile}, {"sap", &provide.sap},   {"listen", &provide.listen},
                {"trace", &provide.trace},     {"gsmtap", &provide.gsmtap}, {"deadline", &provide.deadline}};
      else if (args[0] == "probe")
        keys = {{"connect", &probe.connect},   {"rules", &probe.rules},       {"trace", &probe.trace},
                {"gsmtap", &probe.gsmtap},     {"protocol", &probe.protocol}, {"latency", &probe.latency},
                {"null_interval", &probe.null_interval}, {"atr_mode", &probe.atr_mode},
                {"virtual_modem", &probe.virtual_modem}};
      else if (args[0] == "replay")
        keys = {{"connect", &replay.connect}, {"profile", &replay.profile}, {"paced", &replay.paced}};
      else if (args[0] == "sap-server")
        keys = {{"profile", &sap_server.profile}, {"listen", &sap_server.listen}};
      else
        throw CliError(kConfig, "--config is not supported by '" + args[0] + "'");
      apply_config_file(cfg, keys);
    }

    try {
      app.parse(argc, argv);
    } catch (const CLI::Success& e) {
      return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
      throw CliError(kConfig, e.what());
    }

    if (p->parsed()) return cmd_provide(provide, out);
    if (pr->parsed()) return cmd_probe(probe, out);
    if (d->parsed()) return cmd_decode(decode, out);
    if (r->parsed()) return cmd_replay(replay, out);
    if (ss->parsed()) return cmd_sap_server(sap_server, out);
    throw CliError(kConfig, "no subcommand");
  } catch (const CliError& e) {
    err << "simtunnel: " << e.what() << "\n";
    return e.code;
  } catch (const std::exception& e) {
    err << "simtunnel: " << e.what() << "\n";
    return kInternal;
  }
}

} // namespace simtunnel::cli
