// Acceptance runner: one PASS/FAIL line per criterion, exit 1 if any fails.

#include <chrono>
#include <cstdio>
#include <functional>
#include <future>
#include <iostream>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "harness.hpp"
#include "sap_loopback.hpp"
#include "simtunnel/iso7816/atr.hpp"
#include "simtunnel/iso7816/pps.hpp"
#include "simtunnel/iso7816/t1.hpp"
#include "simtunnel/relay/frame.hpp"
#include "simtunnel/sap/codec.hpp"
#include "support.hpp"

using namespace simtunnel;
using simtunnel::testing::Stack;
using simtunnel::testing::StackOptions;
using iso7816::Protocol;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

class Check {
public:
  void expect(bool cond, const std::string& what) {
    if (!cond && first_.empty()) first_ = what;
    ok_ = ok_ && cond;
  }
  Verdict verdict(const std::string& summary) const { return {ok_, ok_ ? summary : first_}; }
  bool ok() const { return ok_; }

private:
  bool ok_ = true;
  std::string first_;
};

using Pairs = std::vector<std::pair<Bytes, Bytes>>;

Pairs exchanges(const std::vector<trace::TraceRecord>& records) {
  Pairs out;
  for (const auto& r : records) out.emplace_back(r.command, r.response);
  return out;
}

std::string proto_name(Protocol p) { return p == Protocol::T0 ? "T=0" : "T=1"; }

std::uint16_t sw_of(const Bytes& r) { return r.size() < 2 ? 0 : be16(r[r.size() - 2], r[r.size() - 1]); }

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------- 1

std::vector<std::string> twenty_commands() {
  std::vector<std::string> c = {
      "A0A40000023F00", "A0A40000022FE2", "A0B000000A", "A0A40000027F20", "A0A40000026F07", "A0B0000009",
      "A08800001000112233445566778899aabbccddeeff", "A0C000000C",
      "A088000010ffeeddccbbaa99887766554433221100", "A0C000000C"};
  while (c.size() < 20) c.push_back("A0F200000D");
  return c;
}

struct LatencyRun {
  std::vector<Bytes> responses;
  int waits = 0;
};

LatencyRun run_latency(Protocol proto, Micros latency, Clock* clock) {
  StackOptions o;
  o.protocol = proto;
  o.latency = latency;
  o.clock = clock;
  Stack s(std::move(o));
  LatencyRun r;
  for (const auto& c : twenty_commands()) r.responses.push_back(s.transmit_hex(c));
  r.waits = s.modem().waits_observed();
  return r;
}

Verdict criterion_latency() {
  Check check;
  const auto t0 = std::chrono::steady_clock::now();
  // both protocols at once; the delay is sleep, not CPU
  auto t0_slow = std::async(std::launch::async, run_latency, Protocol::T0, Micros{1'000'000}, nullptr);
  auto t1_slow = std::async(std::launch::async, run_latency, Protocol::T1, Micros{1'000'000}, nullptr);
  const LatencyRun slow[2] = {t0_slow.get(), t1_slow.get()};
  const double real_s = seconds_since(t0);

  std::ostringstream note;
  int i = 0;
  for (auto proto : {Protocol::T0, Protocol::T1}) {
    const LatencyRun base = run_latency(proto, Micros{0}, nullptr);
    const LatencyRun& s = slow[i++];
    check.expect(s.responses == base.responses, proto_name(proto) + ": responses differ from the 0 ms run");
    for (std::size_t k = 0; k < s.responses.size(); ++k) {
      const auto sw = sw_of(s.responses[k]);
      check.expect(sw == 0x9000 || (sw >> 8) == 0x61 || (sw >> 8) == 0x9F,
                   proto_name(proto) + ": command " + std::to_string(k + 1) + " failed with " + to_hex(s.responses[k]));
    }
    check.expect(s.waits > 0, proto_name(proto) + ": no NULL/WTX waits seen at 1000 ms");
    note << proto_name(proto) << " waits=" << s.waits << " ";

    const auto v0 = std::chrono::steady_clock::now();
    ManualClock virt;
    const LatencyRun fake = run_latency(proto, Micros{1'000'000}, &virt);
    const double fake_s = seconds_since(v0);
    check.expect(fake.responses == base.responses, proto_name(proto) + ": fake-clock responses differ");
    check.expect(fake_s < 1.0, proto_name(proto) + ": fake-clock run took " + std::to_string(fake_s) + " s");
    check.expect(virt.now() >= Micros{20'000'000}, proto_name(proto) + ": fake clock did not advance 20 s");
  }
  check.expect(real_s < 60.0, "real-clock runs took " + std::to_string(real_s) + " s");
  note << "real " << static_cast<int>(real_s) << " s";
  return check.verdict("20 commands at 1000 ms, identical to 0 ms; " + note.str());
}

// ---------------------------------------------------------------- 2

struct GoldenRun {
  std::vector<Bytes> responses;
  Pairs probe_side, provider_side;
};

GoldenRun run_golden(Protocol proto, relay::BackendFactory backend = {}) {
  StackOptions o;
  o.protocol = proto;
  o.backend = std::move(backend);
  Stack s(std::move(o));
  GoldenRun g;
  for (const auto& [cmd, expected] : simtunnel::testing::golden_session()) g.responses.push_back(s.transmit_hex(cmd));
  s.finish();
  g.probe_side = exchanges(s.probe_records());
  g.provider_side = exchanges(s.provider_records());
  return g;
}

Verdict criterion_protocols() {
  Check check;
  const auto golden = simtunnel::testing::golden_session();
  GoldenRun runs[2];
  int i = 0;
  for (auto proto : {Protocol::T0, Protocol::T1}) {
    GoldenRun& g = runs[i++];
    g = run_golden(proto);
    for (std::size_t k = 0; k < golden.size(); ++k)
      check.expect(k < g.responses.size() && to_hex(g.responses[k]) == golden[k].second,
                   proto_name(proto) + ": " + golden[k].first + " answered " +
                       (k < g.responses.size() ? to_hex(g.responses[k]) : "nothing"));
    check.expect(g.probe_side == g.provider_side, proto_name(proto) + ": probe and provider traces differ");
  }
  check.expect(runs[0].probe_side == runs[1].probe_side, "T=0 and T=1 traces differ");
  return check.verdict(std::to_string(golden.size()) + " golden steps, identical traces on both endpoints and protocols");
}

// ---------------------------------------------------------------- 3

struct Layout {
  nlohmann::json doc;
  std::vector<std::pair<std::uint16_t, std::uint16_t>> efs; // (df, ef)
};

Layout random_layout(std::mt19937& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto hex = [&](int n) {
    Bytes b(static_cast<std::size_t>(n));
    for (auto& x : b) x = static_cast<std::uint8_t>(pick(0, 255));
    return to_hex(b);
  };
  auto id = [](int v) { return to_hex(Bytes{static_cast<std::uint8_t>(v >> 8), static_cast<std::uint8_t>(v)}); };
  Layout l;
  l.doc["files"] = nlohmann::json::array({{{"id", "3F00"}, {"kind", "mf"}}});
  const int dfs = pick(1, 3);
  int next_ef = 0x6F40;
  for (int d = 0; d < dfs; ++d) {
    const int df = 0x7F30 + d;
    l.doc["files"].push_back({{"id", id(df)}, {"kind", "df"}});
    for (int e = pick(1, 4); e > 0; --e) {
      const int ef = next_ef++;
      nlohmann::json f = {{"id", id(ef)}, {"parent", id(df)}};
      if (pick(0, 1)) {
        f["kind"] = "transparent";
        f["body"] = hex(pick(1, 64));
      } else {
        f["kind"] = "linear_fixed";
        const int len = pick(1, 30);
        f["records"] = nlohmann::json::array();
        for (int r = pick(1, 5); r > 0; --r) f["records"].push_back(hex(len));
      }
      if (pick(0, 4) == 0) f["read_only"] = true;
      l.doc["files"].push_back(f);
      l.efs.emplace_back(static_cast<std::uint16_t>(df), static_cast<std::uint16_t>(ef));
    }
  }
  return l;
}

std::vector<Bytes> random_ops(const Layout& l, std::mt19937& rng) {
  auto pick = [&](int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); };
  auto select = [](std::uint16_t fid) {
    return Bytes{0xA0, 0xA4, 0x00, 0x00, 0x02, static_cast<std::uint8_t>(fid >> 8), static_cast<std::uint8_t>(fid)};
  };
  std::vector<Bytes> ops;
  for (int n = pick(10, 30); n > 0; --n) {
    const auto& [df, ef] = l.efs[static_cast<std::size_t>(pick(0, static_cast<int>(l.efs.size()) - 1))];
    ops.push_back(select(0x3F00));
    ops.push_back(select(df));
    ops.push_back(select(ef));
    const auto len = static_cast<std::uint8_t>(pick(1, 40));
    Bytes data(len);
    for (auto& x : data) x = static_cast<std::uint8_t>(pick(0, 255));
    switch (pick(0, 3)) {
    case 0:
      ops.push_back({0xA0, 0xB0, 0x00, static_cast<std::uint8_t>(pick(0, 20)), len});
      break;
    case 1: {
      Bytes c{0xA0, 0xD6, 0x00, static_cast<std::uint8_t>(pick(0, 20)), len};
      append(c, data);
      ops.push_back(c);
      break;
    }
    case 2:
      ops.push_back({0xA0, 0xB2, static_cast<std::uint8_t>(pick(1, 6)), 0x04, len});
      break;
    default: {
      Bytes c{0xA0, 0xDC, static_cast<std::uint8_t>(pick(1, 6)), 0x04, len};
      append(c, data);
      ops.push_back(c);
    }
    }
  }
  return ops;
}

Verdict criterion_transparency() {
  Check check;
  std::mt19937 rng(0x7a5);
  const auto t0 = std::chrono::steady_clock::now();
  std::size_t total = 0;
  for (int session = 0; session < 100 && check.ok(); ++session) {
    const Layout l = random_layout(rng);
    StackOptions o;
    o.protocol = session % 2 ? Protocol::T1 : Protocol::T0;
    o.profile = std::make_shared<const vsim::SimProfile>(vsim::load_profile(l.doc));
    Stack s(std::move(o));
    for (const auto& c : random_ops(l, rng)) s.transmit(c);
    s.finish();
    const auto probe = s.probe_records();
    const auto provider = s.provider_records();
    total += probe.size();
    check.expect(!probe.empty() && exchanges(probe) == exchanges(provider),
                 "session " + std::to_string(session) + ": probe and provider traces differ");
  }
  const double secs = seconds_since(t0);
  check.expect(secs < 30.0, "took " + std::to_string(secs) + " s");
  return check.verdict("100 random sessions, " + std::to_string(total) + " exchanges identical at both ends, " +
                       std::to_string(static_cast<int>(secs * 1000)) + " ms");
}

// ---------------------------------------------------------------- 4

Verdict criterion_rewrite() {
  Check check;
  auto profile = simtunnel::testing::basic_profile("262011234567890");
  const std::string rule = R"([{"name": "imsi", "direction": "to_modem",
      "match": {"selected_file": "6f07", "ins": "b0"},
      "action": {"type": "replace_at", "offset": 1, "bytes": "0910101032547698"}, "enabled": %s}])";
  auto run = [&](bool enabled) {
    char doc[512];
    std::snprintf(doc, sizeof doc, rule.c_str(), enabled ? "true" : "false");
    StackOptions o;
    o.profile = profile;
    o.rules = rewrite::compile_rules_text(doc);
    Stack s(std::move(o));
    for (const char* c : {"A0A40000023F00", "A0A40000027F20", "A0A40000026F07"}) s.transmit_hex(c);
    const Bytes seen = s.transmit_hex("A0B0000009");
    s.finish();
    const auto recs = s.provider_records();
    const Bytes served = recs.empty() ? Bytes{} : recs.back().response;
    auto body = [](const Bytes& r) { return r.size() >= 2 ? Bytes(r.begin(), r.end() - 2) : Bytes{}; };
    return std::pair{simtunnel::testing::decode_imsi_oracle(body(seen)),
                     simtunnel::testing::decode_imsi_oracle(body(served))};
  };
  const auto [modem_on, served_on] = run(true);
  const auto [modem_off, served_off] = run(false);
  check.expect(served_on == "262011234567890", "provider served " + served_on);
  check.expect(modem_on == "001010123456789", "modem saw " + modem_on + " with the rule enabled");
  check.expect(modem_on != served_on, "rule did not change the IMSI");
  check.expect(modem_off == served_off, "disabled rule: modem saw " + modem_off + ", provider served " + served_off);
  return check.verdict("modem IMSI " + modem_on + " vs served " + served_on + "; disabled rule gives " + modem_off);
}

// ---------------------------------------------------------------- 5

Verdict criterion_proactive() {
  Check check;
  const Bytes command = from_hex("d00981030125008202818300");
  for (auto proto : {Protocol::T0, Protocol::T1}) {
    StackOptions o;
    o.protocol = proto;
    o.profile = simtunnel::testing::basic_profile("001010123456789", to_hex(command));
    Stack s(std::move(o));
    // STATUS until the exact length is known, as a terminal would
    Bytes status = s.transmit_hex("A0F2000016");
    if (status.size() == 2 && status[0] == 0x6C) status = s.transmit(Bytes{0xA0, 0xF2, 0x00, 0x00, status[1]});
    const std::uint8_t pending = status.size() >= 2 && status[status.size() - 2] == 0x91 ? status.back() : 0;
    check.expect(pending == command.size(), proto_name(proto) + ": STATUS did not signal the proactive command");
    const Bytes fetched = s.transmit(Bytes{0xA0, 0x12, 0x00, 0x00, pending});
    check.expect(fetched.size() == command.size() + 2 && std::equal(command.begin(), command.end(), fetched.begin()),
                 proto_name(proto) + ": FETCH returned " + to_hex(fetched));
    s.transmit_hex("A01400000C810301250082028281830100");
    s.transmit_hex("A0A40000023F00");
    s.finish();

    for (const auto& [side, recs] : {std::pair{"probe", s.probe_records()}, std::pair{"provider", s.provider_records()}}) {
      std::vector<std::string> seen;
      for (const auto& r : recs) {
        if (r.response.size() >= 2 && r.response[r.response.size() - 2] == 0x91) seen.push_back("91XX");
        if (r.command.size() >= 2 && r.command[1] == 0x12) seen.push_back("FETCH");
        if (r.command.size() >= 2 && r.command[1] == 0x14) seen.push_back("TERMINAL RESPONSE");
      }
      const std::vector<std::string> want{"91XX", "FETCH", "TERMINAL RESPONSE"};
      check.expect(seen == want, proto_name(proto) + " " + side + " trace order is wrong");
    }
  }
  return check.verdict("one 91XX, one FETCH, one TERMINAL RESPONSE in order, both protocols and both traces");
}

// ---------------------------------------------------------------- 6

constexpr int kFis[] = {372, 558, 744, 1116, 1488, 1860, 512, 768, 1024, 1536, 2048};
constexpr int kDis[] = {1, 2, 4, 8, 16, 32, 64, 12, 20};

std::vector<Bytes> split_oracle(const Bytes& data, std::size_t ifs) {
  std::vector<Bytes> out(1);
  for (auto b : data) {
    if (out.back().size() == ifs) out.emplace_back();
    out.back().push_back(b);
  }
  return out;
}

Verdict criterion_codecs() {
  using simtunnel::testing::random_bytes;
  using simtunnel::testing::uniform;
  using simtunnel::testing::xor_oracle;
  Check check;
  const auto t0 = std::chrono::steady_clock::now();

  for (int i = 0; i < 1000 && check.ok(); ++i) {
    iso7816::ProtocolParams p;
    p.fi = kFis[uniform(0, 10)];
    p.di = kDis[uniform(0, 8)];
    p.active_protocol = uniform(0, 1) ? Protocol::T1 : Protocol::T0;
    if (p.active_protocol == Protocol::T0) {
      p.wi = uniform(1, 255);
    } else {
      p.ifsc = uniform(1, 254);
      p.bwi = uniform(0, 9);
      p.cwi = uniform(0, 15);
    }
    const Bytes hist = random_bytes(static_cast<std::size_t>(uniform(0, 15)));
    const Bytes raw = iso7816::build_atr(p, hist);
    const auto atr = iso7816::parse_atr(raw);
    check.expect(atr.params() == p && atr.historical_bytes == hist, "ATR round trip failed for " + to_hex(raw));
    if (atr.tck) check.expect(xor_oracle(Bytes(raw.begin() + 1, raw.end())) == 0, "TCK does not cancel: " + to_hex(raw));
  }

  for (int i = 0; i < 1000 && check.ok(); ++i) {
    const Bytes x = random_bytes(static_cast<std::size_t>(uniform(0, 300)));
    check.expect(iso7816::lrc(x) == xor_oracle(x), "LRC differs from the XOR oracle");
    iso7816::PpsFrame f{uniform(0, 1) ? Protocol::T1 : Protocol::T0, std::nullopt};
    if (uniform(0, 1)) f.pps1 = static_cast<std::uint8_t>(uniform(0x11, 0x13));
    const Bytes pps = iso7816::encode_pps(f);
    check.expect(xor_oracle(pps) == 0 && iso7816::decode_pps(pps) == f, "PPS PCK/round trip failed: " + to_hex(pps));
  }

  for (int i = 0; i < 10000 && check.ok(); ++i) {
    relay::RelayMessage m{static_cast<relay::MsgType>(uniform(1, 9)), random_bytes(static_cast<std::size_t>(uniform(0, 600)))};
    const Bytes wire = relay::encode_message(m);
    std::size_t used = 0;
    check.expect(relay::decode_message(wire, used) == m && used == wire.size(), "relay frame round trip failed");
  }

  for (int i = 0; i < 10000 && check.ok(); ++i) {
    sap::SapMessage m;
    m.id = static_cast<std::uint8_t>(uniform(0, sap::msg::kLast));
    for (int k = uniform(0, 5); k > 0; --k)
      m.params.push_back({static_cast<std::uint8_t>(uniform(0, 0x10)), random_bytes(static_cast<std::size_t>(uniform(0, 300)))});
    const Bytes wire = sap::encode_sap(m);
    std::size_t used = 0;
    check.expect(sap::decode_sap(wire, used) == m && used == wire.size() && wire.size() % 4 == 0,
                 "SAP round trip failed");
  }

  for (std::size_t ifs : {1u, 31u, 32u, 254u}) {
    for (int i = 0; i < 100; ++i) {
      const Bytes data = random_bytes(static_cast<std::size_t>(uniform(0, 4096)));
      check.expect(iso7816::chain_chunks(data, ifs) == split_oracle(data, ifs),
                   "T=1 chunking differs at ifs " + std::to_string(ifs));
    }
  }
  const double secs = seconds_since(t0);
  check.expect(secs < 30.0, "took " + std::to_string(secs) + " s");
  return check.verdict("ATR x1000, LRC/PCK x1000, frames x10000, SAP x10000, chunking x400 in " +
                       std::to_string(static_cast<int>(secs * 1000)) + " ms");
}

// ---------------------------------------------------------------- 7

struct T1Pair {
  iso7816::LoopbackLink link;
  iso7816::T1Endpoint terminal;
  iso7816::T1Endpoint card;
  std::thread card_thread;

  explicit T1Pair(const iso7816::ProtocolParams& p)
      : terminal(link.terminal_end(), iso7816::T1Role::Terminal, p, {}),
        card(link.card_end(), iso7816::T1Role::Card, p, {}) {
    card_thread = std::thread([this] {
      try {
        while (card.serve_one([](const Bytes& cmd) {
          Bytes out(cmd.rbegin(), cmd.rend());
          append(out, from_hex("9000"));
          return out;
        })) {
        }
      } catch (...) {
      }
    });
  }
  ~T1Pair() {
    link.close();
    card_thread.join();
  }
};

Verdict criterion_faults() {
  Check check;
  iso7816::ProtocolParams p;
  p.active_protocol = Protocol::T1;
  std::mt19937 rng(7);
  Bytes payload(1024);
  for (auto& b : payload) b = static_cast<std::uint8_t>(rng());

  Bytes clean;
  std::uint64_t sends[2] = {0, 0};
  {
    T1Pair t(p);
    t.link.set_send_hook(iso7816::LinkDirection::ToCard, [&](std::uint64_t, Bytes&) { ++sends[0]; });
    t.link.set_send_hook(iso7816::LinkDirection::ToTerminal, [&](std::uint64_t, Bytes&) { ++sends[1]; });
    clean = t.terminal.transceive(payload);
  }
  int sessions = 0;
  for (auto dir : {iso7816::LinkDirection::ToCard, iso7816::LinkDirection::ToTerminal}) {
    const auto n = sends[dir == iso7816::LinkDirection::ToCard ? 0 : 1];
    for (std::uint64_t k = 0; k < n; ++k) {
      T1Pair t(p);
      t.link.set_send_hook(dir, [k](std::uint64_t idx, Bytes& b) {
        if (idx == k) b[b.size() / 2] ^= 0x40; // one flipped bit inside the block
      });
      Bytes got;
      try {
        got = t.terminal.transceive(payload);
      } catch (const std::exception& e) {
        check.expect(false, std::string("block ") + std::to_string(k) + ": " + e.what());
        continue;
      }
      ++sessions;
      check.expect(got == clean, std::string(dir == iso7816::LinkDirection::ToCard ? "to-card" : "to-terminal") +
                                     " block " + std::to_string(k) + ": transcript differs");
      check.expect(t.terminal.retransmissions() + t.card.retransmissions() >= 1,
                   "block " + std::to_string(k) + ": corruption went unnoticed");
    }
  }
  return check.verdict(std::to_string(sessions) + " corrupted 1 KiB transfers (" + std::to_string(sends[0]) +
                       " to-card and " + std::to_string(sends[1]) + " to-terminal positions) all recovered");
}

// ---------------------------------------------------------------- 8

Verdict criterion_sap() {
  Check check;
  auto profile = simtunnel::testing::basic_profile();
  for (auto proto : {Protocol::T0, Protocol::T1}) {
    const GoldenRun direct = run_golden(proto, [profile] { return std::make_unique<vsim::VsimBackend>(profile); });
    const GoldenRun via_sap =
        run_golden(proto, [profile] { return std::make_unique<simtunnel::testing::SapLoopback>(profile); });
    check.expect(via_sap.responses == direct.responses, proto_name(proto) + ": modem-visible responses differ");
    check.expect(via_sap.provider_side == direct.provider_side, proto_name(proto) + ": provider traces differ");
    check.expect(via_sap.probe_side == direct.probe_side, proto_name(proto) + ": probe traces differ");
  }
  return check.verdict("golden session identical through SAP and direct vsim on both protocols");
}

} // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"latency resilience", criterion_latency},  {"both protocols", criterion_protocols},
      {"transparency", criterion_transparency},   {"IMSI rewriting", criterion_rewrite},
      {"proactive observation", criterion_proactive}, {"codec oracles", criterion_codecs},
      {"T=1 fault tolerance", criterion_faults},  {"SAP equivalence", criterion_sap},
  };
  int failed = 0;
  int n = 0;
  for (const auto& [name, fn] : criteria) {
    ++n;
    Verdict v;
    try {
      v = fn();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::cout << "criterion " << n << " " << name << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << std::endl;
  }
  return failed ? 1 : 0;
}
