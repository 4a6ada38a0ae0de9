#include <gtest/gtest.h>

#include <random>

#include "harness.hpp"
#include "simtunnel/iso7816/atr.hpp"
#include "simtunnel/relay/connection.hpp"
#include "simtunnel/relay/frame.hpp"

using namespace simtunnel;
using namespace simtunnel::relay;
using simtunnel::testing::Stack;
using simtunnel::testing::StackOptions;

namespace {

RelayMessage decode_all(const Bytes& b) {
  std::size_t used = 0;
  auto m = decode_message(b, used);
  EXPECT_EQ(used, b.size());
  return m;
}

/// Hand-rolled reference framing parser: returns the declared frame sizes
/// and the error (if any) that ends the scan.
struct OracleScan {
  std::vector<std::size_t> frames;
  std::optional<FrameErrc> error;
};

OracleScan oracle_scan(const Bytes& s) {
  OracleScan out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    if (s[pos] < 1 || s[pos] > 9) {
      out.error = FrameErrc::UnknownType;
      return out;
    }
    if (s.size() - pos < 5) {
      out.error = FrameErrc::TruncatedStream;
      return out;
    }
    std::uint64_t n = 0;
    for (int i = 1; i <= 4; ++i) n = (n << 8) | s[pos + i];
    if (n >= (1u << 24)) {
      out.error = FrameErrc::OversizedFrame;
      return out;
    }
    if (s.size() - pos - 5 < n) {
      out.error = FrameErrc::TruncatedStream;
      return out;
    }
    out.frames.push_back(5 + n);
    pos += 5 + n;
  }
  return out;
}

} // namespace

TEST(RelayFrame, Examples) {
  EXPECT_EQ(encode_message({MsgType::Ping, {}}), from_hex("0800000000"));
  EXPECT_EQ(encode_message({MsgType::ApduRequest, from_hex("A0F20000")}), from_hex("0400000004A0F20000"));
  EXPECT_EQ(decode_all(from_hex("0400000004A0F20000")), (RelayMessage{MsgType::ApduRequest, from_hex("A0F20000")}));
}

TEST(RelayFrame, Errors) {
  std::size_t used = 0;
  try {
    decode_message(from_hex("7F00000000"), used);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.code, FrameErrc::UnknownType);
  }
  try {
    decode_message(from_hex("0401000000"), used);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.code, FrameErrc::OversizedFrame);
  }
  try {
    decode_message(from_hex("0400000004A0F2"), used);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.code, FrameErrc::TruncatedStream);
  }
  RelayMessage big{MsgType::ApduResponse, Bytes(kMaxPayload + 1)};
  EXPECT_THROW(encode_message(big), FrameError);
}

TEST(RelayFrame, RoundTripProperty) {
  std::mt19937 rng(7816);
  for (int i = 0; i < 10000; ++i) {
    RelayMessage m;
    m.type = static_cast<MsgType>(1 + rng() % 9);
    const std::size_t n = (i % 100 == 0) ? rng() % 70000 : rng() % 300;
    m.payload.resize(n);
    for (auto& b : m.payload) b = static_cast<std::uint8_t>(rng());
    const Bytes wire = encode_message(m);
    ASSERT_EQ(wire.size(), 5 + n);
    ASSERT_EQ(decode_all(wire), m);
  }
}

TEST(RelayFrame, ArbitraryStreamsDecodeDeterministically) {
  std::mt19937 rng(4711);
  for (int i = 0; i < 5000; ++i) {
    // Mostly-valid streams with occasional damage.
    Bytes s;
    const int frames = static_cast<int>(rng() % 4);
    for (int f = 0; f < frames; ++f) {
      Bytes payload(rng() % 12);
      for (auto& b : payload) b = static_cast<std::uint8_t>(rng());
      append(s, encode_message({static_cast<MsgType>(1 + rng() % 9), payload}));
    }
    if (rng() % 2 && !s.empty()) s[rng() % s.size()] = static_cast<std::uint8_t>(rng());
    if (rng() % 3 == 0 && !s.empty()) s.resize(rng() % s.size());

    const OracleScan want = oracle_scan(s);
    std::vector<std::size_t> got;
    std::optional<FrameErrc> err;
    std::size_t pos = 0;
    while (pos < s.size()) {
      std::size_t used = 0;
      try {
        decode_message(ByteView(s).subspan(pos), used);
      } catch (const FrameError& e) {
        err = e.code;
        break;
      }
      got.push_back(used);
      pos += used;
    }
    ASSERT_EQ(got, want.frames) << to_hex(s);
    ASSERT_EQ(err, want.error) << to_hex(s);
  }
}

TEST(RelayFrame, StreamReads) {
  auto [a, b] = make_memory_stream_pair();
  a->write_all(from_hex("0800000000" "0400000002A0F2" "04000000"));
  a->close();
  EXPECT_EQ(read_message(*b).type, MsgType::Ping);
  EXPECT_EQ(read_message(*b).payload, from_hex("A0F2"));
  try {
    read_message(*b);
    FAIL();
  } catch (const FrameError& e) {
    EXPECT_EQ(e.code, FrameErrc::TruncatedStream);
  }

  auto [c, d] = make_memory_stream_pair();
  c->close();
  EXPECT_THROW(read_message(*d), StreamClosed);
}

TEST(RelayHello, Codec) {
  Hello h{kProtocolVersion, Role::Provider, {}};
  for (int i = 0; i < 16; ++i) h.session_id[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(i * 17);
  Bytes wire = encode_hello(h);
  ASSERT_EQ(wire.size(), 18u);
  EXPECT_EQ(wire[0], 0x01);
  EXPECT_EQ(wire[1], 0x02);
  EXPECT_EQ(decode_hello(wire), h);
  wire.push_back(0xEE); // future extension
  EXPECT_EQ(decode_hello(wire), h);
  EXPECT_THROW(decode_hello(ByteView(wire).first(17)), FrameError);
  EXPECT_NE(random_session_id(), random_session_id());
}

// Keepalive schedule driven by virtual time.

TEST(RelayKeepalive, ResponsivePeerIdle35s) {
  Keepalive k({}, Micros{0});
  int pings = 0;
  for (std::int64_t t = 0; t <= 35'000'000; t += 100'000) {
    const Micros now{t};
    auto a = k.poll(now);
    ASSERT_NE(a, Keepalive::Action::Close);
    if (a == Keepalive::Action::SendPing) {
      k.on_ping_sent(now);
      ++pings;
      k.on_receive(now + Micros{5'000}); // PONG
    }
  }
  EXPECT_GE(pings, 3);
  EXPECT_EQ(k.outstanding(), 0);
}

TEST(RelayKeepalive, SilentPeerClosesAfterThreeMisses) {
  Keepalive k({}, Micros{0});
  std::vector<std::int64_t> ping_times;
  std::optional<std::int64_t> closed_at;
  for (std::int64_t t = 0; t <= 60'000'000 && !closed_at; t += 100'000) {
    const Micros now{t};
    switch (k.poll(now)) {
    case Keepalive::Action::SendPing:
      k.on_ping_sent(now);
      ping_times.push_back(t);
      break;
    case Keepalive::Action::Close:
      closed_at = t;
      break;
    case Keepalive::Action::None:
      break;
    }
  }
  EXPECT_EQ(ping_times, (std::vector<std::int64_t>{10'000'000, 20'000'000, 30'000'000}));
  ASSERT_TRUE(closed_at);
  EXPECT_EQ(*closed_at, 40'000'000); // 30 s after the first unanswered PING
}

TEST(RelayKeepalive, TrafficPostponesPing) {
  Keepalive k({}, Micros{0});
  k.on_receive(Micros{9'000'000});
  EXPECT_EQ(k.poll(Micros{10'000'000}), Keepalive::Action::None);
  EXPECT_EQ(k.poll(Micros{19'000'000}), Keepalive::Action::SendPing);
}

TEST(RelayConnection, AnswersPingToleratesPongPayload) {
  auto [a, b] = make_memory_stream_pair();
  ConnectionConfig cfg;
  cfg.keepalive_enabled = false;
  Connection conn(std::move(a), cfg);
  b->write_all(from_hex("0900000003AABBCC")); // PONG with a payload
  b->write_all(from_hex("080000000101"));     // PING with a payload
  EXPECT_EQ(read_message(*b), (RelayMessage{MsgType::Pong, {}}));
  b->write_all(encode_message({MsgType::ApduResponse, from_hex("9000")}));
  auto m = conn.receive(Micros{2'000'000});
  ASSERT_TRUE(m);
  EXPECT_EQ(m->type, MsgType::ApduResponse);
  EXPECT_EQ(conn.pongs_received(), 1);
  EXPECT_FALSE(conn.closed());
}

TEST(RelayConnection, UnknownTypeIsFatal) {
  auto [a, b] = make_memory_stream_pair();
  Connection conn(std::move(a));
  b->write_all(from_hex("7F00000000"));
  EXPECT_THROW(conn.receive(Micros{2'000'000}), TunnelClosed);
  EXPECT_NE(conn.close_reason().find("protocol error"), std::string::npos);
}

TEST(RelayConnection, KeepaliveOnRealTime) {
  ConnectionConfig fast;
  fast.keepalive = {Micros{40'000}, 3};

  // Responsive peer: another connection answers the PINGs.
  {
    auto [a, b] = make_memory_stream_pair();
    Connection left(std::move(a), fast);
    ConnectionConfig quiet;
    quiet.keepalive_enabled = false;
    Connection right(std::move(b), quiet);
    std::this_thread::sleep_for(std::chrono::milliseconds(400));
    EXPECT_FALSE(left.closed());
    EXPECT_GE(left.pings_sent(), 3);
    EXPECT_GE(left.pongs_received(), 3);
  }
  // Silent peer: bytes are read but never answered.
  {
    auto [a, b] = make_memory_stream_pair();
    Connection left(std::move(a), fast);
    const auto t0 = std::chrono::steady_clock::now();
    while (!left.closed() && std::chrono::steady_clock::now() - t0 < std::chrono::seconds(5)) {
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    EXPECT_TRUE(left.closed());
    EXPECT_EQ(left.pings_sent(), 3);
    EXPECT_NE(left.close_reason().find("keepalive"), std::string::npos);
  }
}

TEST(RelayHandshake, VersionAndRoleChecks) {
  {
    auto [a, b] = make_memory_stream_pair();
    Connection conn(std::move(a));
    Hello bad{0x02, Role::Provider, {}};
    b->write_all(encode_message({MsgType::Hello, encode_hello(bad)}));
    EXPECT_THROW(handshake(conn, Role::Probe, random_session_id()), RelayError);
    EXPECT_TRUE(conn.closed());
  }
  {
    auto [a, b] = make_memory_stream_pair();
    Connection conn(std::move(a));
    b->write_all(encode_message({MsgType::Hello, encode_hello({kProtocolVersion, Role::Probe, {}})}));
    EXPECT_THROW(handshake(conn, Role::Probe, random_session_id()), RelayError);
  }
  {
    auto [a, b] = make_memory_stream_pair();
    Connection conn(std::move(a));
    b->write_all(encode_message({MsgType::ApduRequest, from_hex("A0F20000")}));
    EXPECT_THROW(handshake(conn, Role::Probe, random_session_id()), RelayError);
  }
}

// Provider driven directly over a raw probe-side connection.

namespace {

struct RawProbe {
  explicit RawProbe(Provider& p) {
    auto [a, b] = make_memory_stream_pair();
    server = std::thread([&p, s = std::move(b)]() mutable { p.serve_session(std::move(s)); });
    conn = std::make_unique<Connection>(std::move(a));
    handshake(*conn, Role::Probe, random_session_id());
  }
  ~RawProbe() {
    conn->close();
    server.join();
  }
  RelayMessage ask(MsgType t, const Bytes& payload = {}) {
    conn->send({t, payload});
    auto m = conn->receive(Micros{10'000'000});
    EXPECT_TRUE(m);
    return m ? *m : RelayMessage{};
  }
  std::unique_ptr<Connection> conn;
  std::thread server;
};

class StallingBackend final : public SimBackend {
public:
  explicit StallingBackend(std::chrono::milliseconds stall) : stall_(stall) {}
  Bytes atr() override { return from_hex("3B00"); }
  Bytes transmit(const Bytes& c) override {
    if (c.size() > 1 && c[1] == 0xEE) std::this_thread::sleep_for(stall_);
    return from_hex("9000");
  }
  void reset() override {}

private:
  std::chrono::milliseconds stall_;
};

bool contains(const Bytes& hay, const Bytes& needle) {
  return std::search(hay.begin(), hay.end(), needle.begin(), needle.end()) != hay.end();
}

} // namespace

TEST(RelayProvider, AnswersAtrAndApdus) {
  auto profile = simtunnel::testing::basic_profile();
  Provider p([profile] { return std::make_unique<vsim::VsimBackend>(profile); });
  RawProbe probe(p);
  EXPECT_EQ(probe.ask(MsgType::AtrRequest), (RelayMessage{MsgType::AtrResponse, profile->atr}));
  EXPECT_EQ(probe.ask(MsgType::ApduRequest, from_hex("A0A40000023F00")), (RelayMessage{MsgType::ApduResponse, from_hex("9000")}));
}

TEST(RelayProvider, ResetReturnsToMf) {
  auto profile = simtunnel::testing::basic_profile();
  Provider p([profile] { return std::make_unique<vsim::VsimBackend>(profile); });
  RawProbe probe(p);
  probe.ask(MsgType::ApduRequest, from_hex("A0A40000027F20"));
  auto before = probe.ask(MsgType::ApduRequest, from_hex("A0F2000000"));
  EXPECT_TRUE(contains(before.payload, from_hex("83027F20")));
  EXPECT_EQ(probe.ask(MsgType::Reset).type, MsgType::AtrResponse);
  auto after = probe.ask(MsgType::ApduRequest, from_hex("A0F2000000"));
  EXPECT_TRUE(contains(after.payload, from_hex("83023F00"))) << to_hex(after.payload);
  EXPECT_EQ(p.stats().resets, 1u);
}

TEST(RelayProvider, StallPastDeadlineKeepsSessionOpen) {
  ProviderPolicy policy;
  policy.response_deadline = Micros{100'000};
  Provider p([] { return std::make_unique<StallingBackend>(std::chrono::milliseconds(400)); }, policy);
  RawProbe probe(p);
  EXPECT_EQ(probe.ask(MsgType::ApduRequest, from_hex("A0EE0000")), (RelayMessage{MsgType::Error, {0x02}}));
  EXPECT_EQ(probe.ask(MsgType::ApduRequest, from_hex("A0F20000")), (RelayMessage{MsgType::ApduResponse, from_hex("9000")}));
  EXPECT_FALSE(probe.conn->closed());
}

TEST(RelayProvider, BackendErrorsMapToCodes) {
  {
    Provider p([]() -> std::unique_ptr<SimBackend> { throw BackendError(BackendErrc::Unavailable, "no card"); });
    RawProbe probe(p);
    EXPECT_EQ(probe.ask(MsgType::ApduRequest, from_hex("A0F20000")), (RelayMessage{MsgType::Error, {0x01}}));
    EXPECT_EQ(probe.ask(MsgType::AtrRequest), (RelayMessage{MsgType::Error, {0x01}}));
  }
  {
    auto profile = simtunnel::testing::basic_profile();
    Provider p([profile] { return std::make_unique<vsim::VsimBackend>(profile); });
    RawProbe probe(p);
    EXPECT_EQ(probe.ask(MsgType::ApduRequest, from_hex("A0F2")), (RelayMessage{MsgType::Error, {0x03}}));
  }
}

// Full stack over local TCP.

TEST(RelayStack, SelectMfBothProtocols) {
  for (auto proto : {iso7816::Protocol::T0, iso7816::Protocol::T1}) {
    StackOptions o;
    o.protocol = proto;
    Stack s(std::move(o));
    EXPECT_EQ(s.transmit_hex("A0A40000023F00"), from_hex("9000"));
    auto imsi = s.transmit_hex("A0A40000027F20");
    s.transmit_hex("A0A40000026F07");
    auto body = s.transmit_hex("A0B0000009");
    EXPECT_EQ(body, from_hex("0809101010325476989000"));
    auto st = s.finish();
    EXPECT_EQ(st.commands, 4u);
    EXPECT_TRUE(simtunnel::testing::strictly_alternating(s.wire()));
    EXPECT_EQ(s.provider_records().size(), 4u);
  }
}

TEST(RelayStack, SyntheticAndMirroredAtr) {
  {
    StackOptions o;
    o.probe.historical = from_hex("4142");
    Stack s(std::move(o));
    iso7816::ProtocolParams params;
    EXPECT_EQ(s.modem().atr_bytes(), iso7816::build_atr(params, from_hex("4142")));
  }
  {
    StackOptions o;
    o.probe.atr_mode = AtrMode::MirrorHistorical;
    o.protocol = iso7816::Protocol::T1;
    auto profile = simtunnel::testing::basic_profile();
    o.profile = profile;
    Stack s(std::move(o));
    const auto atr = iso7816::parse_atr(s.modem().atr_bytes());
    EXPECT_EQ(atr.historical_bytes, iso7816::parse_atr(profile->atr).historical_bytes);
    EXPECT_TRUE(atr.offered_protocols.count(iso7816::Protocol::T1));
  }
}

TEST(RelayStack, DroppedStatusNeverReachesProvider) {
  StackOptions o;
  o.rules = rewrite::compile_rules_text(R"([{"name": "swallow-status", "direction": "to_card",
      "match": {"ins": "F2"}, "action": {"type": "drop", "sw": "9000"}}])");
  Stack s(std::move(o));
  EXPECT_EQ(s.transmit_hex("A0A40000023F00"), from_hex("9000"));
  EXPECT_EQ(s.transmit_hex("A0F20000"), from_hex("9000"));
  EXPECT_EQ(s.transmit_hex("A0F2000016"), from_hex("9000"));
  s.finish();
  for (const auto& [outgoing, m] : s.wire()) {
    if (m.type == MsgType::ApduRequest) EXPECT_NE(m.payload[1], 0xF2);
  }
  for (const auto& r : s.provider_records()) EXPECT_NE(r.command[1], 0xF2);
  auto probe = s.probe_records();
  ASSERT_EQ(probe.size(), 3u);
  EXPECT_TRUE(probe[1].synthesized);
  EXPECT_TRUE(probe[2].synthesized);
}

TEST(RelayStack, TransparencyUnderIdentity) {
  std::mt19937 rng(99);
  const std::vector<std::string> pool = {
      "A0A40000023F00", "A0A40000027F20", "A0A40000026F07", "A0B0000009", "A0A40000026F46",
      "A0B0000011",     "A0D6000002AABB", "A0F2000000",     "A0A40000027F10", "A0A40000026F3A",
      "A0B201040D",     "A0B202040D",     "A0C0000010",     "A088000010000102030405060708090A0B0C0D0E0F",
      "A0EE000000",     "A0A4000002FFFF"};
  for (int session = 0; session < 5; ++session) {
    Stack s(StackOptions{.protocol = session % 2 ? iso7816::Protocol::T1 : iso7816::Protocol::T0});
    for (int i = 0; i < 15; ++i) s.transmit_hex(pool[rng() % pool.size()]);
    s.finish();
    auto a = s.probe_records();
    auto b = s.provider_records();
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].command, b[i].command);
      EXPECT_EQ(a[i].response, b[i].response);
      EXPECT_FALSE(a[i].rewritten_command || a[i].rewritten_response);
    }
    EXPECT_TRUE(simtunnel::testing::strictly_alternating(s.wire()));
  }
}

TEST(RelayStack, LatencyIndependence) {
  const std::vector<std::string> script = {"A0A40000023F00", "A0A40000027F20", "A0A40000026F07", "A0B0000009",
                                           "A088000010000102030405060708090A0B0C0D0E0F", "A0C000000C", "A0F20000"};
  auto run = [&](iso7816::Protocol proto, Micros latency, Clock* clock) {
    Stack s(StackOptions{.protocol = proto, .latency = latency, .clock = clock});
    std::vector<Bytes> out;
    for (auto& c : script) out.push_back(s.transmit_hex(c));
    return out;
  };
  for (auto proto : {iso7816::Protocol::T0, iso7816::Protocol::T1}) {
    const auto baseline = run(proto, Micros{0}, nullptr);
    for (std::int64_t ms : {1, 250, 1000, 2500, 5000}) {
      ManualClock virt;
      EXPECT_EQ(run(proto, Micros{ms * 1000}, &virt), baseline) << ms << " ms";
    }
  }
}

TEST(RelayStack, RealLatencyTriggersWaitingSignals) {
  for (auto proto : {iso7816::Protocol::T0, iso7816::Protocol::T1}) {
    Stack s(StackOptions{.protocol = proto, .latency = Micros{450'000}});
    EXPECT_EQ(s.transmit_hex("A0A40000023F00"), from_hex("9000"));
    EXPECT_GE(s.modem().waits_observed(), 2);
    auto rec = s.probe_records();
    ASSERT_EQ(rec.size(), 1u);
    EXPECT_GE(rec[0].t_response_us - rec[0].t_command_us, 450'000);
  }
}

TEST(RelayStack, TunnelLossAnswers6F00AndHalts) {
  Stack s(StackOptions{});
  EXPECT_EQ(s.transmit_hex("A0A40000023F00"), from_hex("9000"));
  s.kill_provider();
  EXPECT_EQ(s.transmit_hex("A0F20000"), from_hex("6F00"));
  auto st = s.finish();
  EXPECT_TRUE(st.tunnel_lost);
}

TEST(RelayStack, ModemProtocolViolationResetsUpstream) {
  Stack s(StackOptions{});
  s.transmit_hex("A0A40000027F20");
  // A truncated TPDU header followed by silence.
  s.modem_channel().send(from_hex("A0F200"));
  const auto t0 = std::chrono::steady_clock::now();
  while (s.provider().stats().resets == 0 && std::chrono::steady_clock::now() - t0 < std::chrono::seconds(10)) {
    std::this_thread::sleep_for(std::chrono::milliseconds(20));
  }
  EXPECT_EQ(s.provider().stats().resets, 1u);
  auto status = s.transmit_hex("A0F2000016");
  EXPECT_TRUE(contains(status, from_hex("83023F00"))) << to_hex(status);
  EXPECT_EQ(s.finish().resets, 1u);
}

TEST(RelayStack, PpsNegotiatedWithProbe) {
  iso7816::ProtocolParams want;
  want.fi = 512;
  want.di = 8;
  StackOptions o;
  o.probe.params.fi = 512;
  o.probe.params.di = 8;
  o.modem_pps = want;
  Stack s(std::move(o));
  EXPECT_EQ(s.modem().params().fi, 512);
  EXPECT_EQ(s.transmit_hex("A0A40000023F00"), from_hex("9000"));
  EXPECT_TRUE(s.finish().pps);
}
