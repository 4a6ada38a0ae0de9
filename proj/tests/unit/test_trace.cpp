#include <gtest/gtest.h>

#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <random>
#include <sstream>

#include "harness.hpp"
#include "simtunnel/trace/gsmtap.hpp"
#include "simtunnel/trace/replay.hpp"
#include "simtunnel/trace/trace.hpp"
#include "simtunnel/vsim/card.hpp"

using namespace simtunnel;
using namespace simtunnel::trace;
namespace fx = simtunnel::testing;

namespace {

TraceRecord random_record(std::mt19937& rng, std::uint64_t seq, const Bytes& sid) {
  auto bytes = [&](std::size_t max) {
    Bytes b(rng() % (max + 1));
    for (auto& x : b) x = static_cast<std::uint8_t>(rng());
    return b;
  };
  TraceRecord r;
  r.seq = seq;
  r.session_id = sid;
  r.t_command_us = static_cast<std::int64_t>(rng() % 1'000'000'000);
  r.t_response_us = r.t_command_us + static_cast<std::int64_t>(rng() % 5'000'000);
  r.command = bytes(40);
  r.response = bytes(40);
  for (unsigned i = rng() % 3; i > 0; --i) r.tags.push_back("tag-" + std::to_string(rng() % 100) + " \"q\"");
  r.rewritten_command = rng() % 2;
  r.rewritten_response = rng() % 2;
  if (r.rewritten_command) r.original_command = bytes(10);
  if (r.rewritten_response) r.original_response = bytes(10);
  r.synthesized = rng() % 5 == 0;
  return r;
}

std::string lines(const std::vector<std::string>& ls) {
  std::string out;
  for (auto& l : ls) out += l + "\n";
  return out;
}

class FailingSender final : public DatagramSender {
public:
  bool send(ByteView) override { return false; }
};

class CollectingSender final : public DatagramSender {
public:
  bool send(ByteView d) override {
    sent.emplace_back(d.begin(), d.end());
    return true;
  }
  std::vector<Bytes> sent;
};

/// Runs `cmds` against a fresh vsim and records the exchange as a trace.
TraceFile record_session(std::shared_ptr<const vsim::SimProfile> profile, const std::vector<std::string>& cmds,
                         std::int64_t gap_us) {
  vsim::VsimBackend b(std::move(profile));
  TraceFile f;
  std::int64_t t = 1'000'000;
  std::uint64_t seq = 1;
  for (auto& c : cmds) {
    TraceRecord r;
    r.seq = seq++;
    r.command = from_hex(c);
    r.response = b.transmit(r.command);
    r.t_command_us = t;
    r.t_response_us = t + 100;
    t += gap_us;
    f.records.push_back(r);
  }
  return f;
}

const std::vector<std::string> kSession = {"A0A40000023F00", "A0A40000022FE2", "A0B000000A", "A0A40000027F20",
                                           "A0A40000026F07", "A0B0000009",     "A0F20000"};

} // namespace

TEST(TraceJsonl, ExampleLine) {
  TraceRecord r;
  r.seq = 1;
  r.command = from_hex("A0F20000");
  r.response = from_hex("9000");
  const std::string line = to_jsonl(r);
  EXPECT_NE(line.find(R"("command":"a0f20000")"), std::string::npos) << line;
  EXPECT_NE(line.find(R"("response":"9000")"), std::string::npos) << line;
  EXPECT_EQ(line.find('\n'), std::string::npos);
}

TEST(TraceJsonl, RoundTripThousandRecords) {
  std::mt19937 rng(20);
  const Bytes sid = from_hex("00112233445566778899aabbccddeeff");
  SessionHeader h;
  h.session_id = sid;
  h.role = "probe";
  h.wall_anchor_us = 1'700'000'000'000'000;
  h.mono_anchor_us = 12345;
  h.profile_sha256 = sha256_hex(from_hex("00"));
  std::vector<TraceRecord> written;
  std::stringstream buf;
  {
    JsonlWriter w(buf, h);
    for (std::uint64_t i = 1; i <= 1000; ++i) {
      written.push_back(random_record(rng, i, sid));
      w.append(written.back());
    }
    w.flush();
  }
  const TraceFile back = read_trace(buf);
  ASSERT_TRUE(back.header);
  EXPECT_EQ(*back.header, h);
  EXPECT_EQ(back.records, written);
}

TEST(TraceJsonl, ReaderValidation) {
  TraceRecord a;
  a.seq = 1;
  a.command = from_hex("A0F20000");
  a.response = from_hex("9000");
  TraceRecord b = a;
  b.seq = 3;
  {
    std::istringstream in(lines({to_jsonl(a), to_jsonl(b)}));
    try {
      read_trace(in);
      FAIL();
    } catch (const TraceError& e) {
      EXPECT_NE(std::string(e.what()).find("line 2"), std::string::npos) << e.what();
    }
  }
  {
    TraceRecord c = a;
    c.t_command_us = 10;
    c.t_response_us = 9;
    std::istringstream in(lines({to_jsonl(c)}));
    EXPECT_THROW(read_trace(in), TraceError);
  }
  {
    std::istringstream in("{\"type\": \"apdu\", \"seq\": 1\n");
    EXPECT_THROW(read_trace(in), TraceError);
  }
  {
    SessionHeader h;
    h.session_id = from_hex("01");
    TraceRecord d = a;
    d.session_id = from_hex("02");
    std::istringstream in(lines({to_jsonl(h), to_jsonl(d)}));
    EXPECT_THROW(read_trace(in), TraceError);
  }
  {
    std::istringstream in("");
    EXPECT_TRUE(read_trace(in).records.empty());
  }
}

TEST(TraceJsonl, SessionTraceNumbersRecords) {
  auto sink = std::make_shared<MemorySink>();
  SessionTrace st(sink, from_hex("abcd"));
  for (int i = 0; i < 3; ++i) st.record(TraceRecord{});
  auto recs = sink->records();
  ASSERT_EQ(recs.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(recs[i].seq, i + 1);
    EXPECT_EQ(recs[i].session_id, from_hex("abcd"));
  }
}

TEST(TraceHash, KnownVectors) {
  const std::string abc = "abc";
  EXPECT_EQ(sha256_hex(ByteView(reinterpret_cast<const std::uint8_t*>(abc.data()), abc.size())),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
  EXPECT_EQ(sha256_hex({}), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

// Header layout: version, length in 32-bit words, payload type, timeslot,
// ARFCN (big-endian, 0x4000 = uplink), signal, SNR, frame number (4),
// sub-type, antenna, sub-slot, reserved.
TEST(TraceGsmtap, HeaderLayout) {
  const Bytes up = gsmtap_header(true);
  const Bytes down = gsmtap_header(false);
  EXPECT_EQ(up, from_hex("02040400" "4000" "0000" "00000000" "00000000"));
  EXPECT_EQ(down, from_hex("02040400" "0000" "0000" "00000000" "00000000"));
  EXPECT_EQ(up.size(), std::size_t{up[1]} * 4);
  EXPECT_EQ(kGsmtapPort, 4729);
}

TEST(TraceGsmtap, ExporterPassesApdusThrough) {
  auto sender = std::make_unique<CollectingSender>();
  auto* raw = sender.get();
  GsmtapExporter ex(std::move(sender));
  TraceRecord r;
  r.command = from_hex("A0A40000023F00");
  r.response = from_hex("9000");
  ex.append(r);
  ASSERT_EQ(raw->sent.size(), 2u);
  for (auto& d : raw->sent) EXPECT_EQ(d[0], 2);
  EXPECT_EQ(Bytes(raw->sent[0].begin() + 16, raw->sent[0].end()), r.command);
  EXPECT_EQ(Bytes(raw->sent[1].begin() + 16, raw->sent[1].end()), r.response);
  EXPECT_EQ(be16(raw->sent[0][4], raw->sent[0][5]), kGsmtapArfcnUplink);
  EXPECT_EQ(be16(raw->sent[1][4], raw->sent[1][5]), 0);
  EXPECT_EQ(ex.sent(), 2u);
  EXPECT_EQ(ex.drops(), 0u);
}

TEST(TraceGsmtap, UdpDelivery) {
  const int rx = ::socket(AF_INET, SOCK_DGRAM, 0);
  ASSERT_GE(rx, 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_addr.s_addr = htonl(INADDR_LOOPBACK);
  ASSERT_EQ(::bind(rx, reinterpret_cast<sockaddr*>(&addr), sizeof addr), 0);
  socklen_t len = sizeof addr;
  ::getsockname(rx, reinterpret_cast<sockaddr*>(&addr), &len);
  timeval tv{2, 0};
  ::setsockopt(rx, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof tv);

  GsmtapExporter ex(std::make_unique<UdpSender>(Endpoint{"127.0.0.1", ntohs(addr.sin_port)}));
  TraceRecord r;
  r.command = from_hex("A0F20000");
  r.response = from_hex("9000");
  ex.append(r);
  std::uint8_t buf[512];
  const auto n1 = ::recv(rx, buf, sizeof buf, 0);
  ASSERT_EQ(n1, 20);
  EXPECT_EQ(Bytes(buf, buf + 16), gsmtap_header(true));
  EXPECT_EQ(Bytes(buf + 16, buf + 20), r.command);
  const auto n2 = ::recv(rx, buf, sizeof buf, 0);
  ASSERT_EQ(n2, 18);
  EXPECT_EQ(Bytes(buf + 16, buf + 18), r.response);
  ::close(rx);
}

TEST(TraceGsmtap, UnreachableSinkOnlyCountsDrops) {
  auto mem = std::make_shared<MemorySink>();
  auto ex = std::make_shared<GsmtapExporter>(std::make_unique<FailingSender>());
  TeeSink tee({ex, mem});
  TraceRecord r;
  r.command = from_hex("A0F20000");
  r.response = from_hex("9000");
  tee.append(r);
  tee.append(r);
  EXPECT_EQ(ex.get()->drops(), 4u);
  EXPECT_EQ(mem->records().size(), 2u);
}

TEST(TraceReplay, SameProfileMatchesFully) {
  auto f = record_session(fx::basic_profile(), kSession, 1000);
  vsim::VsimBackend target(fx::basic_profile());
  auto report = replay(f, target);
  EXPECT_TRUE(report.ok());
  EXPECT_EQ(report.matched(), kSession.size());
  EXPECT_NE(format_report(report).find("7/7 matched"), std::string::npos);
}

TEST(TraceReplay, DifferentImsiMismatchesOnlyImsiRead) {
  auto f = record_session(fx::basic_profile(), kSession, 1000);
  vsim::VsimBackend target(fx::basic_profile("262011234567890"));
  auto report = replay(f, target);
  EXPECT_FALSE(report.ok());
  ASSERT_EQ(report.mismatched(), 1u);
  for (auto& e : report.entries) EXPECT_EQ(e.match, e.seq != 6) << e.seq;
  EXPECT_NE(format_report(report).find("MISMATCH"), std::string::npos);
}

TEST(TraceReplay, EmptyAndSynthesized) {
  vsim::VsimBackend target(fx::basic_profile());
  EXPECT_TRUE(replay(TraceFile{}, target).ok());
  EXPECT_TRUE(replay(TraceFile{}, target).entries.empty());

  auto f = record_session(fx::basic_profile(), kSession, 1000);
  f.records[2].synthesized = true;
  f.records[2].response = from_hex("6f00"); // never reached the card
  auto report = replay(f, target);
  EXPECT_TRUE(report.entries[2].skipped);
  EXPECT_TRUE(report.ok());
}

TEST(TraceReplay, RewrittenRecordsCompareOriginalResponse) {
  auto f = record_session(fx::basic_profile(), kSession, 1000);
  f.records[5].original_response = f.records[5].response;
  f.records[5].response = from_hex("0809101010325476989000");
  vsim::VsimBackend target(fx::basic_profile());
  EXPECT_TRUE(replay(f, target).ok());
}

TEST(TraceReplay, PacedReproducesGapsOnVirtualClock) {
  auto f = record_session(fx::basic_profile(), kSession, 0);
  const std::vector<std::int64_t> gaps = {0, 250'000, 1'000, 3'000'000, 0, 42, 700'000};
  std::int64_t t = 5'000'000;
  for (std::size_t i = 0; i < f.records.size(); ++i) {
    t += gaps[i];
    f.records[i].t_command_us = t;
    f.records[i].t_response_us = t + 10;
  }
  ManualClock clock(Micros{777});
  vsim::VsimBackend target(fx::basic_profile());
  auto report = replay(f, target, {true, &clock});
  ASSERT_EQ(report.entries.size(), f.records.size());
  for (std::size_t i = 0; i < f.records.size(); ++i) {
    EXPECT_EQ(report.entries[i].issued_at_us, f.records[i].t_command_us - f.records[0].t_command_us);
  }
  ManualClock flat;
  vsim::VsimBackend target2(fx::basic_profile());
  auto immediate = replay(f, target2, {false, &flat});
  for (auto& e : immediate.entries) EXPECT_EQ(e.issued_at_us, 0);
}

TEST(TraceStack, LatencyVisibleInTimestamps) {
  {
    ManualClock clock;
    fx::Stack s(fx::StackOptions{.latency = Micros{1'000'000}, .clock = &clock});
    s.transmit_hex("A0A40000023F00");
    s.transmit_hex("A0F20000");
    s.finish();
    for (auto& r : s.probe_records()) EXPECT_EQ(r.t_response_us - r.t_command_us, 1'000'000);
  }
  {
    fx::Stack s(fx::StackOptions{.latency = Micros{200'000}});
    s.transmit_hex("A0A40000023F00");
    s.finish();
    auto r = s.probe_records().at(0);
    EXPECT_GE(r.t_response_us - r.t_command_us, 200'000);
    EXPECT_LE(r.t_response_us - r.t_command_us, 250'000);
  }
}
