#include "simtunnel/iso7816/t0.hpp"

#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::iso7816 {
namespace {

bool is_sw1(std::uint8_t b) {
  return b != kNullByte && ((b & 0xF0) == 0x60 || (b & 0xF0) == 0x90);
}

} // namespace

T0Terminal::T0Terminal(HalfDuplexChannel& channel, const ProtocolParams& params)
    : channel_(channel), timing_(Timing::from(params)) {}

std::uint8_t T0Terminal::next_procedure_byte() {
  auto b = channel_.receive_byte(deadline_in(timing_.wwt));
  if (!b) throw Iso7816Error(Errc::Timeout, "work waiting time exceeded");
  return *b;
}

apdu::ResponseApdu T0Terminal::exchange(const apdu::CommandApdu& cmd) {
  if (cmd.data.size() > 255 || (cmd.le && *cmd.le > 256))
    throw Iso7816Error(Errc::ExtendedNotSupported, "T=0 TPDU limited to short APDUs");

  Bytes outgoing = cmd.data;
  std::size_t expected_in = 0;
  std::uint8_t p3 = 0;
  if (!cmd.data.empty()) {
    p3 = static_cast<std::uint8_t>(cmd.data.size());
  } else if (cmd.le) {
    p3 = static_cast<std::uint8_t>(*cmd.le & 0xFF);
    expected_in = static_cast<std::size_t>(*cmd.le);
  }

  bool reissued = false;
  for (;;) {
    channel_.send(Bytes{cmd.cla, cmd.ins, cmd.p1, cmd.p2, p3});
    std::size_t sent = 0;
    Bytes received;
    for (;;) {
      std::uint8_t pb = next_procedure_byte();
      if (pb == kNullByte) {
        ++nulls_;
        continue;
      }
      if (is_sw1(pb)) {
        std::uint8_t sw2 = next_procedure_byte();
        if (pb == 0x6C && expected_in && !reissued && received.empty()) {
          p3 = sw2;
          expected_in = sw2 ? sw2 : 256;
          reissued = true;
          break;
        }
        return apdu::ResponseApdu{std::move(received), pb, sw2};
      }
      const bool ack = pb == cmd.ins;
      const bool single = pb == static_cast<std::uint8_t>(cmd.ins ^ 0xFF);
      if (!ack && !single)
        throw Iso7816Error(Errc::ProtocolViolation, "invalid procedure byte " + to_hex(ByteView(&pb, 1)));

      if (sent < outgoing.size()) {
        std::size_t n = ack ? outgoing.size() - sent : 1;
        channel_.send(ByteView(outgoing).subspan(sent, n));
        sent += n;
      } else if (received.size() < expected_in) {
        std::size_t n = ack ? expected_in - received.size() : 1;
        auto data = channel_.receive(n, deadline_in(timing_.wwt * static_cast<int>(n)));
        if (!data) throw Iso7816Error(Errc::Timeout, "waiting for response data");
        append(received, *data);
      } else {
        throw Iso7816Error(Errc::ProtocolViolation, "ACK with nothing left to transfer");
      }
    }
  }
}

T0Card::T0Card(HalfDuplexChannel& channel, const ProtocolParams& params, T0CardConfig config)
    : channel_(channel), timing_(Timing::from(params)), config_(config) {}

bool T0Card::serve_one(const CardHandler& handler, std::optional<std::uint8_t> first_byte) {
  try {
    return serve(handler, first_byte);
  } catch (const Iso7816Error& e) {
    if (e.code == Errc::ChannelClosed) return false;
    throw;
  }
}

bool T0Card::serve(const CardHandler& handler, std::optional<std::uint8_t> first_byte) {
  // Idle until CLA arrives; the rest of the header must follow within WWT.
  if (!first_byte) first_byte = channel_.receive_byte(std::nullopt);
  Bytes header{*first_byte};
  auto rest = channel_.receive(4, deadline_in(timing_.wwt));
  if (!rest) throw Iso7816Error(Errc::ProtocolViolation, "incomplete TPDU header");
  append(header, *rest);

  const std::uint8_t ins = header[1];
  const std::uint8_t p3 = header[4];
  auto send_sw = [&](std::uint16_t sw) {
    channel_.send(Bytes{static_cast<std::uint8_t>(sw >> 8), static_cast<std::uint8_t>(sw & 0xFF)});
  };
  if ((ins & 0xF0) == 0x60 || (ins & 0xF0) == 0x90) {
    send_sw(0x6D00);
    return true;
  }

  const bool incoming = apdu::ins_expects_command_data(ins);
  Bytes command(header.begin(), header.begin() + 4);
  if (incoming && p3 > 0) {
    channel_.send(Bytes{ins});
    auto data = channel_.receive(p3, deadline_in(timing_.wwt * static_cast<int>(p3)));
    if (!data) throw Iso7816Error(Errc::ProtocolViolation, "terminal stalled while sending command data");
    command.push_back(p3);
    append(command, *data);
  } else if (!incoming && p3 > 0) {
    command.push_back(p3);
  }

  Bytes response;
  try {
    response = run_with_heartbeat(handler, command, config_.null_interval, [&] {
      channel_.send(Bytes{kNullByte});
      ++nulls_;
    });
  } catch (const Iso7816Error& e) {
    if (e.code == Errc::ChannelClosed) throw;
    response = {0x6F, 0x00};
  } catch (const std::exception&) {
    response = {0x6F, 0x00};
  }
  if (response.size() < 2) response = {0x6F, 0x00};

  const std::size_t data_len = response.size() - 2;
  const std::uint8_t sw1 = response[data_len];
  const std::uint8_t sw2 = response[data_len + 1];
  if (data_len == 0) {
    channel_.send(Bytes{sw1, sw2});
  } else if (!incoming && (data_len == p3 || (p3 == 0 && data_len == 256))) {
    Bytes out{ins};
    out.insert(out.end(), response.begin(), response.end());
    channel_.send(out);
  } else if (!incoming) {
    send_sw(static_cast<std::uint16_t>(0x6C00 | (data_len & 0xFF)));
  } else {
    // Response data to a command that carried data cannot be delivered
    // without a local GET RESPONSE cache.
    send_sw(0x6F00);
  }
  return true;
}

apdu::ResponseApdu t0_exchange(const apdu::CommandApdu& cmd, HalfDuplexChannel& channel,
                               const ProtocolParams& params) {
  return T0Terminal(channel, params).exchange(cmd);
}

} // namespace simtunnel::iso7816
