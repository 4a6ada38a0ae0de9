#pragma once

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/iso7816/channel.hpp"
#include "simtunnel/iso7816/params.hpp"

namespace simtunnel::iso7816 {

/// XOR fold, the T=1 epilogue.
inline std::uint8_t lrc(ByteView data) { return xor_fold(data); }

enum class RError : std::uint8_t { Ok = 0, CrcLrc = 1, Other = 2 };
enum class SOp : std::uint8_t { Resynch = 0, Ifs = 1, Abort = 2, Wtx = 3 };

struct IBlock {
  bool seq = false;
  bool more = false;
  friend bool operator==(const IBlock&, const IBlock&) = default;
};
struct RBlock {
  bool seq = false;
  RError err = RError::Ok;
  friend bool operator==(const RBlock&, const RBlock&) = default;
};
struct SBlock {
  SOp op = SOp::Resynch;
  bool response = false;
  friend bool operator==(const SBlock&, const SBlock&) = default;
};
using BlockKind = std::variant<IBlock, RBlock, SBlock>;

/// Throws Iso7816Error(BadBlock) for undefined encodings.
BlockKind decode_pcb(std::uint8_t pcb);
std::uint8_t encode_pcb(const BlockKind& kind);

struct T1Block {
  std::uint8_t nad = 0;
  std::uint8_t pcb = 0;
  Bytes inf;

  static T1Block make(const BlockKind& kind, Bytes inf = {});
  BlockKind kind() const { return decode_pcb(pcb); }

  /// NAD PCB LEN INF LRC
  Bytes encode() const;
  /// Validates LEN, LRC and PCB; throws Iso7816Error(BadBlock).
  static T1Block decode(ByteView frame);

  friend bool operator==(const T1Block&, const T1Block&) = default;
};

/// Splits `data` into at most `ifs`-sized chunks; an empty payload yields a
/// single empty chunk.
std::vector<Bytes> chain_chunks(ByteView data, std::size_t ifs);

struct T1Config {
  Micros null_interval{200'000}; ///< card: WTX cadence while the handler runs
  std::uint8_t wtx_multiplier = 1;
  int max_retries = 3;
  int max_resynch = 3;
};

struct BlockLogEntry {
  bool sent = false;
  std::optional<T1Block> block; ///< empty for a garbled or missing block
  Micros wait{0};               ///< receive deadline that applied (received blocks)
};

enum class T1Role { Terminal, Card };

/// One endpoint of a T=1 link. The terminal drives transceive(); the card
/// runs serve_one() in a loop. Both sides keep the sequence-bit state across
/// exchanges.
class T1Endpoint {
public:
  T1Endpoint(HalfDuplexChannel& channel, T1Role role, const ProtocolParams& params, T1Config config = {});

  /// Terminal: sends one command APDU and returns the response bytes.
  Bytes transceive(ByteView command);
  apdu::ResponseApdu exchange(const apdu::CommandApdu& cmd);

  /// Card: receives one command, answers it. Returns false when the channel
  /// closed while idle.
  bool serve_one(const CardHandler& handler);

  const std::vector<BlockLogEntry>& log() const { return log_; }
  int retransmissions() const { return retransmissions_; }
  int wtx_requests() const { return wtx_requests_; }
  int resynchs() const { return resynchs_; }

private:
  struct NeedResynch {};

  void send_block(const T1Block& b);
  std::optional<T1Block> receive_block(Deadline deadline, Micros wait);
  std::optional<T1Block> receive_for_terminal();
  void retransmit_last();
  void on_failure(bool timeout);
  void wait_chain_ack(const T1Block& sent);
  Bytes transceive_once(ByteView command);
  void resynch();
  void send_chain(ByteView data, std::size_t ifs);

  HalfDuplexChannel& channel_;
  T1Role role_;
  ProtocolParams params_;
  Timing timing_;
  T1Config config_;

  bool ns_ = false; ///< N(S) of our next I-block
  bool nr_ = false; ///< N(S) expected on the peer's next I-block
  bool i_unacked_ = false; ///< our last I-block has not been acknowledged yet
  std::optional<T1Block> last_sent_;
  std::optional<T1Block> last_i_;
  int retries_ = 0;
  bool last_failure_timeout_ = false;
  int wtx_factor_ = 1;

  std::vector<BlockLogEntry> log_;
  int retransmissions_ = 0;
  int wtx_requests_ = 0;
  int resynchs_ = 0;
};

/// Terminal-side convenience wrapper for a single exchange.
apdu::ResponseApdu t1_exchange(const apdu::CommandApdu& cmd, HalfDuplexChannel& channel,
                               const ProtocolParams& params = {});

} // namespace simtunnel::iso7816
