#pragma once

#include <deque>
#include <map>
#include <memory>
#include <optional>

#include "simtunnel/apdu/apdu.hpp"
#include "simtunnel/backend.hpp"
#include "simtunnel/vsim/profile.hpp"

namespace simtunnel::vsim {

/// Dummy authentication core: challenge XOR key.
Bytes xor_core(ByteView challenge, const std::array<std::uint8_t, 16>& key);

/// Per-session card state. The profile is shared read-only; written files
/// are copied into the session on first write.
class Card {
public:
  explicit Card(std::shared_ptr<const SimProfile> profile);

  apdu::ResponseApdu handle(const apdu::CommandApdu& cmd);
  /// Back to MF, pending state cleared, written contents kept.
  void reset();

  /// Absolute FID path of the current file (DF or EF).
  std::vector<std::uint16_t> selected_path() const;
  std::optional<std::uint16_t> current_ef() const;
  bool has_pending_response() const { return pending_.has_value(); }
  std::size_t proactive_queued() const { return queue_.size(); }
  const SimProfile& profile() const { return *profile_; }

private:
  apdu::ResponseApdu dispatch(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu select(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu read_binary(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu update_binary(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu read_record(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu update_record(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu status(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu get_response(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu authenticate(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu fetch(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu terminal_response(const apdu::CommandApdu& cmd);
  apdu::ResponseApdu deliver(const apdu::CommandApdu& cmd, Bytes data);

  const SimFile& file(int index) const;
  SimFile& writable(int index);
  int current_dir() const;
  std::optional<int> resolve(std::uint16_t fid) const;
  Bytes fcp(int index) const;

  std::shared_ptr<const SimProfile> profile_;
  std::map<int, SimFile> written_;
  int current_ = 0; ///< selected file index (a DF or an EF)
  std::optional<Bytes> pending_;
  std::deque<Bytes> queue_;
  bool head_fetched_ = false;
};

/// SimBackend over a virtual card.
class VsimBackend final : public SimBackend {
public:
  explicit VsimBackend(std::shared_ptr<const SimProfile> profile) : card_(std::move(profile)) {}

  Bytes atr() override { return card_.profile().atr; }
  Bytes transmit(const Bytes& command) override;
  void reset() override { card_.reset(); }

  Card& card() { return card_; }

private:
  Card card_;
};

} // namespace simtunnel::vsim
