#include "simtunnel/vsim/card.hpp"

#include <algorithm>

namespace simtunnel::vsim {
namespace {

using apdu::CommandApdu;
using apdu::ResponseApdu;
namespace ins = apdu::ins;

ResponseApdu sw(std::uint16_t v) { return ResponseApdu::status(v); }

ResponseApdu ok(Bytes data) { return ResponseApdu{std::move(data), 0x90, 0x00}; }

ResponseApdu wrong_le(std::size_t exact) {
  return ResponseApdu::status(static_cast<std::uint16_t>(0x6C00 | (exact & 0xFF)));
}

bool le_fits(int le, std::size_t len) { return static_cast<std::size_t>(le) == len || (le == 256 && len <= 256); }

Bytes rotl(const Bytes& in, std::size_t n) {
  Bytes out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[(i + n) % in.size()];
  return out;
}

bool usim_class(std::uint8_t cla) { return (cla & 0xF0) != 0xA0; }

} // namespace

Bytes xor_core(ByteView challenge, const std::array<std::uint8_t, 16>& key) {
  Bytes out(challenge.begin(), challenge.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] ^= key[i % key.size()];
  return out;
}

Card::Card(std::shared_ptr<const SimProfile> profile) : profile_(std::move(profile)) {
  if (!profile_ || profile_->files.empty()) throw ProfileError(ProfileErrc::SchemaError, "card needs a profile with an MF");
  queue_.assign(profile_->proactive.begin(), profile_->proactive.end());
}

void Card::reset() {
  current_ = 0;
  pending_.reset();
  head_fetched_ = false;
}

const SimFile& Card::file(int index) const {
  if (auto it = written_.find(index); it != written_.end()) return it->second;
  return profile_->files[static_cast<std::size_t>(index)];
}

SimFile& Card::writable(int index) {
  auto it = written_.find(index);
  if (it == written_.end()) it = written_.emplace(index, profile_->files[static_cast<std::size_t>(index)]).first;
  return it->second;
}

int Card::current_dir() const {
  const auto& f = file(current_);
  return f.is_dir() ? current_ : f.parent;
}

std::vector<std::uint16_t> Card::selected_path() const { return profile_->path_of(current_); }

std::optional<std::uint16_t> Card::current_ef() const {
  const auto& f = file(current_);
  if (f.is_dir()) return std::nullopt;
  return f.id;
}

std::optional<int> Card::resolve(std::uint16_t fid) const {
  if (fid == kMf) return 0;
  const int dir = current_dir();
  if (file(dir).id == fid) return dir;
  if (auto c = profile_->child(dir, fid)) return c;
  const int parent = file(dir).parent;
  if (parent >= 0) {
    if (file(parent).id == fid) return parent;
    if (auto s = profile_->child(parent, fid); s && file(*s).is_dir()) return s;
  }
  return std::nullopt;
}

Bytes Card::fcp(int index) const {
  const auto& f = file(index);
  Bytes body;
  switch (f.kind) {
  case FileKind::MF:
  case FileKind::DF:
    append(body, Bytes{0x82, 0x02, 0x78, 0x21});
    break;
  case FileKind::Transparent:
    append(body, Bytes{0x82, 0x02, 0x41, 0x21});
    break;
  case FileKind::LinearFixed:
    append(body, Bytes{0x82, 0x05, 0x42, 0x21, 0x00, static_cast<std::uint8_t>(f.record_len),
                       static_cast<std::uint8_t>(f.records.size())});
    break;
  }
  append(body, Bytes{0x83, 0x02, static_cast<std::uint8_t>(f.id >> 8), static_cast<std::uint8_t>(f.id & 0xFF)});
  if (!f.is_dir()) {
    std::size_t size = f.kind == FileKind::Transparent ? f.body.size() : f.records.size() * static_cast<std::size_t>(f.record_len);
    append(body, Bytes{0x80, 0x02, static_cast<std::uint8_t>(size >> 8), static_cast<std::uint8_t>(size & 0xFF)});
  }
  append(body, Bytes{0x8A, 0x01, 0x05});
  Bytes out{0x62, static_cast<std::uint8_t>(body.size())};
  append(out, body);
  return out;
}

ResponseApdu Card::deliver(const CommandApdu& cmd, Bytes data) {
  if (!cmd.le) {
    const auto n = data.size();
    pending_ = std::move(data);
    return sw(static_cast<std::uint16_t>(0x6100 | (n & 0xFF)));
  }
  if (*cmd.le == 256 || static_cast<std::size_t>(*cmd.le) >= data.size()) return ok(std::move(data));
  return wrong_le(data.size());
}

ResponseApdu Card::handle(const CommandApdu& cmd) {
  ResponseApdu r = dispatch(cmd);
  if (r.sw() == 0x9000 && !queue_.empty() && !head_fetched_) {
    r.sw1 = 0x91;
    r.sw2 = static_cast<std::uint8_t>(queue_.front().size());
  }
  return r;
}

ResponseApdu Card::dispatch(const CommandApdu& cmd) {
  const bool known_class = cmd.cla == 0xA0 || (cmd.cla & 0x70) == 0x00;
  if (!known_class) return sw(0x6E00);

  if (cmd.ins != ins::kGetResponse) pending_.reset();
  switch (cmd.ins) {
  case ins::kSelect:
    return select(cmd);
  case ins::kReadBinary:
    return read_binary(cmd);
  case ins::kUpdateBinary:
    return update_binary(cmd);
  case ins::kReadRecord:
    return read_record(cmd);
  case ins::kUpdateRecord:
    return update_record(cmd);
  case ins::kStatus:
    return status(cmd);
  case ins::kGetResponse:
    return get_response(cmd);
  case ins::kAuthenticate:
    return authenticate(cmd);
  case ins::kFetch:
    return fetch(cmd);
  case ins::kTerminalResponse:
    return terminal_response(cmd);
  case ins::kEnvelope:
  case ins::kVerifyPin:
  case 0x10: // TERMINAL PROFILE
    return sw(0x9000);
  default:
    return sw(0x6D00);
  }
}

ResponseApdu Card::select(const CommandApdu& cmd) {
  if (cmd.p1 != 0x00) return sw(0x6A86);
  if (cmd.data.size() != 2) return sw(0x6700);
  auto idx = resolve(be16(cmd.data[0], cmd.data[1]));
  if (!idx) return sw(0x6A82);
  current_ = *idx;
  if (!usim_class(cmd.cla) || (cmd.p2 & 0x0C) == 0x0C) return sw(0x9000);
  return deliver(cmd, fcp(current_));
}

ResponseApdu Card::read_binary(const CommandApdu& cmd) {
  const auto& f = file(current_);
  if (f.is_dir()) return sw(0x6986);
  if (f.kind != FileKind::Transparent) return sw(0x6981);
  if (cmd.p1 & 0x80) return sw(0x6A86);
  if (!cmd.le) return sw(0x6700);
  const std::size_t offset = cmd.p1p2();
  if (offset >= f.body.size()) return sw(0x6B00);
  const std::size_t avail = f.body.size() - offset;
  std::size_t n;
  if (*cmd.le == 256) n = std::min<std::size_t>(avail, 256);
  else if (static_cast<std::size_t>(*cmd.le) <= avail) n = static_cast<std::size_t>(*cmd.le);
  else return wrong_le(avail);
  auto first = f.body.begin() + static_cast<std::ptrdiff_t>(offset);
  return ok(Bytes(first, first + static_cast<std::ptrdiff_t>(n)));
}

ResponseApdu Card::update_binary(const CommandApdu& cmd) {
  const auto& f = file(current_);
  if (f.is_dir()) return sw(0x6986);
  if (f.kind != FileKind::Transparent) return sw(0x6981);
  if (cmd.p1 & 0x80) return sw(0x6A86);
  if (cmd.data.empty()) return sw(0x6700);
  if (f.read_only) return sw(0x6982);
  const std::size_t offset = cmd.p1p2();
  if (offset >= f.body.size()) return sw(0x6B00);
  if (offset + cmd.data.size() > f.body.size()) return sw(0x6700);
  auto& w = writable(current_);
  std::copy(cmd.data.begin(), cmd.data.end(), w.body.begin() + static_cast<std::ptrdiff_t>(offset));
  return sw(0x9000);
}

ResponseApdu Card::read_record(const CommandApdu& cmd) {
  const auto& f = file(current_);
  if (f.is_dir()) return sw(0x6986);
  if (f.kind != FileKind::LinearFixed) return sw(0x6981);
  if ((cmd.p2 & 0x07) != 0x04) return sw(0x6A86);
  if (cmd.p1 == 0 || cmd.p1 > f.records.size()) return sw(0x6A83);
  if (!cmd.le) return sw(0x6700);
  const auto& rec = f.records[cmd.p1 - 1u];
  if (!le_fits(*cmd.le, rec.size())) return wrong_le(rec.size());
  return ok(rec);
}

ResponseApdu Card::update_record(const CommandApdu& cmd) {
  const auto& f = file(current_);
  if (f.is_dir()) return sw(0x6986);
  if (f.kind != FileKind::LinearFixed) return sw(0x6981);
  if ((cmd.p2 & 0x07) != 0x04) return sw(0x6A86);
  if (cmd.p1 == 0 || cmd.p1 > f.records.size()) return sw(0x6A83);
  if (static_cast<int>(cmd.data.size()) != f.record_len) return sw(0x6700);
  if (f.read_only) return sw(0x6982);
  writable(current_).records[cmd.p1 - 1u] = cmd.data;
  return sw(0x9000);
}

ResponseApdu Card::status(const CommandApdu& cmd) {
  if (!cmd.le) return sw(0x9000);
  Bytes data = fcp(current_dir());
  if (!le_fits(*cmd.le, data.size())) return wrong_le(data.size());
  return ok(std::move(data));
}

ResponseApdu Card::get_response(const CommandApdu& cmd) {
  if (!pending_) return sw(0x6985);
  if (!cmd.le) return sw(0x6700);
  if (!le_fits(*cmd.le, pending_->size())) return wrong_le(pending_->size());
  Bytes data = std::move(*pending_);
  pending_.reset();
  return ok(std::move(data));
}

ResponseApdu Card::authenticate(const CommandApdu& cmd) {
  const auto& auth = profile_->auth;
  if (auth.mode == AuthConfig::Mode::StaticVectors) {
    for (auto& [challenge, response] : auth.vectors)
      if (challenge == cmd.data) return deliver(cmd, response);
    return sw(0x9862);
  }

  ByteView challenge;
  if (cmd.data.size() == 16) challenge = cmd.data;
  else if (cmd.data.size() >= 17 && cmd.data[0] == 0x10) challenge = ByteView(cmd.data).subspan(1, 16);
  else return sw(0x6700);

  Bytes core = xor_core(challenge, auth.key);
  Bytes out;
  if (!usim_class(cmd.cla)) {
    out.assign(core.begin(), core.begin() + 12); // SRES(4) ++ Kc(8)
  } else {
    out = {0xDB, 0x08};
    out.insert(out.end(), core.begin(), core.begin() + 8);
    out.push_back(0x10);
    append(out, rotl(core, 1));
    out.push_back(0x10);
    append(out, rotl(core, 2));
  }
  return deliver(cmd, std::move(out));
}

ResponseApdu Card::fetch(const CommandApdu& cmd) {
  if (queue_.empty()) return sw(0x6985);
  if (!cmd.le) return sw(0x6700);
  const Bytes& head = queue_.front();
  if (!le_fits(*cmd.le, head.size())) return wrong_le(head.size());
  head_fetched_ = true;
  return ok(head);
}

ResponseApdu Card::terminal_response(const CommandApdu&) {
  if (queue_.empty() || !head_fetched_) return sw(0x6985);
  queue_.pop_front();
  head_fetched_ = false;
  return sw(0x9000);
}

Bytes VsimBackend::transmit(const Bytes& command) {
  apdu::CommandApdu cmd;
  try {
    cmd = apdu::parse_command(command);
  } catch (const apdu::ApduError& e) {
    throw BackendError(BackendErrc::Malformed, e.what());
  }
  return card_.handle(cmd).bytes();
}

} // namespace simtunnel::vsim
