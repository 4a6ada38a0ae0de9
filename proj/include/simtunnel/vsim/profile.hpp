#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "simtunnel/bytes.hpp"

namespace simtunnel::vsim {

enum class ProfileErrc { SchemaError, DuplicateFileId, RecordLengthMismatch, BadImsiDigits, BadIccidDigits };

class ProfileError : public std::runtime_error {
public:
  ProfileError(ProfileErrc code, const std::string& what) : std::runtime_error(what), code(code) {}
  ProfileErrc code;
};

enum class FileKind { MF, DF, Transparent, LinearFixed };

inline constexpr std::uint16_t kMf = 0x3F00;
inline constexpr std::uint16_t kDfTelecom = 0x7F10;
inline constexpr std::uint16_t kDfGsm = 0x7F20;
inline constexpr std::uint16_t kEfImsi = 0x6F07;
inline constexpr std::uint16_t kEfIccid = 0x2FE2;
inline constexpr std::size_t kMaxBody = 32 * 1024;

struct SimFile {
  std::uint16_t id = 0;
  FileKind kind = FileKind::Transparent;
  int parent = -1; ///< index into SimProfile::files; -1 only for the MF
  Bytes body;
  int record_len = 0;
  std::vector<Bytes> records;
  bool read_only = false;

  bool is_dir() const { return kind == FileKind::MF || kind == FileKind::DF; }
};

struct AuthConfig {
  enum class Mode { XorTest, StaticVectors };
  Mode mode = Mode::XorTest;
  std::array<std::uint8_t, 16> key{};
  std::vector<std::pair<Bytes, Bytes>> vectors;
};

/// Immutable after load; index 0 is always the MF.
struct SimProfile {
  std::vector<SimFile> files;
  AuthConfig auth;
  std::vector<Bytes> proactive;
  Bytes atr;

  /// Index of the child `fid` of directory `dir`.
  std::optional<int> child(int dir, std::uint16_t fid) const;
  /// Index of the file reached by an absolute path of FIDs starting at 3F00.
  std::optional<int> by_path(const std::vector<std::uint16_t>& path) const;
  std::vector<std::uint16_t> path_of(int index) const;
};

/// 3GPP TS 24.008 mobile identity: length, parity/type nibble, swapped BCD.
Bytes encode_imsi(const std::string& digits);
/// Appends the Luhn digit to a 19-digit body (20-digit input is taken as is),
/// then nibble-swaps with F padding.
Bytes encode_iccid(const std::string& digits);
char luhn_digit(const std::string& digits);

SimProfile load_profile(const nlohmann::json& doc);
SimProfile load_profile_text(const std::string& text);
SimProfile load_profile_file(const std::string& path);

} // namespace simtunnel::vsim
