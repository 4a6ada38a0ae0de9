#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace simtunnel {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

class HexError : public std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Lowercase hex, no separators.
std::string to_hex(ByteView bytes);

/// Upper-case hex with single spaces between octets ("3B 80 01 81").
std::string to_spaced_hex(ByteView bytes);

/// Accepts upper/lower case and ignores ASCII whitespace. Odd digit counts and
/// non-hex characters throw HexError.
Bytes from_hex(std::string_view text);

inline std::uint8_t xor_fold(ByteView bytes) {
  std::uint8_t acc = 0;
  for (auto b : bytes) acc ^= b;
  return acc;
}

inline void append(Bytes& out, ByteView more) {
  out.insert(out.end(), more.begin(), more.end());
}

inline std::uint16_t be16(std::uint8_t hi, std::uint8_t lo) {
  return static_cast<std::uint16_t>((hi << 8) | lo);
}

} // namespace simtunnel
