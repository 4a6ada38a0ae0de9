#pragma once

#include <algorithm>
#include <cstdint>
#include <random>

#include "simtunnel/bytes.hpp"

namespace simtunnel::testing {

inline std::mt19937& rng() {
  static std::mt19937 gen(0x5117u);
  return gen;
}

inline int uniform(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng()); }

inline Bytes random_bytes(std::size_t n) {
  Bytes out(n);
  for (auto& b : out) b = static_cast<std::uint8_t>(uniform(0, 255));
  return out;
}

/// Independent XOR fold oracle: plain loop over the octets.
inline std::uint8_t xor_oracle(const Bytes& data) {
  unsigned acc = 0;
  for (std::size_t i = 0; i < data.size(); ++i) acc = acc ^ data[i];
  return static_cast<std::uint8_t>(acc);
}

inline Bytes H(const char* hex) { return from_hex(hex); }

} // namespace simtunnel::testing
