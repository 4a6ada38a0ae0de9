#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "simtunnel/vsim/profile.hpp"

namespace simtunnel::testing {

inline std::string basic_profile_json(const std::string& imsi = "001010123456789",
                                      const std::string& proactive = "") {
  std::string doc = R"({
    "imsi": ")" + imsi + R"(",
    "iccid": "8988211000000000000",
    "auth": {"mode": "xor", "key": "000102030405060708090a0b0c0d0e0f"},
    "files": [
      {"id": "3F00", "kind": "mf"},
      {"id": "7F10", "kind": "df"},
      {"id": "6F3A", "parent": "7F10", "kind": "linear_fixed",
       "records": ["4d756d20202020ffffffffffff", "4f6666696365ffffffffffffff"]},
      {"id": "7F20", "kind": "df"},
      {"id": "6F46", "parent": "7F20", "kind": "transparent", "body": "00546573744e6574ffffffffffffffffff"},
      {"id": "6FAD", "parent": "7F20", "kind": "transparent", "body": "00000002", "read_only": true}
    ])";
  if (!proactive.empty()) doc += R"(, "proactive": [")" + proactive + R"("])";
  doc += "}";
  return doc;
}

inline std::shared_ptr<const vsim::SimProfile> basic_profile(const std::string& imsi = "001010123456789",
                                                             const std::string& proactive = "") {
  return std::make_shared<const vsim::SimProfile>(vsim::load_profile_text(basic_profile_json(imsi, proactive)));
}

/// Command/response pairs for basic_profile(). Responses are written out
/// from the profile document: EF bodies verbatim, the IMSI body from its
/// digits, and the auth reply as RAND xor key (key 00..0f).
inline std::vector<std::pair<std::string, std::string>> golden_session() {
  return {
      {"A0A40000023F00", "9000"},
      {"A0A40000027F20", "9000"},
      {"A0A40000026F07", "9000"},
      {"A0B0000009", "0809101010325476989000"},
      {"A0A40000026F46", "9000"},
      {"A0B0000011", "00546573744e6574ffffffffffffffffff9000"},
      {"A0A40000027F10", "9000"},
      {"A0A40000026F3A", "9000"},
      {"A0B201040D", "4d756d20202020ffffffffffff9000"},
      {"A0B202040D", "4f6666696365ffffffffffffff9000"},
      {"A02000010831323334FFFFFFFF", "9000"},
      {"A08800001000112233445566778899aabbccddeeff", "610c"},
      {"A0C000000C", "00102030405060708090a0b09000"},
      {"A0EE0000", "6d00"},
  };
}

/// Independent TS 24.008 IMSI decoder used as the oracle for EF_IMSI bodies.
inline std::string decode_imsi_oracle(const Bytes& body) {
  if (body.empty() || body[0] == 0 || body[0] > 8 || body.size() < body[0] + 1u) return "?";
  std::string digits;
  for (std::size_t i = 1; i <= body[0]; ++i) {
    int lo = body[i] & 0x0F;
    int hi = body[i] >> 4;
    if (i > 1) digits.push_back(static_cast<char>('0' + lo));
    if (hi != 0xF) digits.push_back(static_cast<char>('0' + hi));
  }
  bool odd = (body[1] & 0x08) != 0;
  if (odd != (digits.size() % 2 == 1)) return "?";
  return digits;
}

} // namespace simtunnel::testing
