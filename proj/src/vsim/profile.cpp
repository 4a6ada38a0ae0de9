#include "simtunnel/vsim/profile.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "simtunnel/iso7816/atr.hpp"
#include "simtunnel/iso7816/errors.hpp"

namespace simtunnel::vsim {
namespace {

using nlohmann::json;

[[noreturn]] void schema(const std::string& what) { throw ProfileError(ProfileErrc::SchemaError, what); }

void only_keys(const json& obj, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!obj.is_object()) schema(where + ": expected an object");
  for (auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto* a : allowed) ok = ok || key == a;
    if (!ok) schema(where + ": unknown key '" + key + "'");
  }
}

std::string str(const json& obj, const char* key, const std::string& where) {
  auto it = obj.find(key);
  if (it == obj.end() || !it->is_string()) schema(where + ": '" + key + "' must be a string");
  return it->get<std::string>();
}

Bytes hex_field(const json& v, const std::string& where) {
  if (!v.is_string()) schema(where + ": expected a hex string");
  try {
    return from_hex(v.get<std::string>());
  } catch (const HexError& e) {
    schema(where + ": " + e.what());
  }
}

std::uint16_t fid_of(const std::string& text, const std::string& where) {
  Bytes b;
  try {
    b = from_hex(text);
  } catch (const HexError&) {
    schema(where + ": bad file id '" + text + "'");
  }
  if (b.size() != 2) schema(where + ": file id must be 4 hex digits");
  return be16(b[0], b[1]);
}

std::vector<std::uint16_t> parse_path(const std::string& text, const std::string& where) {
  std::vector<std::uint16_t> path;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, '/'))
    if (!part.empty()) path.push_back(fid_of(part, where));
  if (path.empty() || path.front() != kMf) path.insert(path.begin(), kMf);
  return path;
}

bool all_digits(const std::string& s) {
  for (char c : s)
    if (c < '0' || c > '9') return false;
  return !s.empty();
}

void add_file(SimProfile& p, SimFile f, const std::string& where) {
  if (f.parent >= 0) {
    if (p.child(f.parent, f.id)) throw ProfileError(ProfileErrc::DuplicateFileId, where + ": duplicate file id");
  }
  p.files.push_back(std::move(f));
}

int ensure_df(SimProfile& p, std::uint16_t fid) {
  if (auto idx = p.child(0, fid)) {
    if (!p.files[static_cast<std::size_t>(*idx)].is_dir())
      throw ProfileError(ProfileErrc::DuplicateFileId, "helper DF clashes with an EF");
    return *idx;
  }
  SimFile df;
  df.id = fid;
  df.kind = FileKind::DF;
  df.parent = 0;
  p.files.push_back(df);
  return static_cast<int>(p.files.size() - 1);
}

void add_helper_ef(SimProfile& p, int parent, std::uint16_t fid, Bytes body, const std::string& what) {
  if (p.child(parent, fid))
    throw ProfileError(ProfileErrc::DuplicateFileId, what + " helper clashes with an explicit file");
  SimFile ef;
  ef.id = fid;
  ef.kind = FileKind::Transparent;
  ef.parent = parent;
  ef.body = std::move(body);
  p.files.push_back(std::move(ef));
}

} // namespace

std::optional<int> SimProfile::child(int dir, std::uint16_t fid) const {
  for (std::size_t i = 0; i < files.size(); ++i)
    if (files[i].parent == dir && files[i].id == fid) return static_cast<int>(i);
  return std::nullopt;
}

std::optional<int> SimProfile::by_path(const std::vector<std::uint16_t>& path) const {
  if (path.empty() || path.front() != kMf || files.empty()) return std::nullopt;
  int cur = 0;
  for (std::size_t i = 1; i < path.size(); ++i) {
    auto next = child(cur, path[i]);
    if (!next) return std::nullopt;
    cur = *next;
  }
  return cur;
}

std::vector<std::uint16_t> SimProfile::path_of(int index) const {
  std::vector<std::uint16_t> out;
  for (int i = index; i >= 0; i = files[static_cast<std::size_t>(i)].parent)
    out.insert(out.begin(), files[static_cast<std::size_t>(i)].id);
  return out;
}

char luhn_digit(const std::string& digits) {
  int sum = 0;
  bool dbl = true;
  for (auto it = digits.rbegin(); it != digits.rend(); ++it) {
    int d = *it - '0';
    if (dbl) {
      d *= 2;
      if (d > 9) d -= 9;
    }
    sum += d;
    dbl = !dbl;
  }
  return static_cast<char>('0' + (10 - sum % 10) % 10);
}

Bytes encode_imsi(const std::string& digits) {
  if (digits.size() < 6 || digits.size() > 15 || !all_digits(digits))
    throw ProfileError(ProfileErrc::BadImsiDigits, "IMSI must be 6..15 decimal digits");
  const bool odd = digits.size() % 2 == 1;
  std::vector<std::uint8_t> nibbles;
  nibbles.push_back(static_cast<std::uint8_t>(odd ? 0x9 : 0x1));
  for (char c : digits) nibbles.push_back(static_cast<std::uint8_t>(c - '0'));
  if (nibbles.size() % 2) nibbles.push_back(0xF);
  Bytes out{static_cast<std::uint8_t>(nibbles.size() / 2)};
  for (std::size_t i = 0; i < nibbles.size(); i += 2)
    out.push_back(static_cast<std::uint8_t>(nibbles[i] | (nibbles[i + 1] << 4)));
  out.resize(9, 0xFF);
  return out;
}

Bytes encode_iccid(const std::string& digits) {
  if (!all_digits(digits) || (digits.size() != 19 && digits.size() != 20))
    throw ProfileError(ProfileErrc::BadIccidDigits, "ICCID must be 19 digits (check digit appended) or 20");
  std::string full = digits.size() == 19 ? digits + luhn_digit(digits) : digits;
  Bytes out;
  for (std::size_t i = 0; i < full.size(); i += 2) {
    std::uint8_t lo = static_cast<std::uint8_t>(full[i] - '0');
    std::uint8_t hi = i + 1 < full.size() ? static_cast<std::uint8_t>(full[i + 1] - '0') : 0xF;
    out.push_back(static_cast<std::uint8_t>(lo | (hi << 4)));
  }
  return out;
}

SimProfile load_profile(const json& doc) {
  only_keys(doc, {"atr", "imsi", "iccid", "auth", "files", "proactive"}, "profile");
  SimProfile p;

  auto files = doc.find("files");
  if (files == doc.end() || !files->is_array() || files->empty()) schema("files: MF is mandatory");
  for (std::size_t n = 0; n < files->size(); ++n) {
    const json& f = (*files)[n];
    const std::string where = "files[" + std::to_string(n) + "]";
    only_keys(f, {"id", "kind", "parent", "body", "records", "record_len", "read_only"}, where);
    SimFile file;
    file.id = fid_of(str(f, "id", where), where);
    const std::string kind = str(f, "kind", where);
    if (kind == "mf") file.kind = FileKind::MF;
    else if (kind == "df") file.kind = FileKind::DF;
    else if (kind == "transparent") file.kind = FileKind::Transparent;
    else if (kind == "linear_fixed") file.kind = FileKind::LinearFixed;
    else schema(where + ": unknown kind '" + kind + "'");

    if (n == 0) {
      if (file.kind != FileKind::MF || file.id != kMf) schema(where + ": the first file must be the MF (3F00)");
      if (f.contains("parent")) schema(where + ": the MF has no parent");
      p.files.push_back(file);
      continue;
    }
    if (file.kind == FileKind::MF) schema(where + ": only one MF allowed");

    auto parent_path = f.contains("parent") ? parse_path(str(f, "parent", where), where)
                                            : std::vector<std::uint16_t>{kMf};
    auto parent = p.by_path(parent_path);
    if (!parent || !p.files[static_cast<std::size_t>(*parent)].is_dir())
      schema(where + ": parent directory not found (parents must be listed first)");
    file.parent = *parent;
    if (f.contains("read_only")) {
      if (!f["read_only"].is_boolean()) schema(where + ": read_only must be a boolean");
      file.read_only = f["read_only"].get<bool>();
    }

    if (file.kind == FileKind::Transparent) {
      if (f.contains("records") || f.contains("record_len")) schema(where + ": records on a transparent EF");
      if (f.contains("body")) file.body = hex_field(f["body"], where + ".body");
      if (file.body.size() > kMaxBody) schema(where + ": body larger than 32 KiB");
    } else if (file.kind == FileKind::LinearFixed) {
      if (f.contains("body")) schema(where + ": body on a linear fixed EF");
      if (f.contains("records")) {
        if (!f["records"].is_array()) schema(where + ".records: expected a list");
        for (std::size_t r = 0; r < f["records"].size(); ++r)
          file.records.push_back(hex_field(f["records"][r], where + ".records[" + std::to_string(r) + "]"));
      }
      if (f.contains("record_len")) {
        if (!f["record_len"].is_number_integer()) schema(where + ".record_len must be an integer");
        file.record_len = f["record_len"].get<int>();
      } else if (!file.records.empty()) {
        file.record_len = static_cast<int>(file.records.front().size());
      }
      if (file.record_len < 1 || file.record_len > 255) schema(where + ": record_len must be 1..255");
      for (auto& r : file.records)
        if (static_cast<int>(r.size()) != file.record_len)
          throw ProfileError(ProfileErrc::RecordLengthMismatch, where + ": record length differs from record_len");
      if (file.records.size() > 254) schema(where + ": more than 254 records");
    } else if (f.contains("body") || f.contains("records")) {
      schema(where + ": directories carry no content");
    }
    add_file(p, std::move(file), where);
  }

  if (doc.contains("imsi")) {
    if (!doc["imsi"].is_string()) schema("imsi must be a digit string");
    int gsm = ensure_df(p, kDfGsm);
    add_helper_ef(p, gsm, kEfImsi, encode_imsi(doc["imsi"].get<std::string>()), "imsi");
  }
  if (doc.contains("iccid")) {
    if (!doc["iccid"].is_string()) schema("iccid must be a digit string");
    add_helper_ef(p, 0, kEfIccid, encode_iccid(doc["iccid"].get<std::string>()), "iccid");
  }

  if (doc.contains("auth")) {
    const json& a = doc["auth"];
    only_keys(a, {"mode", "key", "vectors"}, "auth");
    const std::string mode = str(a, "mode", "auth");
    if (mode == "xor") {
      p.auth.mode = AuthConfig::Mode::XorTest;
      if (a.contains("vectors")) schema("auth: vectors given for xor mode");
      Bytes key = a.contains("key") ? hex_field(a["key"], "auth.key") : Bytes(16, 0);
      if (key.size() != 16) schema("auth.key must be 16 octets");
      std::copy(key.begin(), key.end(), p.auth.key.begin());
    } else if (mode == "static") {
      p.auth.mode = AuthConfig::Mode::StaticVectors;
      if (a.contains("key")) schema("auth: key given for static mode");
      if (!a.contains("vectors") || !a["vectors"].is_array()) schema("auth.vectors must be a list");
      std::set<Bytes> seen;
      for (std::size_t i = 0; i < a["vectors"].size(); ++i) {
        const json& v = a["vectors"][i];
        const std::string where = "auth.vectors[" + std::to_string(i) + "]";
        only_keys(v, {"challenge", "response"}, where);
        Bytes c = hex_field(v.value("challenge", json()), where + ".challenge");
        Bytes r = hex_field(v.value("response", json()), where + ".response");
        if (!seen.insert(c).second) schema(where + ": duplicate challenge");
        if (r.size() > 256) schema(where + ": response longer than 256 octets");
        p.auth.vectors.emplace_back(std::move(c), std::move(r));
      }
    } else {
      schema("auth.mode must be 'xor' or 'static'");
    }
  }

  if (doc.contains("proactive")) {
    if (!doc["proactive"].is_array()) schema("proactive must be a list of hex strings");
    for (std::size_t i = 0; i < doc["proactive"].size(); ++i) {
      Bytes cmd = hex_field(doc["proactive"][i], "proactive[" + std::to_string(i) + "]");
      if (cmd.empty() || cmd.size() > 255) schema("proactive commands must be 1..255 octets");
      p.proactive.push_back(std::move(cmd));
    }
  }

  if (doc.contains("atr")) {
    p.atr = hex_field(doc["atr"], "atr");
    try {
      iso7816::parse_atr(p.atr);
    } catch (const iso7816::Iso7816Error& e) {
      schema(std::string("atr: ") + e.what());
    }
  } else {
    const Bytes historical{'v', 'S', 'I', 'M'};
    p.atr = iso7816::build_atr({}, historical);
  }
  return p;
}

SimProfile load_profile_text(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    schema(std::string("not valid JSON: ") + e.what());
  }
  return load_profile(doc);
}

SimProfile load_profile_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) schema("cannot open profile " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return load_profile_text(ss.str());
}

} // namespace simtunnel::vsim
