#include "cpoforge/utf8.hpp"

namespace cpoforge {

namespace {

constexpr char32_t kReplacement = 0xFFFD;

inline bool is_continuation(unsigned char b) { return (b & 0xC0) == 0x80; }

}  // namespace

Utf8Decoded utf8_decode_next(std::string_view bytes, std::size_t pos) {
  const auto* data = reinterpret_cast<const unsigned char*>(bytes.data());
  const std::size_t n = bytes.size();
  const unsigned char lead = data[pos];

  if (lead < 0x80) {
    return {static_cast<char32_t>(lead), 1, true};
  }

  // Expected continuation count and the valid range for the first
  // continuation byte (guards overlongs, surrogates, > U+10FFFF).
  std::size_t need = 0;
  unsigned char lo = 0x80;
  unsigned char hi = 0xBF;
  char32_t cp = 0;
  if (lead >= 0xC2 && lead <= 0xDF) {
    need = 1;
    cp = lead & 0x1F;
  } else if (lead == 0xE0) {
    need = 2;
    lo = 0xA0;
    cp = lead & 0x0F;
  } else if (lead >= 0xE1 && lead <= 0xEC) {
    need = 2;
    cp = lead & 0x0F;
  } else if (lead == 0xED) {
    need = 2;
    hi = 0x9F;
    cp = lead & 0x0F;
  } else if (lead >= 0xEE && lead <= 0xEF) {
    need = 2;
    cp = lead & 0x0F;
  } else if (lead == 0xF0) {
    need = 3;
    lo = 0x90;
    cp = lead & 0x07;
  } else if (lead >= 0xF1 && lead <= 0xF3) {
    need = 3;
    cp = lead & 0x07;
  } else if (lead == 0xF4) {
    need = 3;
    hi = 0x8F;
    cp = lead & 0x07;
  } else {
    // 0x80..0xC1, 0xF5..0xFF: never a valid lead byte.
    return {kReplacement, 1, false};
  }

  std::size_t consumed = 1;
  for (std::size_t i = 0; i < need; ++i) {
    if (pos + consumed >= n) return {kReplacement, consumed, false};
    const unsigned char b = data[pos + consumed];
    const unsigned char min = (i == 0) ? lo : 0x80;
    const unsigned char max = (i == 0) ? hi : 0xBF;
    if (b < min || b > max || !is_continuation(b)) {
      return {kReplacement, consumed, false};
    }
    cp = (cp << 6) | (b & 0x3F);
    ++consumed;
  }
  return {cp, consumed, true};
}

void utf8_append(std::string& out, char32_t cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool utf8_is_valid(std::string_view bytes) {
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const Utf8Decoded d = utf8_decode_next(bytes, pos);
    if (!d.valid) return false;
    pos += d.length;
  }
  return true;
}

}  // namespace cpoforge
