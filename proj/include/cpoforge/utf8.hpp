#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace cpoforge {

struct Utf8Decoded {
  char32_t codepoint;   // U+FFFD when the unit is malformed
  std::size_t length;   // bytes consumed, always >= 1
  bool valid;
};

// Decodes one UTF-8 unit starting at `pos`. Malformed or truncated units
// consume their maximal invalid subpart and report U+FFFD, so a decoding
// loop always makes progress.
Utf8Decoded utf8_decode_next(std::string_view bytes, std::size_t pos);

void utf8_append(std::string& out, char32_t codepoint);

bool utf8_is_valid(std::string_view bytes);

}  // namespace cpoforge
