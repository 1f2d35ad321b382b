#include "cpoforge/tokenizer.hpp"

#include "cpoforge/errors.hpp"
#include "cpoforge/utf8.hpp"

namespace cpoforge {

TokenSeq encode(std::string_view text) {
  TokenSeq ids;
  ids.reserve(text.size());
  for (unsigned char b : text) {
    ids.push_back(static_cast<TokenId>(b));
  }
  return ids;
}

std::string decode(const TokenSeq& seq) {
  std::string bytes;
  bytes.reserve(seq.size());
  for (TokenId id : seq) {
    if (id < 0 || id >= vocab::kSize) {
      throw InternalError("decode: token id " + std::to_string(id) +
                          " outside vocabulary [0, " +
                          std::to_string(vocab::kSize) + ")");
    }
    if (vocab::is_special(id)) continue;
    bytes.push_back(static_cast<char>(static_cast<unsigned char>(id)));
  }

  std::string out;
  out.reserve(bytes.size());
  std::size_t pos = 0;
  while (pos < bytes.size()) {
    const Utf8Decoded d = utf8_decode_next(bytes, pos);
    utf8_append(out, d.codepoint);
    pos += d.length;
  }
  return out;
}

FramedPair frame_pair(const TokenSeq& source, const TokenSeq& target) {
  FramedPair framed;
  framed.tokens.reserve(source.size() + target.size() + 3);
  framed.tokens.push_back(vocab::kBos);
  framed.tokens.insert(framed.tokens.end(), source.begin(), source.end());
  framed.tokens.push_back(vocab::kSep);
  framed.target_start = framed.tokens.size();
  framed.tokens.insert(framed.tokens.end(), target.begin(), target.end());
  framed.tokens.push_back(vocab::kEos);
  return framed;
}

}  // namespace cpoforge
