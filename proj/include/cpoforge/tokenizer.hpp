#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace cpoforge {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Byte-level vocabulary: ids 0..255 are raw bytes, followed by the
// framing specials. Fixed, never serialized.
namespace vocab {
constexpr TokenId kByteCount = 256;
constexpr TokenId kBos = 256;
constexpr TokenId kEos = 257;
constexpr TokenId kSep = 258;
constexpr TokenId kPad = 259;
constexpr TokenId kSize = 260;

inline bool is_special(TokenId id) { return id >= kByteCount && id < kSize; }
}  // namespace vocab

// One id per byte of the input, in byte order. Never inserts specials.
TokenSeq encode(std::string_view text);

// Inverse of encode for valid UTF-8. Special ids are skipped; malformed
// byte runs become U+FFFD (one per maximal invalid subpart) since a
// half-trained model can emit arbitrary byte sequences.
std::string decode(const TokenSeq& seq);

struct FramedPair {
  TokenSeq tokens;           // [BOS] + source + [SEP] + target + [EOS]
  std::size_t target_start;  // index of the first target position (EOS if target empty)
};

FramedPair frame_pair(const TokenSeq& source, const TokenSeq& target);

}  // namespace cpoforge
