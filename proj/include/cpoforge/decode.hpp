#pragma once

#include <span>

#include "cpoforge/model.hpp"
#include "cpoforge/tokenizer.hpp"

namespace cpoforge {

// Greedy autoregressive generation from the framed prompt
// [BOS] + source + [SEP]. Appends the argmax token until EOS,
// max_new_tokens, or the context limit; EOS is not returned. Argmax ties
// break toward the lowest token id, keeping generation a pure function
// of (params, source, max_new_tokens) across platforms.
TokenSeq greedy_generate(const ModelParams& params,
                         std::span<const TokenId> source,
                         std::size_t max_new_tokens);

}  // namespace cpoforge
