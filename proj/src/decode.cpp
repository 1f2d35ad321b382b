#include "cpoforge/decode.hpp"

#include "cpoforge/errors.hpp"

namespace cpoforge {

TokenSeq greedy_generate(const ModelParams& params,
                         std::span<const TokenId> source,
                         std::size_t max_new_tokens) {
  const std::size_t prompt_len = source.size() + 2;  // BOS + source + SEP
  if (prompt_len + 1 > params.config.max_seq_len) {
    throw UserError("greedy_generate: prompt of length " +
                    std::to_string(prompt_len) +
                    " leaves no room for generation (max_seq_len " +
                    std::to_string(params.config.max_seq_len) + ")");
  }

  TokenSeq context;
  context.reserve(prompt_len + max_new_tokens);
  context.push_back(vocab::kBos);
  context.insert(context.end(), source.begin(), source.end());
  context.push_back(vocab::kSep);

  TokenSeq generated;
  NoGradGuard no_grad;
  while (generated.size() < max_new_tokens) {
    const Tensor logprobs = forward_logprobs(params, context);
    const std::size_t rows = context.size();
    const std::size_t v = params.config.vocab_size;
    const double* last = logprobs.data().data() + (rows - 1) * v;
    TokenId best = 0;
    for (std::size_t id = 1; id < v; ++id) {
      if (last[id] > last[best]) best = static_cast<TokenId>(id);
    }
    if (best == vocab::kEos) break;
    generated.push_back(best);
    context.push_back(best);
    if (context.size() >= params.config.max_seq_len) break;
  }
  return generated;
}

}  // namespace cpoforge
