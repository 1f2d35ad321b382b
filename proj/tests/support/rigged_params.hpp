#pragma once

#include <vector>

#include "cpoforge/model.hpp"

namespace cpoforge::testing {

// Zeroes the (tied) token embedding: every logit row becomes exactly
// zero, so each output row is the uniform log-distribution -ln(vocab).
void zero_token_embedding(ModelParams& params);

// Zeroes every weight so the residual stream carries nothing.
void zero_all_parameters(ModelParams& params);

// Model whose logits are the same fixed vector at every position:
// logits[v] = logits_by_token[v]. Built by zeroing the network and routing
// a final-layer-norm bias through the tied output head.
ModelParams make_fixed_logits_params(const ModelConfig& config,
                                     const std::vector<double>& logits_by_token);

// Model whose argmax at row r is script[r] (rows past the script argmax to
// EOS). Positions address the *context row*: the token generated at step k
// of a prompt of length P is chosen by row P - 1 + k. Distinct scripted
// tokens (plus EOS) must not exceed d_model.
ModelParams make_scripted_params(const ModelConfig& config,
                                 const std::vector<TokenId>& script);

}  // namespace cpoforge::testing
