#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cpoforge/tensor.hpp"
#include "cpoforge/tokenizer.hpp"

namespace cpoforge {

struct ModelConfig {
  std::size_t n_layers = 2;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t max_seq_len = 256;
  std::size_t vocab_size = vocab::kSize;

  // Throws InternalError when d_model is not divisible by n_heads or any
  // dimension is zero.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

struct AttentionWeights {
  Tensor wq, bq, wk, bk, wv, bv, wo, bo;
};

struct MlpWeights {
  Tensor w1, b1, w2, b2;
};

struct LayerWeights {
  Tensor ln1_gain, ln1_bias;
  AttentionWeights attn;
  Tensor ln2_gain, ln2_bias;
  MlpWeights mlp;
};

// All learnable parameters of the decoder-only causal LM. The output
// projection is tied to the token embedding.
struct ModelParams {
  ModelConfig config;
  Tensor token_embedding;     // [vocab_size, d_model]
  Tensor position_embedding;  // [max_seq_len, d_model]
  std::vector<LayerWeights> layers;
  Tensor final_ln_gain, final_ln_bias;

  // Gaussian(0, 0.02) matrices, zero biases, unit layer-norm gains.
  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Stable, ordered view over every parameter tensor.
  std::vector<std::pair<std::string, Tensor>> named() const;

  void zero_grads();
  bool all_finite() const;
  std::size_t parameter_count() const;
};

// Per-position next-token log-probabilities, shape [len(tokens), vocab].
// Row t is a log-distribution over the token at position t + 1 and only
// depends on tokens <= t.
Tensor forward_logprobs(const ModelParams& params,
                        std::span<const TokenId> tokens);

// Log-probability of the framed target given its prompt: the sum over
// positions t in [target_start, len) of the log-prob that row t - 1
// assigns to tokens[t]. PAD positions contribute nothing, so padding
// appended after EOS does not change the result.
Tensor sequence_logprob(const ModelParams& params,
                        std::span<const TokenId> framed,
                        std::size_t target_start);

// Number of scored target positions for the same framing (PAD excluded).
std::size_t target_token_count(std::span<const TokenId> framed,
                               std::size_t target_start);

// --- checkpoint file -----------------------------------------------------
// Single file: magic, JSON manifest (config + tensor names/shapes/offsets),
// then a raw little-endian float64 payload.

void save_checkpoint(const ModelParams& params,
                     const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace cpoforge
