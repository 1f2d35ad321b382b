#pragma once

#include <span>
#include <string>

#include "cpoforge/model.hpp"
#include "cpoforge/prefgen.hpp"
#include "cpoforge/tensor.hpp"
#include "cpoforge/tokenizer.hpp"

namespace cpoforge {

// How per-sequence log-probabilities are aggregated before entering the
// losses. `kSum` is the objective as written; `kPerTokenMean` divides by
// the target length to neutralize the length gap between chosen and
// rejected candidates.
enum class Normalization { kSum, kPerTokenMean };

Normalization normalization_from_string(const std::string& s);
std::string to_string(Normalization n);

struct CpoConfig {
  double beta = 0.1;
  Normalization normalization = Normalization::kSum;

  void validate() const;  // beta must be positive
};

// Scalar loss terms as live graph nodes; call backward on `total`.
// total = pref + sft by construction (one scalar add, same order always).
struct LossBreakdown {
  Tensor pref;
  Tensor sft;
  Tensor total;
};

// Token-level view of one triplet; `rejected` may be left empty for
// SFT-only training.
struct TripletTokens {
  TokenSeq source;
  TokenSeq chosen;
  TokenSeq rejected;
};

TripletTokens encode_triplet(const PreferenceTriplet& triplet);

// Mean negative log-likelihood of the chosen targets given their sources.
Tensor sft_loss(const ModelParams& params, std::span<const TripletTokens> batch,
                const CpoConfig& config = {});

// Mean of -log sigmoid(beta * (logp_chosen - logp_rejected)). Evaluated
// through softplus, so the value stays finite for any margin magnitude.
Tensor pref_loss(const ModelParams& params,
                 std::span<const TripletTokens> batch, const CpoConfig& config);

// Both terms over one batch, sharing the chosen-sequence forward passes.
LossBreakdown cpo_loss(const ModelParams& params,
                       std::span<const TripletTokens> batch,
                       const CpoConfig& config);

// logp(chosen | source) - logp(rejected | source) for a single triplet,
// value only (no tape). Positive means the model prefers the chosen text.
double preference_margin(const ModelParams& params,
                         const TripletTokens& triplet,
                         const CpoConfig& config = {});

}  // namespace cpoforge
