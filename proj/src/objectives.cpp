#include "cpoforge/objectives.hpp"

#include <algorithm>

#include "cpoforge/errors.hpp"

namespace cpoforge {

Normalization normalization_from_string(const std::string& s) {
  if (s == "sum") return Normalization::kSum;
  if (s == "per_token_mean") return Normalization::kPerTokenMean;
  throw UserError("unknown normalization `" + s +
                  "` (valid: sum, per_token_mean)");
}

std::string to_string(Normalization n) {
  return n == Normalization::kSum ? "sum" : "per_token_mean";
}

void CpoConfig::validate() const {
  if (!(beta > 0.0)) {
    throw UserError("beta must be positive, got " + std::to_string(beta));
  }
}

TripletTokens encode_triplet(const PreferenceTriplet& triplet) {
  TripletTokens tokens;
  tokens.source = encode(triplet.source);
  tokens.chosen = encode(triplet.chosen);
  tokens.rejected = encode(triplet.rejected);
  return tokens;
}

namespace {

struct FramedBatchItem {
  TokenSeq chosen;
  std::size_t chosen_start = 0;
  TokenSeq rejected;  // empty when not requested
  std::size_t rejected_start = 0;
};

// Frames every sequence in the batch and pads all of them to the longest
// one. sequence_logprob masks PAD targets, so padding leaves values and
// gradients untouched.
std::vector<FramedBatchItem> assemble_batch(std::span<const TripletTokens> batch,
                                            bool with_rejected) {
  std::vector<FramedBatchItem> items;
  items.reserve(batch.size());
  std::size_t max_len = 0;
  for (const TripletTokens& t : batch) {
    FramedBatchItem item;
    FramedPair chosen = frame_pair(t.source, t.chosen);
    item.chosen = std::move(chosen.tokens);
    item.chosen_start = chosen.target_start;
    max_len = std::max(max_len, item.chosen.size());
    if (with_rejected) {
      FramedPair rejected = frame_pair(t.source, t.rejected);
      item.rejected = std::move(rejected.tokens);
      item.rejected_start = rejected.target_start;
      max_len = std::max(max_len, item.rejected.size());
    }
    items.push_back(std::move(item));
  }
  for (FramedBatchItem& item : items) {
    item.chosen.resize(max_len, vocab::kPad);
    if (with_rejected) item.rejected.resize(max_len, vocab::kPad);
  }
  return items;
}

Tensor aggregate_logprob(const ModelParams& params, const TokenSeq& framed,
                         std::size_t target_start, Normalization norm) {
  Tensor logp = sequence_logprob(params, framed, target_start);
  if (norm == Normalization::kPerTokenMean) {
    const std::size_t count = target_token_count(framed, target_start);
    if (count > 0) logp = scale(logp, 1.0 / static_cast<double>(count));
  }
  return logp;
}

Tensor batch_mean(std::vector<Tensor>& terms) {
  return mean(concat(terms, 0));
}

}  // namespace

Tensor sft_loss(const ModelParams& params, std::span<const TripletTokens> batch,
                const CpoConfig& config) {
  if (batch.empty()) throw UserError("sft_loss: empty batch");
  auto items = assemble_batch(batch, /*with_rejected=*/false);
  std::vector<Tensor> logps;
  logps.reserve(items.size());
  for (const FramedBatchItem& item : items) {
    logps.push_back(aggregate_logprob(params, item.chosen, item.chosen_start,
                                      config.normalization));
  }
  return scale(batch_mean(logps), -1.0);
}

Tensor pref_loss(const ModelParams& params,
                 std::span<const TripletTokens> batch,
                 const CpoConfig& config) {
  if (batch.empty()) throw UserError("pref_loss: empty batch");
  config.validate();
  auto items = assemble_batch(batch, /*with_rejected=*/true);
  std::vector<Tensor> terms;
  terms.reserve(items.size());
  for (const FramedBatchItem& item : items) {
    Tensor logp_c = aggregate_logprob(params, item.chosen, item.chosen_start,
                                      config.normalization);
    Tensor logp_r = aggregate_logprob(params, item.rejected,
                                      item.rejected_start,
                                      config.normalization);
    Tensor margin = add(logp_c, scale(logp_r, -1.0));
    // -log sigmoid(beta * margin) == softplus(-beta * margin)
    terms.push_back(softplus(scale(margin, -config.beta)));
  }
  return batch_mean(terms);
}

LossBreakdown cpo_loss(const ModelParams& params,
                       std::span<const TripletTokens> batch,
                       const CpoConfig& config) {
  if (batch.empty()) throw UserError("cpo_loss: empty batch");
  config.validate();
  auto items = assemble_batch(batch, /*with_rejected=*/true);
  std::vector<Tensor> pref_terms;
  std::vector<Tensor> nll_terms;
  pref_terms.reserve(items.size());
  nll_terms.reserve(items.size());
  for (const FramedBatchItem& item : items) {
    Tensor logp_c = aggregate_logprob(params, item.chosen, item.chosen_start,
                                      config.normalization);
    Tensor logp_r = aggregate_logprob(params, item.rejected,
                                      item.rejected_start,
                                      config.normalization);
    Tensor margin = add(logp_c, scale(logp_r, -1.0));
    pref_terms.push_back(softplus(scale(margin, -config.beta)));
    nll_terms.push_back(scale(logp_c, -1.0));
  }
  LossBreakdown breakdown;
  breakdown.pref = batch_mean(pref_terms);
  breakdown.sft = batch_mean(nll_terms);
  breakdown.total = add(breakdown.pref, breakdown.sft);
  return breakdown;
}

double preference_margin(const ModelParams& params,
                         const TripletTokens& triplet,
                         const CpoConfig& config) {
  NoGradGuard no_grad;
  FramedPair chosen = frame_pair(triplet.source, triplet.chosen);
  FramedPair rejected = frame_pair(triplet.source, triplet.rejected);
  Tensor logp_c = aggregate_logprob(params, chosen.tokens, chosen.target_start,
                                    config.normalization);
  Tensor logp_r = aggregate_logprob(params, rejected.tokens,
                                    rejected.target_start,
                                    config.normalization);
  return logp_c.value() - logp_r.value();
}

}  // namespace cpoforge
