#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cpoforge/errors.hpp"
#include "cpoforge/model.hpp"
#include "support/rigged_params.hpp"
#include "support/test_util.hpp"

using namespace cpoforge;
using cpoforge::testing::TempDir;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 32;
  return cfg;
}

}  // namespace

TEST_SUITE("model") {

TEST_CASE("config validation") {
  ModelConfig cfg = tiny_config();
  cfg.n_heads = 3;  // 16 % 3 != 0
  CHECK_THROWS_AS(cfg.validate(), InternalError);
  cfg = tiny_config();
  cfg.d_model = 0;
  CHECK_THROWS_AS(cfg.validate(), InternalError);
}

TEST_CASE("zeroed output head gives exactly uniform rows") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  cpoforge::testing::zero_token_embedding(params);
  const TokenSeq tokens{vocab::kBos, 72, 105, vocab::kEos};
  const Tensor out = forward_logprobs(params, tokens);
  REQUIRE(out.shape() == Shape{4, 260});
  const double uniform = -std::log(260.0);
  for (double v : out.data()) {
    CHECK(std::abs(v - uniform) < 1e-12);
  }
}

TEST_CASE("every row is a log-distribution on random params") {
  ModelParams params = ModelParams::init(tiny_config(), 11);
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<TokenId> tok(0, vocab::kSize - 1);
  for (int trial = 0; trial < 5; ++trial) {
    TokenSeq tokens{vocab::kBos};
    for (int i = 0; i < 12; ++i) tokens.push_back(tok(rng));
    const Tensor out = forward_logprobs(params, tokens);
    const std::size_t v = params.config.vocab_size;
    for (std::size_t r = 0; r < tokens.size(); ++r) {
      double mx = out.data()[r * v];
      for (std::size_t c = 1; c < v; ++c) {
        mx = std::max(mx, out.data()[r * v + c]);
      }
      double total = 0.0;
      for (std::size_t c = 0; c < v; ++c) {
        total += std::exp(out.data()[r * v + c] - mx);
      }
      const double lse = mx + std::log(total);
      CHECK(std::abs(lse) < 1e-9);
    }
  }
}

TEST_CASE("causality: permuting a suffix leaves earlier rows unchanged") {
  ModelParams params = ModelParams::init(tiny_config(), 19);
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<TokenId> tok(0, 255);
  for (int trial = 0; trial < 4; ++trial) {
    TokenSeq tokens{vocab::kBos};
    for (int i = 0; i < 14; ++i) tokens.push_back(tok(rng));
    const std::size_t cut = 6;
    TokenSeq permuted = tokens;
    std::shuffle(permuted.begin() + cut, permuted.end(), rng);

    NoGradGuard guard;
    const Tensor a = forward_logprobs(params, tokens);
    const Tensor b = forward_logprobs(params, permuted);
    const std::size_t v = params.config.vocab_size;
    for (std::size_t r = 0; r + 1 < cut; ++r) {
      for (std::size_t c = 0; c < v; ++c) {
        CHECK(a.data()[r * v + c] == b.data()[r * v + c]);
      }
    }
  }
}

TEST_CASE("sequence_logprob under the uniform model is -T ln 260") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  cpoforge::testing::zero_token_embedding(params);
  const FramedPair framed = frame_pair(encode("hi"), encode("abc"));
  const Tensor logp =
      sequence_logprob(params, framed.tokens, framed.target_start);
  const double expected = -4.0 * std::log(260.0);  // "abc" + EOS
  CHECK(std::abs(logp.value() - expected) < 1e-9);
}

TEST_CASE("empty target scores only the EOS position") {
  ModelParams params = ModelParams::init(tiny_config(), 3);
  cpoforge::testing::zero_token_embedding(params);
  const FramedPair framed = frame_pair(encode("hi"), {});
  const Tensor logp =
      sequence_logprob(params, framed.tokens, framed.target_start);
  CHECK(std::abs(logp.value() + std::log(260.0)) < 1e-12);
}

TEST_CASE("sequence_logprob matches hand-summed fixed logits") {
  // Same logits at every position: 2 for 'A', 1 for 'B', 0 elsewhere.
  std::vector<double> logits(260, 0.0);
  logits[65] = 2.0;
  logits[66] = 1.0;
  ModelParams params =
      cpoforge::testing::make_fixed_logits_params(tiny_config(), logits);

  const FramedPair framed = frame_pair(encode("x"), encode("AB"));
  const Tensor logp =
      sequence_logprob(params, framed.tokens, framed.target_start);

  const double lse = std::log(258.0 + std::exp(2.0) + std::exp(1.0));
  const double expected = (2.0 - lse) + (1.0 - lse) + (0.0 - lse);
  CHECK(logp.value() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("PAD appended after EOS does not change sequence_logprob") {
  ModelParams params = ModelParams::init(tiny_config(), 21);
  const FramedPair framed = frame_pair(encode("ab"), encode("xyz"));
  const Tensor base =
      sequence_logprob(params, framed.tokens, framed.target_start);
  TokenSeq padded = framed.tokens;
  padded.push_back(vocab::kPad);
  padded.push_back(vocab::kPad);
  padded.push_back(vocab::kPad);
  const Tensor with_pad =
      sequence_logprob(params, padded, framed.target_start);
  CHECK(base.value() == with_pad.value());
}

TEST_CASE("rejects sequences beyond max_seq_len") {
  ModelParams params = ModelParams::init(tiny_config(), 1);
  TokenSeq tokens(params.config.max_seq_len + 1, 65);
  CHECK_THROWS_AS(forward_logprobs(params, tokens), UserError);
  CHECK_THROWS_AS(sequence_logprob(params, tokens, 40), UserError);
  const FramedPair framed = frame_pair(encode("hi"), encode("yo"));
  CHECK_THROWS_AS(sequence_logprob(params, framed.tokens, framed.tokens.size()),
                  UserError);
}

TEST_CASE("checkpoint round trip is exact") {
  TempDir dir("model");
  ModelParams params = ModelParams::init(tiny_config(), 77);
  save_checkpoint(params, dir.file("model.bin"));
  const ModelParams loaded = load_checkpoint(dir.file("model.bin"));
  CHECK(loaded.config == params.config);
  const auto a = params.named();
  const auto b = loaded.named();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].first == b[i].first);
    CHECK(a[i].second.data() == b[i].second.data());
  }
}

TEST_CASE("checkpoint loading rejects other files") {
  TempDir dir("model");
  cpoforge::testing::spit(dir.file("junk.bin"), "not a checkpoint at all");
  CHECK_THROWS_AS(load_checkpoint(dir.file("junk.bin")), UserError);
  CHECK_THROWS_AS(load_checkpoint(dir.file("missing.bin")), UserError);
}

TEST_CASE("parameter count matches the architecture") {
  const ModelConfig cfg = tiny_config();
  ModelParams params = ModelParams::init(cfg, 0);
  const std::size_t d = cfg.d_model;
  std::size_t expected = cfg.vocab_size * d + cfg.max_seq_len * d;
  expected += cfg.n_layers * (4 * (d * d + d)                     // attention
                              + 2 * (d * cfg.d_ff) + cfg.d_ff + d  // mlp
                              + 4 * d);                            // layer norms
  expected += 2 * d;  // final layer norm
  CHECK(params.parameter_count() == expected);
  CHECK(params.all_finite());
}

}  // TEST_SUITE
