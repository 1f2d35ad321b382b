#include <doctest.h>

#include "cpoforge/decode.hpp"
#include "cpoforge/errors.hpp"
#include "support/rigged_params.hpp"

using namespace cpoforge;
using cpoforge::testing::make_scripted_params;

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

TEST_SUITE("decode") {

TEST_CASE("max_new_tokens zero yields an empty sequence") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  CHECK(greedy_generate(params, encode("hi"), 0).empty());
}

TEST_CASE("a head rigged toward one token emits it forever") {
  // Script every row to elect 'A'; EOS never wins, so generation runs to
  // the max_new_tokens budget.
  const ModelConfig cfg = tiny_config();
  std::vector<TokenId> script(cfg.max_seq_len, 65);
  ModelParams params = make_scripted_params(cfg, script);
  const TokenSeq out = greedy_generate(params, encode("xy"), 6);
  CHECK(out == TokenSeq(6, 65));
}

TEST_CASE("generation stops at a scripted EOS") {
  const ModelConfig cfg = tiny_config();
  // Prompt [BOS]+"xy"+[SEP] has length 4; rows 3,4 elect 'A','B', then EOS.
  std::vector<TokenId> script(cfg.max_seq_len, vocab::kEos);
  script[3] = 65;
  script[4] = 66;
  ModelParams params = make_scripted_params(cfg, script);
  const TokenSeq out = greedy_generate(params, encode("xy"), 16);
  CHECK(out == TokenSeq{65, 66});
  CHECK(decode(out) == "AB");
}

TEST_CASE("greedy generation is deterministic") {
  ModelParams params = ModelParams::init(tiny_config(), 9);
  const TokenSeq a = greedy_generate(params, encode("source text"), 12);
  const TokenSeq b = greedy_generate(params, encode("source text"), 12);
  CHECK(a == b);
  CHECK(a.size() <= 12);
  CHECK(std::find(a.begin(), a.end(), vocab::kEos) == a.end());
}

TEST_CASE("exact logit ties resolve to the lowest token id") {
  // All-zero parameters put every token at the same log-probability.
  ModelParams params = ModelParams::init(tiny_config(), 1);
  cpoforge::testing::zero_all_parameters(params);
  const TokenSeq out = greedy_generate(params, encode("z"), 3);
  CHECK(out == TokenSeq{0, 0, 0});
}

TEST_CASE("over-long prompts are rejected") {
  ModelParams params = ModelParams::init(tiny_config(), 1);
  const std::string long_source(params.config.max_seq_len, 'a');
  CHECK_THROWS_AS(greedy_generate(params, encode(long_source), 4), UserError);
}

TEST_CASE("generation never exceeds the context window") {
  const ModelConfig cfg = tiny_config();
  std::vector<TokenId> script(cfg.max_seq_len, 65);
  ModelParams params = make_scripted_params(cfg, script);
  // Prompt length 4, so at most max_seq_len - 4 tokens fit.
  const TokenSeq out = greedy_generate(params, encode("xy"), 1000);
  CHECK(out.size() == cfg.max_seq_len - 4);
}

}  // TEST_SUITE
