#include <doctest.h>

#include <cmath>

#include "cpoforge/errors.hpp"
#include "cpoforge/objectives.hpp"
#include "support/rigged_params.hpp"

using namespace cpoforge;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 2;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 48;
  return cfg;
}

TripletTokens tokens_of(const std::string& source, const std::string& chosen,
                        const std::string& rejected) {
  PreferenceTriplet t;
  t.source = source;
  t.chosen = chosen;
  t.rejected = rejected;
  return encode_triplet(t);
}

}  // namespace

TEST_SUITE("objectives") {

TEST_CASE("uniform model sft loss is T ln 260 per pair") {
  ModelParams params = ModelParams::init(tiny_config(), 2);
  cpoforge::testing::zero_token_embedding(params);
  const std::vector<TripletTokens> batch{tokens_of("hi", "abc", "")};
  const Tensor loss = sft_loss(params, batch);
  CHECK(std::abs(loss.value() - 4.0 * std::log(260.0)) < 1e-9);
}

TEST_CASE("a batch of two identical pairs scores like a batch of one") {
  ModelParams params = ModelParams::init(tiny_config(), 12);
  const TripletTokens item = tokens_of("source text", "translated", "");
  const std::vector<TripletTokens> one{item};
  const std::vector<TripletTokens> two{item, item};
  CHECK(sft_loss(params, one).value() ==
        doctest::Approx(sft_loss(params, two).value()).epsilon(1e-12));
}

TEST_CASE("degenerate triplet pref loss is exactly ln 2") {
  ModelParams params = ModelParams::init(tiny_config(), 9);
  const std::vector<TripletTokens> batch{
      tokens_of("press save", "pressione salvar", "pressione salvar")};
  CpoConfig config;
  const Tensor loss = pref_loss(params, batch, config);
  CHECK(std::abs(loss.value() - std::log(2.0)) < 1e-12);

  config.normalization = Normalization::kPerTokenMean;
  const Tensor norm_loss = pref_loss(params, batch, config);
  CHECK(std::abs(norm_loss.value() - std::log(2.0)) < 1e-12);
}

TEST_CASE("pref term value matches -ln sigmoid(beta * margin)") {
  // Evaluated through the same softplus primitive the loss uses.
  const double margin = std::log(3.0);
  const Tensor term = softplus(scale(Tensor::scalar(margin), -1.0));
  CHECK(term.value() == doctest::Approx(std::log(4.0 / 3.0)).epsilon(1e-12));

  // Doubling beta on a positive margin strictly lowers the term.
  const Tensor at_01 = softplus(scale(Tensor::scalar(margin), -0.1));
  const Tensor at_02 = softplus(scale(Tensor::scalar(margin), -0.2));
  CHECK(at_02.value() < at_01.value());
}

TEST_CASE("pref loss decreases as the margin grows") {
  // Fixed logits make margins controllable: chosen text uses a byte with
  // a higher fixed logit than the rejected text's byte.
  std::vector<double> logits(260, 0.0);
  logits[65] = 1.5;  // 'A'
  logits[66] = 0.5;  // 'B'
  ModelParams params =
      cpoforge::testing::make_fixed_logits_params(tiny_config(), logits);
  const std::vector<TripletTokens> batch{tokens_of("s", "A", "B")};

  CpoConfig config;
  config.beta = 1.0;
  const double margin =
      preference_margin(params, batch[0], config);
  CHECK(margin == doctest::Approx(1.0).epsilon(1e-9));  // logit gap

  const Tensor loss = pref_loss(params, batch, config);
  CHECK(loss.value() ==
        doctest::Approx(stable_softplus(-margin)).epsilon(1e-9));
  CHECK(loss.value() < std::log(2.0));  // positive margin beats ln 2
}

TEST_CASE("cpo total is exactly pref plus sft") {
  ModelParams params = ModelParams::init(tiny_config(), 5);
  const std::vector<TripletTokens> batch{
      tokens_of("ab", "xy", "z"), tokens_of("cd", "uv", "w")};
  CpoConfig config;
  const LossBreakdown bd = cpo_loss(params, batch, config);
  CHECK(bd.total.value() == bd.pref.value() + bd.sft.value());
}

TEST_CASE("uniform model with degenerate triplet composes both identities") {
  ModelParams params = ModelParams::init(tiny_config(), 2);
  cpoforge::testing::zero_token_embedding(params);
  const std::vector<TripletTokens> batch{tokens_of("hi", "abc", "abc")};
  const LossBreakdown bd = cpo_loss(params, batch, CpoConfig{});
  const double expected = std::log(2.0) + 4.0 * std::log(260.0);
  CHECK(std::abs(bd.total.value() - expected) < 1e-9);
}

TEST_CASE("per-token normalization divides by target length") {
  ModelParams params = ModelParams::init(tiny_config(), 2);
  cpoforge::testing::zero_token_embedding(params);
  CpoConfig config;
  config.normalization = Normalization::kPerTokenMean;
  const std::vector<TripletTokens> batch{tokens_of("hi", "abc", "")};
  const Tensor loss = sft_loss(params, batch, config);
  CHECK(std::abs(loss.value() - std::log(260.0)) < 1e-9);
}

TEST_CASE("extreme margins stay finite") {
  std::vector<double> logits(260, 0.0);
  logits[65] = 40.0;  // enormous margin for 'A' over 'B'
  logits[66] = -40.0;
  ModelParams params =
      cpoforge::testing::make_fixed_logits_params(tiny_config(), logits);
  const std::vector<TripletTokens> batch{
      tokens_of("s", "AAAA", "BBBB"), tokens_of("s", "BBBB", "AAAA")};
  CpoConfig config;
  config.beta = 40.0;  // |beta * margin| well past 1e4
  const LossBreakdown bd = cpo_loss(params, batch, config);
  CHECK(std::isfinite(bd.pref.value()));
  CHECK(std::isfinite(bd.sft.value()));
  CHECK(std::isfinite(bd.total.value()));
}

TEST_CASE("one gradient step on cpo_loss raises the batch margin") {
  ModelParams params = ModelParams::init(tiny_config(), 31);
  const std::vector<TripletTokens> batch{
      tokens_of("press save", "armazenar as alterações", "gravar mudancas"),
      tokens_of("close it", "fechar a sessão", "encerrar sessao")};
  CpoConfig config;
  config.beta = 1.0;

  auto batch_margin = [&] {
    double total = 0.0;
    for (const TripletTokens& t : batch) {
      total += preference_margin(params, t, config);
    }
    return total;
  };

  const double before = batch_margin();
  params.zero_grads();
  const LossBreakdown bd = cpo_loss(params, batch, config);
  backward(bd.total);
  const double lr = 1e-3;
  for (auto& [name, tensor] : params.named()) {
    Tensor t = tensor;
    if (!t.has_grad()) continue;
    auto& w = t.mutable_data();
    const auto& g = t.grad();
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * g[i];
  }
  const double after = batch_margin();
  CHECK(after > before);
}

TEST_CASE("empty batches and bad beta are rejected") {
  ModelParams params = ModelParams::init(tiny_config(), 1);
  const std::vector<TripletTokens> empty;
  CHECK_THROWS_AS(sft_loss(params, empty), UserError);
  CHECK_THROWS_AS(pref_loss(params, empty, CpoConfig{}), UserError);
  CHECK_THROWS_AS(cpo_loss(params, empty, CpoConfig{}), UserError);

  const std::vector<TripletTokens> batch{tokens_of("a", "b", "c")};
  CpoConfig bad;
  bad.beta = 0.0;
  CHECK_THROWS_AS(pref_loss(params, batch, bad), UserError);
  CHECK_THROWS_AS(normalization_from_string("bogus"), UserError);
}

}  // TEST_SUITE
