#include <doctest.h>

#include <cmath>
#include <limits>

#include "cpoforge/corpus.hpp"
#include "cpoforge/errors.hpp"
#include "cpoforge/trainer.hpp"
#include "support/test_util.hpp"

using namespace cpoforge;
using cpoforge::testing::TempDir;
using cpoforge::testing::files_identical;
using cpoforge::testing::spit;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.n_layers = 1;
  cfg.d_model = 16;
  cfg.n_heads = 2;
  cfg.d_ff = 32;
  cfg.max_seq_len = 48;
  return cfg;
}

std::vector<PreferenceTriplet> synthetic_triplets(std::size_t n) {
  std::vector<PreferenceTriplet> data;
  for (std::size_t i = 0; i < n; ++i) {
    PreferenceTriplet t;
    t.source = "src " + std::to_string(i % 16);
    t.chosen = "alvo " + std::to_string(i % 16);
    t.rejected = "meta " + std::to_string(i % 16);
    t.id = static_cast<std::int64_t>(i);
    data.push_back(std::move(t));
  }
  return data;
}

std::vector<PreferenceTriplet> toy_corpus_triplets() {
  const Corpus corpus = load_tm(std::string(CPOFORGE_TEST_DATA_DIR) +
                                "/toy_tm_64.jsonl");
  std::vector<PreferenceTriplet> data;
  for (const SegmentPair& pair : corpus.pairs) {
    PreferenceTriplet t;
    t.source = pair.source;
    t.chosen = pair.chosen;
    t.rejected = pair.chosen.substr(0, pair.chosen.size() / 2);  // stand-in
    t.id = pair.id;
    data.push_back(std::move(t));
  }
  return data;
}

}  // namespace

TEST_SUITE("trainer") {

TEST_CASE("lr schedule hits the anchor points") {
  TrainConfig cfg;  // warmup 200, peak 1e-3
  const std::size_t total = 2000;
  CHECK(lr_at(0, cfg, total) == 0.0);
  CHECK(lr_at(200, cfg, total) == doctest::Approx(1e-3).epsilon(1e-15));
  // Midpoint of the cosine span: 200 + (2000 - 200) / 2 = 1100.
  CHECK(std::abs(lr_at(1100, cfg, total) - 5e-4) < 1e-12);
  CHECK(lr_at(total, cfg, total) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_THROWS_AS(lr_at(total + 1, cfg, total), UserError);
}

TEST_CASE("warmup clamps on short runs") {
  TrainConfig cfg;
  // total 31 steps: warmup becomes 3, peak reached there.
  CHECK(lr_at(0, cfg, 31) == 0.0);
  CHECK(lr_at(3, cfg, 31) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_at(31, cfg, 31) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("steps_per_epoch matches the published schedule") {
  CHECK(steps_per_epoch(992, 32) == 31);
  CHECK(steps_per_epoch(14700, 32) == 460);  // ceil; 459 with floor
  CHECK(steps_per_epoch(1000, 32) == 32);
  CHECK(steps_per_epoch(64, 32) == 2);
  CHECK_THROWS_AS(steps_per_epoch(0, 32), UserError);
}

TEST_CASE("adam descends a quadratic") {
  Tensor w = Tensor::scalar(1.0, true);
  std::vector<std::pair<std::string, Tensor>> params{{"w", w}};
  AdamState state;
  backward(mul(w, w));
  adam_step(params, state, 0.1);
  CHECK(w.value() < 1.0);
}

TEST_CASE("first update magnitude is about lr regardless of gradient scale") {
  for (double g : {1e-3, 1e3}) {
    Tensor w = Tensor::scalar(0.0, true);
    w.zero_grad();
    std::vector<std::pair<std::string, Tensor>> params{{"w", w}};
    AdamState state;
    Tensor loss = scale(w, g);
    backward(loss);
    adam_step(params, state, 0.01);
    CHECK(std::abs(w.value()) == doctest::Approx(0.01).epsilon(1e-4));
  }
}

TEST_CASE("zero gradient leaves parameters unchanged") {
  Tensor w = Tensor::scalar(2.5, true);
  w.zero_grad();
  std::vector<std::pair<std::string, Tensor>> params{{"w", w}};
  AdamState state;
  adam_step(params, state, 0.1);
  CHECK(w.value() == 2.5);
}

TEST_CASE("992 examples at effective batch 32 is exactly one cadence checkpoint") {
  TempDir dir("trainer");
  ModelParams params = ModelParams::init(tiny_config(), 42);
  const auto data = synthetic_triplets(992);
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.grad_accum = 4;  // effective 32
  cfg.objective = Objective::kSft;
  cfg.checkpoint_every = 31;
  const TrainResult result = train(params, data, cfg, dir.path());
  CHECK(result.final_step == 31);
  REQUIRE(result.checkpoint_labels.size() == 1);
  CHECK(result.checkpoint_labels[0] == "checkpoint-31");
  CHECK(std::filesystem::exists(dir.path() / "checkpoint-31" / "model.bin"));
  CHECK(std::filesystem::exists(dir.path() / "checkpoint-31" / "state.bin"));
  CHECK(std::filesystem::exists(dir.path() / "loss.csv"));
}

TEST_CASE("identical seeds give bitwise-identical checkpoints") {
  const auto data = synthetic_triplets(32);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.grad_accum = 2;
  cfg.epochs = 2;
  cfg.objective = Objective::kCpo;
  cfg.checkpoint_every = 4;
  cfg.shuffle = true;

  TempDir dir_a("trainer");
  TempDir dir_b("trainer");
  ModelParams pa = ModelParams::init(tiny_config(), 42);
  ModelParams pb = ModelParams::init(tiny_config(), 42);
  const TrainResult ra = train(pa, data, cfg, dir_a.path());
  const TrainResult rb = train(pb, data, cfg, dir_b.path());

  REQUIRE(ra.checkpoint_labels == rb.checkpoint_labels);
  REQUIRE(ra.history.size() == rb.history.size());
  for (std::size_t i = 0; i < ra.history.size(); ++i) {
    CHECK(ra.history[i].loss_total == rb.history[i].loss_total);
  }
  for (const std::string& label : ra.checkpoint_labels) {
    CHECK(files_identical(dir_a.path() / label / "model.bin",
                          dir_b.path() / label / "model.bin"));
    CHECK(files_identical(dir_a.path() / label / "state.bin",
                          dir_b.path() / label / "state.bin"));
  }
  CHECK(files_identical(dir_a.path() / "loss.csv", dir_b.path() / "loss.csv"));
}

TEST_CASE("interrupt and resume reproduces the uninterrupted run bitwise") {
  const auto data = synthetic_triplets(48);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.grad_accum = 2;  // 6 steps per epoch
  cfg.epochs = 2;      // 12 total
  cfg.objective = Objective::kCpo;
  cfg.checkpoint_every = 4;

  TempDir dir_full("trainer");
  ModelParams full = ModelParams::init(tiny_config(), 7);
  train(full, data, cfg, dir_full.path());

  TempDir dir_part("trainer");
  TrainConfig interrupted = cfg;
  interrupted.max_steps = 8;  // stop at a checkpoint boundary
  ModelParams part = ModelParams::init(tiny_config(), 7);
  train(part, data, interrupted, dir_part.path());

  ModelParams resumed = ModelParams::init(tiny_config(), 7);
  train(resumed, data, cfg, dir_part.path(),
        dir_part.path() / "checkpoint-8");

  CHECK(files_identical(dir_full.path() / "checkpoint-12" / "model.bin",
                        dir_part.path() / "checkpoint-12" / "model.bin"));
  CHECK(files_identical(dir_full.path() / "checkpoint-12" / "state.bin",
                        dir_part.path() / "checkpoint-12" / "state.bin"));
}

TEST_CASE("loss decreases over a 200-step smoke run on the toy corpus") {
  const auto data = toy_corpus_triplets();
  REQUIRE(data.size() == 64);
  ModelConfig model_cfg = tiny_config();
  model_cfg.max_seq_len = 96;  // toy sentences frame to ~80 tokens
  for (Objective objective : {Objective::kSft, Objective::kCpo}) {
    CAPTURE(to_string(objective));
    ModelParams params = ModelParams::init(model_cfg, 42);
    TrainConfig cfg;
    cfg.batch_size = 2;
    cfg.grad_accum = 1;  // 32 steps per epoch
    cfg.epochs = 7;      // 224 total
    cfg.max_steps = 200;
    cfg.objective = objective;
    cfg.checkpoint_every = 1000;  // keep io out of the loop
    const TrainResult result = train(params, data, cfg, "");
    REQUIRE(result.history.size() == 200);
    double first = 0.0, last = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      first += result.history[i].loss_total;
      last += result.history[200 - 20 + i].loss_total;
    }
    CHECK(last / 20.0 < first / 20.0);
  }
}

TEST_CASE("non-finite loss aborts with the step number") {
  const auto data = synthetic_triplets(8);
  ModelParams params = ModelParams::init(tiny_config(), 3);
  params.token_embedding.mutable_data()[0] =
      std::numeric_limits<double>::quiet_NaN();
  TrainConfig cfg;
  cfg.batch_size = 8;
  cfg.grad_accum = 1;
  cfg.objective = Objective::kSft;
  cfg.checkpoint_every = 1000000;
  CHECK_THROWS_WITH_AS(train(params, data, cfg, ""),
                       doctest::Contains("step 1"), InternalError);
}

TEST_CASE("config file parsing and errors") {
  TempDir dir("trainer");
  spit(dir.file("good.cfg"),
       "# smoke config\n"
       "n_layers=1\n"
       "d_model=32\n"
       "batch_size=2\n"
       "grad_accum=4\n"
       "lr_peak=5e-4\n"
       "objective=sft\n"
       "beta=0.25\n"
       "normalization=per_token_mean\n"
       "shuffle=true\n"
       "seed=17\n");
  const TrainFileConfig cfg = parse_train_config(dir.file("good.cfg"));
  CHECK(cfg.model.n_layers == 1);
  CHECK(cfg.model.d_model == 32);
  CHECK(cfg.train.batch_size == 2);
  CHECK(cfg.train.grad_accum == 4);
  CHECK(cfg.train.lr_peak == 5e-4);
  CHECK(cfg.train.objective == Objective::kSft);
  CHECK(cfg.train.cpo.beta == 0.25);
  CHECK(cfg.train.cpo.normalization == Normalization::kPerTokenMean);
  CHECK(cfg.train.shuffle);
  CHECK(cfg.train.seed == 17);

  spit(dir.file("bad_key.cfg"), "batch_size=2\nno_such_key=1\n");
  CHECK_THROWS_WITH_AS(parse_train_config(dir.file("bad_key.cfg")),
                       doctest::Contains(":2:"), UserError);
  spit(dir.file("bad_value.cfg"), "batch_size=abc\n");
  CHECK_THROWS_WITH_AS(parse_train_config(dir.file("bad_value.cfg")),
                       doctest::Contains(":1:"), UserError);
  CHECK_THROWS_AS(parse_train_config(dir.file("missing.cfg")), UserError);
}

TEST_CASE("sft training ignores rejected and accepts cpo data") {
  const auto data = synthetic_triplets(8);
  ModelParams params = ModelParams::init(tiny_config(), 2);
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.grad_accum = 2;
  cfg.objective = Objective::kSft;
  cfg.checkpoint_every = 100;
  const TrainResult result = train(params, data, cfg, "");
  CHECK(result.final_step == 1);
  CHECK(result.history[0].loss_pref == 0.0);
  CHECK(result.history[0].loss_total == result.history[0].loss_sft);
}

}  // TEST_SUITE
