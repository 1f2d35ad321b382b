// cpoforge command line: synth-pairs -> train -> evaluate -> compare,
// with explicit file handoffs between the stages.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "cpoforge/corpus.hpp"
#include "cpoforge/decode.hpp"
#include "cpoforge/errors.hpp"
#include "cpoforge/model.hpp"
#include "cpoforge/prefgen.hpp"
#include "cpoforge/report.hpp"
#include "cpoforge/trainer.hpp"

namespace {

using namespace cpoforge;

// Seed resolution order: explicit flag, then config file, then the
// CPOFORGE_SEED environment variable, then the default.
std::uint64_t resolve_seed(bool flag_given, std::uint64_t flag_value,
                           std::optional<std::uint64_t> file_value,
                           std::uint64_t fallback) {
  if (flag_given) return flag_value;
  if (file_value) return *file_value;
  if (const char* env = std::getenv("CPOFORGE_SEED")) {
    try {
      return std::stoull(env);
    } catch (const std::exception&) {
      throw UserError(std::string("CPOFORGE_SEED is not an integer: ") + env);
    }
  }
  return fallback;
}

ModelParams load_params_or_init(const std::string& checkpoint,
                                const ModelConfig& config, std::uint64_t seed,
                                std::string& label) {
  if (checkpoint == "init") {
    label = "init:seed=" + std::to_string(seed);
    return ModelParams::init(config, seed);
  }
  std::filesystem::path path = checkpoint;
  if (std::filesystem::is_directory(path)) path /= "model.bin";
  label = checkpoint;
  return load_checkpoint(path);
}

struct SynthArgs {
  std::string tm, checkpoint, out, config;
  std::size_t max_new_tokens = 128;
  std::size_t subset_n = 0;
  std::uint64_t seed = 42;
  bool seed_given = false;
  bool drop_degenerate = false;
};

int run_synth_pairs(const SynthArgs& args) {
  const std::uint64_t seed = resolve_seed(args.seed_given, args.seed, {}, 42);
  ModelConfig model_cfg;
  if (!args.config.empty()) model_cfg = parse_train_config(args.config).model;

  Corpus corpus = load_tm(args.tm);
  if (args.subset_n > 0) corpus = subset(corpus, args.subset_n);

  std::string label;
  ModelParams params =
      load_params_or_init(args.checkpoint, model_cfg, seed, label);

  PreferenceDataset dataset =
      synthesize(params, corpus, args.max_new_tokens, label, seed);
  const std::size_t total = dataset.triplets.size();
  std::size_t degenerate = 0;
  for (const PreferenceTriplet& t : dataset.triplets) {
    if (t.degenerate) ++degenerate;
  }
  if (args.drop_degenerate) dataset = drop_degenerate(dataset);
  save_dataset(dataset, args.out);

  std::cout << "wrote " << dataset.triplets.size() << " triplets to "
            << args.out << " (generated " << total << ", degenerate "
            << degenerate << (args.drop_degenerate ? ", dropped" : ", kept")
            << "; generator " << label << ")\n";
  return 0;
}

struct TrainArgs {
  std::string objective, data, config, out_dir, resume;
  std::size_t batch_size = 4;
  std::size_t grad_accum = 8;
  std::size_t epochs = 1;
  std::size_t warmup_steps = 200;
  std::size_t checkpoint_every = 31;
  std::size_t max_steps = 0;
  double lr = 1e-3;
  double beta = 0.1;
  std::string normalization = "sum";
  bool shuffle = false;
  std::uint64_t seed = 42;
  // presence flags filled from CLI option counts
  bool batch_size_given = false, grad_accum_given = false,
       epochs_given = false, warmup_given = false, ckpt_every_given = false,
       max_steps_given = false, lr_given = false, beta_given = false,
       norm_given = false, shuffle_given = false, seed_given = false;
};

int run_train(const TrainArgs& args) {
  TrainFileConfig cfg;
  std::optional<std::uint64_t> file_seed;
  if (!args.config.empty()) {
    cfg = parse_train_config(args.config);
    file_seed = cfg.train.seed;
  }

  cfg.train.objective = objective_from_string(args.objective);
  if (args.batch_size_given) cfg.train.batch_size = args.batch_size;
  if (args.grad_accum_given) cfg.train.grad_accum = args.grad_accum;
  if (args.epochs_given) cfg.train.epochs = args.epochs;
  if (args.warmup_given) cfg.train.warmup_steps = args.warmup_steps;
  if (args.ckpt_every_given) cfg.train.checkpoint_every = args.checkpoint_every;
  if (args.max_steps_given) cfg.train.max_steps = args.max_steps;
  if (args.lr_given) cfg.train.lr_peak = args.lr;
  if (args.beta_given) cfg.train.cpo.beta = args.beta;
  if (args.norm_given) {
    cfg.train.cpo.normalization = normalization_from_string(args.normalization);
  }
  if (args.shuffle_given) cfg.train.shuffle = true;
  cfg.train.seed =
      resolve_seed(args.seed_given, args.seed, file_seed, cfg.train.seed);

  // The data file may be a preference dataset or a plain TM file; SFT
  // accepts both, CPO needs rejected candidates.
  std::vector<PreferenceTriplet> data;
  try {
    PreferenceDataset dataset = load_dataset(args.data);
    data = std::move(dataset.triplets);
  } catch (const UserError&) {
    Corpus corpus = load_tm(args.data);
    if (cfg.train.objective == Objective::kCpo) {
      throw UserError(
          "cpo training needs a preference dataset (synth-pairs output); `" +
          args.data + "` looks like a plain TM file");
    }
    for (const SegmentPair& pair : corpus.pairs) {
      PreferenceTriplet t;
      t.source = pair.source;
      t.chosen = pair.chosen;
      t.id = pair.id;
      data.push_back(std::move(t));
    }
  }

  std::optional<std::filesystem::path> resume;
  if (!args.resume.empty()) resume = std::filesystem::path(args.resume);

  ModelParams params = ModelParams::init(cfg.model, cfg.train.seed);
  TrainResult result = train(params, data, cfg.train, args.out_dir, resume);

  const LossRow last =
      result.history.empty() ? LossRow{} : result.history.back();
  std::cout << "trained " << result.final_step << " steps ("
            << to_string(cfg.train.objective) << "), final loss "
            << last.loss_total << ", " << result.checkpoint_labels.size()
            << " checkpoints in " << args.out_dir << "\n";
  return 0;
}

struct EvalArgs {
  std::string checkpoint, test, out, system, config;
  std::string size = "all";
  std::size_t max_new_tokens = 128;
  std::uint64_t seed = 42;
  bool seed_given = false;
};

int run_evaluate(const EvalArgs& args) {
  const std::uint64_t seed = resolve_seed(args.seed_given, args.seed, {}, 42);
  ModelConfig model_cfg;
  if (!args.config.empty()) model_cfg = parse_train_config(args.config).model;

  Corpus test = load_tm(args.test);
  std::string label;
  ModelParams params =
      load_params_or_init(args.checkpoint, model_cfg, seed, label);

  const std::string system =
      args.system.empty()
          ? std::filesystem::path(args.checkpoint).filename().string()
          : args.system;
  MetricReportRow row = evaluate_checkpoint(params, test, args.max_new_tokens,
                                            system, args.size);

  EvalReport report;
  report.language_pair = test.language_pair;
  report.test_size = test.pairs.size();
  report.checkpoint_labels.push_back(label);
  report.rows.push_back(row);
  save_report(report, args.out);

  std::cout << render_report_pretty(report);
  std::cout << "wrote " << args.out << "\n";
  return 0;
}

struct CompareArgs {
  std::string sft, cpo, out, external;
};

int run_compare(const CompareArgs& args) {
  EvalReport sft_report = load_report(args.sft);
  EvalReport cpo_report = load_report(args.cpo);
  if (!args.external.empty()) {
    sft_report = attach_external_scores(sft_report, args.external);
    cpo_report = attach_external_scores(cpo_report, args.external);
  }
  ComparisonResult result = compare(sft_report, cpo_report);

  {
    std::ofstream out(args.out, std::ios::binary);
    if (!out) throw UserError("cannot write comparison: " + args.out);
    out << result.comparison_csv;
  }
  std::filesystem::path plot_path = std::filesystem::path(args.out);
  plot_path.replace_filename("plotdata.csv");
  {
    std::ofstream out(plot_path, std::ios::binary);
    if (!out) throw UserError("cannot write plot data: " + plot_path.string());
    out << result.plot_csv;
  }
  std::cout << result.comparison_csv;
  std::cout << "wrote " << args.out << " and " << plot_path.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cpoforge: preference-pair synthesis, CPO/SFT fine-tuning, and "
               "MT evaluation for a byte-level toy causal LM"};
  app.require_subcommand(1);

  SynthArgs synth_args;
  auto* synth = app.add_subcommand(
      "synth-pairs", "Generate a preference dataset from a TM file");
  synth->add_option("--tm", synth_args.tm,
                    "TM JSONL file with source/target fields")
      ->required();
  synth->add_option("--checkpoint", synth_args.checkpoint,
                    "Checkpoint directory/file, or `init` for fresh params")
      ->required();
  synth->add_option("--out", synth_args.out, "Output preference dataset path")
      ->required();
  synth->add_option("--max-new-tokens", synth_args.max_new_tokens,
                    "Generation budget per segment")
      ->capture_default_str();
  synth->add_option("--subset", synth_args.subset_n,
                    "Use only the first N segments (0 = all)")
      ->capture_default_str();
  synth->add_flag("--drop-degenerate", synth_args.drop_degenerate,
                  "Drop triplets whose rejected equals chosen");
  synth->add_option("--config", synth_args.config,
                    "Config file providing model dimensions for `init`");
  auto* synth_seed_opt =
      synth->add_option("--seed", synth_args.seed, "Seed for `init` parameters")
          ->capture_default_str();

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "Fine-tune with SFT or CPO");
  train_cmd->add_option("--objective", train_args.objective, "sft or cpo")
      ->required();
  train_cmd->add_option("--data", train_args.data,
                        "Preference dataset (or TM file for sft)")
      ->required();
  train_cmd->add_option("--config", train_args.config, "key=value config file");
  train_cmd->add_option("--out-dir", train_args.out_dir,
                        "Directory for checkpoints and loss.csv")
      ->required();
  auto* opt_bs = train_cmd->add_option("--batch-size", train_args.batch_size,
                                       "Micro-batch size")
                     ->capture_default_str();
  auto* opt_ga = train_cmd->add_option("--grad-accum", train_args.grad_accum,
                                       "Gradient accumulation factor")
                     ->capture_default_str();
  auto* opt_ep =
      train_cmd->add_option("--epochs", train_args.epochs, "Training epochs")
          ->capture_default_str();
  auto* opt_lr =
      train_cmd->add_option("--lr", train_args.lr, "Peak learning rate")
          ->capture_default_str();
  auto* opt_wu = train_cmd->add_option("--warmup-steps", train_args.warmup_steps,
                                       "Linear warmup span")
                     ->capture_default_str();
  auto* opt_ce = train_cmd
                     ->add_option("--checkpoint-every",
                                  train_args.checkpoint_every,
                                  "Checkpoint cadence in optimizer steps")
                     ->capture_default_str();
  auto* opt_ms = train_cmd
                     ->add_option("--max-steps", train_args.max_steps,
                                  "Stop after this many steps (0 = all)")
                     ->capture_default_str();
  auto* opt_beta =
      train_cmd->add_option("--beta", train_args.beta, "Preference loss beta")
          ->capture_default_str();
  auto* opt_norm =
      train_cmd
          ->add_option("--normalization", train_args.normalization,
                       "Sequence log-prob aggregation: sum or per_token_mean")
          ->capture_default_str();
  auto* opt_sh = train_cmd->add_flag("--shuffle", train_args.shuffle,
                                     "Shuffle data each epoch (seeded)");
  auto* opt_seed =
      train_cmd->add_option("--seed", train_args.seed, "Training seed")
          ->capture_default_str();
  train_cmd->add_option("--resume", train_args.resume,
                        "Checkpoint directory to resume from");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand(
      "evaluate", "Greedy-decode a test TM and score BLEU/chrF++/TER");
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint,
                       "Checkpoint directory/file, or `init`")
      ->required();
  eval_cmd->add_option("--test", eval_args.test, "Test TM JSONL file")
      ->required();
  eval_cmd->add_option("--out", eval_args.out, "Output report CSV")->required();
  eval_cmd->add_option("--max-new-tokens", eval_args.max_new_tokens,
                       "Generation budget per segment")
      ->capture_default_str();
  eval_cmd->add_option("--system", eval_args.system,
                       "System label (default: checkpoint name)");
  eval_cmd->add_option("--size", eval_args.size, "Training-set size label")
      ->capture_default_str();
  eval_cmd->add_option("--config", eval_args.config,
                       "Config file providing model dimensions for `init`");
  auto* eval_seed_opt = eval_cmd
                            ->add_option("--seed", eval_args.seed,
                                         "Seed for `init` parameters")
                            ->capture_default_str();

  CompareArgs cmp_args;
  auto* compare_cmd = app.add_subcommand(
      "compare", "Join SFT and CPO reports into comparison and plot CSVs");
  compare_cmd->add_option("--sft", cmp_args.sft, "SFT report CSV")->required();
  compare_cmd->add_option("--cpo", cmp_args.cpo, "CPO report CSV")->required();
  compare_cmd->add_option("--out", cmp_args.out, "Output comparison CSV")
      ->required();
  compare_cmd->add_option("--external", cmp_args.external,
                          "External score JSONL (system/size/score)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (synth->parsed()) {
      synth_args.seed_given = synth_seed_opt->count() > 0;
      return run_synth_pairs(synth_args);
    }
    if (train_cmd->parsed()) {
      train_args.batch_size_given = opt_bs->count() > 0;
      train_args.grad_accum_given = opt_ga->count() > 0;
      train_args.epochs_given = opt_ep->count() > 0;
      train_args.lr_given = opt_lr->count() > 0;
      train_args.warmup_given = opt_wu->count() > 0;
      train_args.ckpt_every_given = opt_ce->count() > 0;
      train_args.max_steps_given = opt_ms->count() > 0;
      train_args.beta_given = opt_beta->count() > 0;
      train_args.norm_given = opt_norm->count() > 0;
      train_args.shuffle_given = opt_sh->count() > 0;
      train_args.seed_given = opt_seed->count() > 0;
      return run_train(train_args);
    }
    if (eval_cmd->parsed()) {
      eval_args.seed_given = eval_seed_opt->count() > 0;
      return run_evaluate(eval_args);
    }
    if (compare_cmd->parsed()) {
      return run_compare(cmp_args);
    }
  } catch (const UserError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
