#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cpoforge/model.hpp"
#include "cpoforge/objectives.hpp"
#include "cpoforge/prefgen.hpp"

namespace cpoforge {

enum class Objective { kSft, kCpo };

Objective objective_from_string(const std::string& s);
std::string to_string(Objective o);

struct TrainConfig {
  std::size_t batch_size = 4;
  std::size_t grad_accum = 8;  // effective batch = batch_size * grad_accum
  double lr_peak = 1e-3;
  std::size_t warmup_steps = 200;
  std::size_t epochs = 1;
  std::uint64_t seed = 42;
  std::size_t checkpoint_every = 31;
  Objective objective = Objective::kCpo;
  CpoConfig cpo;
  bool shuffle = false;       // single pass in dataset order by default
  std::size_t log_every = 1;  // loss CSV row cadence
  std::size_t max_steps = 0;  // 0 = run all epochs; otherwise stop early

  void validate() const;
  std::size_t effective_batch() const { return batch_size * grad_accum; }
};

std::size_t steps_per_epoch(std::size_t dataset_size,
                            std::size_t effective_batch);

// Cosine schedule with linear warmup. The warmup span auto-clamps to
// min(config.warmup_steps, total_steps / 10) so short desk runs are not
// stuck near zero; decay reaches 0 at total_steps.
double lr_at(std::size_t step, const TrainConfig& config,
             std::size_t total_steps);

// Adam moments for one parameter list, in ModelParams::named() order.
struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::int64_t t = 0;  // completed updates (bias-correction counter)
};

constexpr double kAdamBeta1 = 0.9;
constexpr double kAdamBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

// One Adam update from the accumulated gradients. No weight decay.
void adam_step(std::span<std::pair<std::string, Tensor>> params,
               AdamState& state, double lr);

struct LossRow {
  std::size_t step = 0;  // 1-based optimizer step count
  double lr = 0.0;
  double loss_total = 0.0;
  double loss_pref = 0.0;  // 0 for pure SFT runs
  double loss_sft = 0.0;
};

struct TrainResult {
  std::vector<LossRow> history;
  std::vector<std::string> checkpoint_labels;
  std::size_t final_step = 0;
};

// Runs the optimization loop over the triplets (SFT consumes only
// (source, chosen)). Deterministic for a fixed (seed, config, dataset).
// Writes `checkpoint-<step>/` directories plus loss.csv under out_dir;
// pass an empty out_dir to keep everything in memory. `resume_from`
// restarts from a checkpoint directory written by this function and
// reproduces the uninterrupted trajectory exactly.
TrainResult train(ModelParams& params, std::span<const PreferenceTriplet> data,
                  const TrainConfig& config,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from = {});

// TrainState sidecar (Adam moments + step counter) stored next to the
// model inside each checkpoint directory.
void save_train_state(const AdamState& state, std::size_t step,
                      const std::filesystem::path& path);
std::pair<AdamState, std::size_t> load_train_state(
    const std::filesystem::path& path);

// Parsed `key=value` config file; unknown keys and bad values are
// reported with their line number. CLI flags override file values.
struct TrainFileConfig {
  TrainConfig train;
  ModelConfig model;
};

TrainFileConfig parse_train_config(const std::filesystem::path& path);

}  // namespace cpoforge
