#include "cpoforge/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cpoforge/errors.hpp"

namespace cpoforge {

Objective objective_from_string(const std::string& s) {
  if (s == "sft") return Objective::kSft;
  if (s == "cpo") return Objective::kCpo;
  throw UserError("unknown objective `" + s + "` (valid: sft, cpo)");
}

std::string to_string(Objective o) {
  return o == Objective::kSft ? "sft" : "cpo";
}

void TrainConfig::validate() const {
  if (batch_size == 0) throw UserError("batch_size must be positive");
  if (grad_accum == 0) throw UserError("grad_accum must be positive");
  if (epochs == 0) throw UserError("epochs must be positive");
  if (checkpoint_every == 0) throw UserError("checkpoint_every must be positive");
  if (log_every == 0) throw UserError("log_every must be positive");
  if (!(lr_peak > 0.0)) throw UserError("lr_peak must be positive");
  if (objective == Objective::kCpo) cpo.validate();
}

std::size_t steps_per_epoch(std::size_t dataset_size,
                            std::size_t effective_batch) {
  if (dataset_size == 0 || effective_batch == 0) {
    throw UserError("steps_per_epoch: dataset and batch must be nonempty");
  }
  return (dataset_size + effective_batch - 1) / effective_batch;
}

double lr_at(std::size_t step, const TrainConfig& config,
             std::size_t total_steps) {
  if (total_steps == 0) throw UserError("lr_at: total_steps must be positive");
  if (step > total_steps) {
    throw UserError("lr_at: step " + std::to_string(step) +
                    " beyond total_steps " + std::to_string(total_steps));
  }
  std::size_t warmup = std::min(config.warmup_steps, total_steps / 10);
  if (warmup == 0 && config.warmup_steps > 0 && total_steps > 1) warmup = 1;
  if (warmup > total_steps) {
    throw UserError("lr_at: warmup " + std::to_string(warmup) +
                    " exceeds total_steps " + std::to_string(total_steps));
  }
  if (warmup > 0 && step < warmup) {
    return config.lr_peak * static_cast<double>(step) /
           static_cast<double>(warmup);
  }
  const double progress = static_cast<double>(step - warmup) /
                          static_cast<double>(total_steps - warmup);
  return config.lr_peak * 0.5 * (1.0 + std::cos(M_PI * progress));
}

void adam_step(std::span<std::pair<std::string, Tensor>> params,
               AdamState& state, double lr) {
  if (state.m.empty()) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i].second.numel(), 0.0);
      state.v[i].assign(params[i].second.numel(), 0.0);
    }
  }
  if (state.m.size() != params.size()) {
    throw InternalError("adam_step: moment count " +
                        std::to_string(state.m.size()) +
                        " does not match parameter count " +
                        std::to_string(params.size()));
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(kAdamBeta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(kAdamBeta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& tensor = params[i].second;
    if (!tensor.has_grad()) continue;
    const std::vector<double>& g = tensor.grad();
    std::vector<double>& m = state.m[i];
    std::vector<double>& v = state.v[i];
    std::vector<double>& w = tensor.mutable_data();
    for (std::size_t j = 0; j < g.size(); ++j) {
      m[j] = kAdamBeta1 * m[j] + (1.0 - kAdamBeta1) * g[j];
      v[j] = kAdamBeta2 * v[j] + (1.0 - kAdamBeta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + kAdamEps);
    }
  }
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (salt + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

constexpr char kStateMagic[8] = {'C', 'P', 'O', 'F', 'S', 'T', 'A', 'T'};

}  // namespace

void save_train_state(const AdamState& state, std::size_t step,
                      const std::filesystem::path& path) {
  nlohmann::ordered_json manifest;
  manifest["format"] = "cpoforge-train-state";
  manifest["step"] = step;
  manifest["adam_t"] = state.t;
  nlohmann::ordered_json counts = nlohmann::ordered_json::array();
  for (const auto& m : state.m) counts.push_back(m.size());
  manifest["counts"] = std::move(counts);
  const std::string header = manifest.dump();

  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw UserError("cannot write train state: " + path.string());
    out.write(kStateMagic, sizeof(kStateMagic));
    const std::uint32_t header_len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& m : state.m) {
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
    }
    for (const auto& v : state.v) {
      out.write(reinterpret_cast<const char*>(v.data()),
                static_cast<std::streamsize>(v.size() * sizeof(double)));
    }
    if (!out) throw UserError("failed while writing train state: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

std::pair<AdamState, std::size_t> load_train_state(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open train state: " + path.string());
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kStateMagic, sizeof(kStateMagic)) != 0) {
    throw UserError("not a cpoforge train state: " + path.string());
  }
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw UserError("truncated train state header: " + path.string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw UserError("corrupt train state manifest: " + path.string() + ": " +
                    e.what());
  }
  AdamState state;
  const std::size_t step = manifest.at("step").get<std::size_t>();
  state.t = manifest.at("adam_t").get<std::int64_t>();
  const auto counts = manifest.at("counts").get<std::vector<std::size_t>>();
  state.m.resize(counts.size());
  state.v.resize(counts.size());
  for (std::size_t i = 0; i < counts.size(); ++i) {
    state.m[i].resize(counts[i]);
  }
  for (std::size_t i = 0; i < counts.size(); ++i) {
    state.v[i].resize(counts[i]);
  }
  for (auto& m : state.m) {
    in.read(reinterpret_cast<char*>(m.data()),
            static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  for (auto& v : state.v) {
    in.read(reinterpret_cast<char*>(v.data()),
            static_cast<std::streamsize>(v.size() * sizeof(double)));
  }
  if (!in) throw UserError("truncated train state payload: " + path.string());
  return {std::move(state), step};
}

TrainResult train(ModelParams& params, std::span<const PreferenceTriplet> data,
                  const TrainConfig& config,
                  const std::filesystem::path& out_dir,
                  const std::optional<std::filesystem::path>& resume_from) {
  config.validate();
  if (data.empty()) throw UserError("train: dataset is empty");
  if (config.objective == Objective::kCpo) {
    for (const PreferenceTriplet& t : data) {
      if (t.rejected.empty() && !t.degenerate) {
        throw UserError("train: cpo objective requires rejected candidates "
                        "(segment id " + std::to_string(t.id) + " has none)");
      }
    }
  }

  const std::size_t n = data.size();
  const std::size_t eff = config.effective_batch();
  const std::size_t spe = steps_per_epoch(n, eff);
  const std::size_t total_steps = spe * config.epochs;
  const std::size_t stop_step =
      config.max_steps == 0 ? total_steps
                            : std::min(total_steps, config.max_steps);

  std::vector<TripletTokens> encoded;
  encoded.reserve(n);
  for (const PreferenceTriplet& t : data) encoded.push_back(encode_triplet(t));

  AdamState adam;
  std::size_t start_step = 0;
  if (resume_from) {
    params = load_checkpoint(*resume_from / "model.bin");
    std::tie(adam, start_step) = load_train_state(*resume_from / "state.bin");
    if (start_step >= stop_step) {
      throw UserError("resume: checkpoint step " + std::to_string(start_step) +
                      " is not before the configured stop step " +
                      std::to_string(stop_step));
    }
  }

  const bool writing = !out_dir.empty();
  std::ofstream loss_csv;
  if (writing) {
    std::filesystem::create_directories(out_dir);
    const auto csv_path = out_dir / "loss.csv";
    const bool existed = std::filesystem::exists(csv_path);
    loss_csv.open(csv_path, resume_from && existed ? std::ios::app
                                                   : std::ios::trunc);
    if (!loss_csv) throw UserError("cannot write " + csv_path.string());
    if (!(resume_from && existed)) {
      loss_csv << "step,lr,loss_total,loss_pref,loss_sft\n";
    }
  }

  auto named = params.named();
  TrainResult result;

  auto write_checkpoint = [&](std::size_t completed) {
    const std::string label = "checkpoint-" + std::to_string(completed);
    if (writing) {
      const auto dir = out_dir / label;
      std::filesystem::create_directories(dir);
      save_checkpoint(params, dir / "model.bin");
      save_train_state(adam, completed, dir / "state.bin");
    }
    result.checkpoint_labels.push_back(label);
  };

  for (std::size_t step = start_step; step < stop_step; ++step) {
    const std::size_t epoch = step / spe;
    const std::size_t step_in_epoch = step % spe;

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    if (config.shuffle) {
      std::mt19937_64 rng(mix_seed(config.seed, epoch));
      std::shuffle(order.begin(), order.end(), rng);
    }

    const std::size_t window_begin = step_in_epoch * eff;
    const std::size_t window_end = std::min(n, window_begin + eff);
    const std::size_t window_count = window_end - window_begin;

    params.zero_grads();
    double acc_total = 0.0, acc_pref = 0.0, acc_sft = 0.0;
    for (std::size_t micro_begin = window_begin; micro_begin < window_end;
         micro_begin += config.batch_size) {
      const std::size_t micro_end =
          std::min(window_end, micro_begin + config.batch_size);
      std::vector<TripletTokens> micro;
      micro.reserve(micro_end - micro_begin);
      for (std::size_t i = micro_begin; i < micro_end; ++i) {
        micro.push_back(encoded[order[i]]);
      }
      const double weight = static_cast<double>(micro.size()) /
                            static_cast<double>(window_count);
      if (config.objective == Objective::kCpo) {
        LossBreakdown bd = cpo_loss(params, micro, config.cpo);
        backward(scale(bd.total, weight));
        acc_total += bd.total.value() * weight;
        acc_pref += bd.pref.value() * weight;
        acc_sft += bd.sft.value() * weight;
      } else {
        Tensor loss = sft_loss(params, micro, config.cpo);
        backward(scale(loss, weight));
        acc_total += loss.value() * weight;
        acc_sft += loss.value() * weight;
      }
    }

    if (!std::isfinite(acc_total)) {
      throw InternalError("train: non-finite loss at step " +
                          std::to_string(step + 1));
    }
    const double lr = lr_at(step, config, total_steps);
    adam_step(named, adam, lr);
    if (!params.all_finite()) {
      throw InternalError("train: non-finite parameters after step " +
                          std::to_string(step + 1));
    }

    const std::size_t completed = step + 1;
    LossRow row{completed, lr, acc_total, acc_pref, acc_sft};
    result.history.push_back(row);
    if (writing &&
        (completed % config.log_every == 0 || completed == stop_step)) {
      loss_csv << completed << "," << format_double(lr) << ","
               << format_double(acc_total) << "," << format_double(acc_pref)
               << "," << format_double(acc_sft) << "\n";
    }
    if (completed % config.checkpoint_every == 0) {
      write_checkpoint(completed);
    }
    result.final_step = completed;
  }

  if (result.final_step % config.checkpoint_every != 0) {
    write_checkpoint(result.final_step);
  }
  return result;
}

// --- config file -----------------------------------------------------------

namespace {

bool parse_bool(const std::string& value, const std::string& where) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  throw UserError(where + ": expected boolean, got `" + value + "`");
}

std::size_t parse_size(const std::string& value, const std::string& where) {
  try {
    std::size_t pos = 0;
    const long long parsed = std::stoll(value, &pos);
    if (pos != value.size() || parsed < 0) throw std::invalid_argument(value);
    return static_cast<std::size_t>(parsed);
  } catch (const std::exception&) {
    throw UserError(where + ": expected non-negative integer, got `" + value +
                    "`");
  }
}

double parse_double(const std::string& value, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double parsed = std::stod(value, &pos);
    if (pos != value.size()) throw std::invalid_argument(value);
    return parsed;
  } catch (const std::exception&) {
    throw UserError(where + ": expected number, got `" + value + "`");
  }
}

}  // namespace

TrainFileConfig parse_train_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open config file: " + path.string());

  TrainFileConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    std::string trimmed = trim_whitespace(line);
    if (trimmed.empty() || trimmed[0] == '#') continue;
    const std::size_t eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw UserError(where + ": expected key=value");
    }
    const std::string key = trim_whitespace(trimmed.substr(0, eq));
    const std::string value = trim_whitespace(trimmed.substr(eq + 1));
    if (key.empty()) throw UserError(where + ": empty key");

    if (key == "n_layers") {
      cfg.model.n_layers = parse_size(value, where);
    } else if (key == "d_model") {
      cfg.model.d_model = parse_size(value, where);
    } else if (key == "n_heads") {
      cfg.model.n_heads = parse_size(value, where);
    } else if (key == "d_ff") {
      cfg.model.d_ff = parse_size(value, where);
    } else if (key == "max_seq_len") {
      cfg.model.max_seq_len = parse_size(value, where);
    } else if (key == "batch_size") {
      cfg.train.batch_size = parse_size(value, where);
    } else if (key == "grad_accum") {
      cfg.train.grad_accum = parse_size(value, where);
    } else if (key == "lr_peak") {
      cfg.train.lr_peak = parse_double(value, where);
    } else if (key == "warmup_steps") {
      cfg.train.warmup_steps = parse_size(value, where);
    } else if (key == "epochs") {
      cfg.train.epochs = parse_size(value, where);
    } else if (key == "seed") {
      cfg.train.seed = parse_size(value, where);
    } else if (key == "checkpoint_every") {
      cfg.train.checkpoint_every = parse_size(value, where);
    } else if (key == "objective") {
      try {
        cfg.train.objective = objective_from_string(value);
      } catch (const UserError& e) {
        throw UserError(where + ": " + e.what());
      }
    } else if (key == "beta") {
      cfg.train.cpo.beta = parse_double(value, where);
    } else if (key == "normalization") {
      try {
        cfg.train.cpo.normalization = normalization_from_string(value);
      } catch (const UserError& e) {
        throw UserError(where + ": " + e.what());
      }
    } else if (key == "shuffle") {
      cfg.train.shuffle = parse_bool(value, where);
    } else if (key == "log_every") {
      cfg.train.log_every = parse_size(value, where);
    } else if (key == "max_steps") {
      cfg.train.max_steps = parse_size(value, where);
    } else {
      throw UserError(where + ": unknown key `" + key + "`");
    }
  }
  return cfg;
}

}  // namespace cpoforge
