#include "cpoforge/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include <json.hpp>

#include "cpoforge/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint payload is little-endian float64");

namespace cpoforge {

void ModelConfig::validate() const {
  if (n_layers == 0 || d_model == 0 || n_heads == 0 || d_ff == 0 ||
      max_seq_len == 0) {
    throw InternalError("model config: all dimensions must be positive");
  }
  if (d_model % n_heads != 0) {
    throw InternalError("model config: d_model " + std::to_string(d_model) +
                        " not divisible by n_heads " + std::to_string(n_heads));
  }
  if (vocab_size != static_cast<std::size_t>(vocab::kSize)) {
    throw InternalError("model config: vocab_size must be " +
                        std::to_string(vocab::kSize));
  }
}

namespace {

Tensor gaussian(Shape shape, std::mt19937_64& rng, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> values(n);
  for (double& v : values) v = dist(rng);
  return Tensor::from_vector(std::move(shape), std::move(values), true);
}

constexpr double kInitStd = 0.02;

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  const std::size_t d = config.d_model;

  ModelParams p;
  p.config = config;
  p.token_embedding = gaussian({config.vocab_size, d}, rng, kInitStd);
  p.position_embedding = gaussian({config.max_seq_len, d}, rng, kInitStd);
  p.layers.resize(config.n_layers);
  for (LayerWeights& layer : p.layers) {
    layer.ln1_gain = Tensor::full({d}, 1.0, true);
    layer.ln1_bias = Tensor::zeros({d}, true);
    layer.attn.wq = gaussian({d, d}, rng, kInitStd);
    layer.attn.bq = Tensor::zeros({d}, true);
    layer.attn.wk = gaussian({d, d}, rng, kInitStd);
    layer.attn.bk = Tensor::zeros({d}, true);
    layer.attn.wv = gaussian({d, d}, rng, kInitStd);
    layer.attn.bv = Tensor::zeros({d}, true);
    layer.attn.wo = gaussian({d, d}, rng, kInitStd);
    layer.attn.bo = Tensor::zeros({d}, true);
    layer.ln2_gain = Tensor::full({d}, 1.0, true);
    layer.ln2_bias = Tensor::zeros({d}, true);
    layer.mlp.w1 = gaussian({d, config.d_ff}, rng, kInitStd);
    layer.mlp.b1 = Tensor::zeros({config.d_ff}, true);
    layer.mlp.w2 = gaussian({config.d_ff, d}, rng, kInitStd);
    layer.mlp.b2 = Tensor::zeros({d}, true);
  }
  p.final_ln_gain = Tensor::full({d}, 1.0, true);
  p.final_ln_bias = Tensor::zeros({d}, true);
  return p;
}

std::vector<std::pair<std::string, Tensor>> ModelParams::named() const {
  std::vector<std::pair<std::string, Tensor>> out;
  out.emplace_back("token_embedding", token_embedding);
  out.emplace_back("position_embedding", position_embedding);
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const std::string prefix = "layers." + std::to_string(i) + ".";
    const LayerWeights& l = layers[i];
    out.emplace_back(prefix + "ln1_gain", l.ln1_gain);
    out.emplace_back(prefix + "ln1_bias", l.ln1_bias);
    out.emplace_back(prefix + "attn.wq", l.attn.wq);
    out.emplace_back(prefix + "attn.bq", l.attn.bq);
    out.emplace_back(prefix + "attn.wk", l.attn.wk);
    out.emplace_back(prefix + "attn.bk", l.attn.bk);
    out.emplace_back(prefix + "attn.wv", l.attn.wv);
    out.emplace_back(prefix + "attn.bv", l.attn.bv);
    out.emplace_back(prefix + "attn.wo", l.attn.wo);
    out.emplace_back(prefix + "attn.bo", l.attn.bo);
    out.emplace_back(prefix + "ln2_gain", l.ln2_gain);
    out.emplace_back(prefix + "ln2_bias", l.ln2_bias);
    out.emplace_back(prefix + "mlp.w1", l.mlp.w1);
    out.emplace_back(prefix + "mlp.b1", l.mlp.b1);
    out.emplace_back(prefix + "mlp.w2", l.mlp.w2);
    out.emplace_back(prefix + "mlp.b2", l.mlp.b2);
  }
  out.emplace_back("final_ln_gain", final_ln_gain);
  out.emplace_back("final_ln_bias", final_ln_bias);
  return out;
}

void ModelParams::zero_grads() {
  for (auto& [name, tensor] : named()) {
    Tensor t = tensor;
    t.zero_grad();
  }
}

bool ModelParams::all_finite() const {
  for (const auto& [name, tensor] : named()) {
    for (double v : tensor.data()) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

std::size_t ModelParams::parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, tensor] : named()) n += tensor.numel();
  return n;
}

namespace {

// Additive causal mask: zero on and below the diagonal, a large negative
// constant strictly above, so masked attention probabilities underflow to
// exactly zero after softmax.
Tensor causal_mask(std::size_t t) {
  std::vector<double> values(t * t, 0.0);
  for (std::size_t i = 0; i < t; ++i) {
    for (std::size_t j = i + 1; j < t; ++j) values[i * t + j] = -1e30;
  }
  return Tensor::from_vector({t, t}, std::move(values));
}

}  // namespace

Tensor forward_logprobs(const ModelParams& params,
                        std::span<const TokenId> tokens) {
  const ModelConfig& cfg = params.config;
  const std::size_t t = tokens.size();
  if (t == 0) throw UserError("forward: empty token sequence");
  if (t > cfg.max_seq_len) {
    throw UserError("forward: sequence of length " + std::to_string(t) +
                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  for (TokenId id : tokens) {
    if (id < 0 || id >= static_cast<TokenId>(cfg.vocab_size)) {
      throw UserError("forward: token id " + std::to_string(id) +
                      " outside vocabulary");
    }
  }

  const std::size_t d = cfg.d_model;
  const std::size_t heads = cfg.n_heads;
  const std::size_t dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor x = add(embedding_lookup(params.token_embedding, tokens),
                 slice(params.position_embedding, 0, 0, t));
  const Tensor mask = causal_mask(t);

  for (const LayerWeights& layer : params.layers) {
    Tensor h = layer_norm(x, layer.ln1_gain, layer.ln1_bias);
    Tensor q = add(matmul(h, layer.attn.wq), layer.attn.bq);
    Tensor k = add(matmul(h, layer.attn.wk), layer.attn.bk);
    Tensor v = add(matmul(h, layer.attn.wv), layer.attn.bv);

    std::vector<Tensor> head_outputs;
    head_outputs.reserve(heads);
    for (std::size_t hi = 0; hi < heads; ++hi) {
      Tensor qh = slice(q, 1, hi * dh, dh);
      Tensor kh = slice(k, 1, hi * dh, dh);
      Tensor vh = slice(v, 1, hi * dh, dh);
      Tensor scores = add(scale(matmul(qh, transpose(kh)), att_scale), mask);
      Tensor probs = softmax(scores, 1);
      head_outputs.push_back(matmul(probs, vh));
    }
    Tensor attn_out =
        add(matmul(concat(head_outputs, 1), layer.attn.wo), layer.attn.bo);
    x = add(x, attn_out);

    Tensor h2 = layer_norm(x, layer.ln2_gain, layer.ln2_bias);
    Tensor ff = add(
        matmul(gelu(add(matmul(h2, layer.mlp.w1), layer.mlp.b1)), layer.mlp.w2),
        layer.mlp.b2);
    x = add(x, ff);
  }

  Tensor hidden = layer_norm(x, params.final_ln_gain, params.final_ln_bias);
  Tensor logits = matmul(hidden, transpose(params.token_embedding));
  return log_softmax(logits, 1);
}

Tensor sequence_logprob(const ModelParams& params,
                        std::span<const TokenId> framed,
                        std::size_t target_start) {
  if (target_start < 1 || target_start >= framed.size()) {
    throw UserError("sequence_logprob: target_start " +
                    std::to_string(target_start) +
                    " out of range for sequence of length " +
                    std::to_string(framed.size()));
  }
  Tensor logprobs = forward_logprobs(params, framed);
  std::vector<std::pair<std::size_t, std::size_t>> picks;
  picks.reserve(framed.size() - target_start);
  for (std::size_t t = target_start; t < framed.size(); ++t) {
    if (framed[t] == vocab::kPad) continue;
    picks.emplace_back(t - 1, static_cast<std::size_t>(framed[t]));
  }
  return select_sum(logprobs, picks);
}

std::size_t target_token_count(std::span<const TokenId> framed,
                               std::size_t target_start) {
  std::size_t count = 0;
  for (std::size_t t = target_start; t < framed.size(); ++t) {
    if (framed[t] != vocab::kPad) ++count;
  }
  return count;
}

// --- checkpoint io ---------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'C', 'P', 'O', 'F', 'C', 'K', 'P', 'T'};

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_layers"] = cfg.n_layers;
  j["d_model"] = cfg.d_model;
  j["n_heads"] = cfg.n_heads;
  j["d_ff"] = cfg.d_ff;
  j["max_seq_len"] = cfg.max_seq_len;
  j["vocab_size"] = cfg.vocab_size;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<std::size_t>();
  cfg.d_model = j.at("d_model").get<std::size_t>();
  cfg.n_heads = j.at("n_heads").get<std::size_t>();
  cfg.d_ff = j.at("d_ff").get<std::size_t>();
  cfg.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  cfg.vocab_size = j.at("vocab_size").get<std::size_t>();
  return cfg;
}

}  // namespace

void save_checkpoint(const ModelParams& params,
                     const std::filesystem::path& path) {
  const auto named = params.named();

  nlohmann::ordered_json manifest;
  manifest["format"] = "cpoforge-checkpoint";
  manifest["version"] = 1;
  manifest["dtype"] = "float64-le";
  manifest["config"] = config_to_json(params.config);
  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::size_t offset = 0;
  for (const auto& [name, tensor] : named) {
    nlohmann::ordered_json entry;
    entry["name"] = name;
    entry["shape"] = tensor.shape();
    entry["offset"] = offset;
    tensors.push_back(std::move(entry));
    offset += tensor.numel() * sizeof(double);
  }
  manifest["tensors"] = std::move(tensors);
  const std::string header = manifest.dump();

  // Write to a temp file and rename so readers never observe a torn file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw UserError("cannot write checkpoint: " + path.string());
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t header_len = static_cast<std::uint32_t>(header.size());
    out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    for (const auto& [name, tensor] : named) {
      const auto& data = tensor.data();
      out.write(reinterpret_cast<const char*>(data.data()),
                static_cast<std::streamsize>(data.size() * sizeof(double)));
    }
    if (!out) throw UserError("failed while writing checkpoint: " + path.string());
  }
  std::filesystem::rename(tmp, path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open checkpoint: " + path.string());

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw UserError("not a cpoforge checkpoint: " + path.string());
  }
  std::uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len));
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw UserError("truncated checkpoint header: " + path.string());

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(header);
  } catch (const nlohmann::json::parse_error& e) {
    throw UserError("corrupt checkpoint manifest: " + path.string() + ": " +
                    e.what());
  }
  if (manifest.value("format", "") != "cpoforge-checkpoint") {
    throw UserError("unrecognized checkpoint format in " + path.string());
  }
  const ModelConfig cfg = config_from_json(manifest.at("config"));
  cfg.validate();

  // Rebuild the parameter skeleton and validate the manifest against it.
  ModelParams params = ModelParams::init(cfg, 0);
  auto named = params.named();
  const auto& tensors = manifest.at("tensors");
  if (tensors.size() != named.size()) {
    throw UserError("checkpoint tensor count " + std::to_string(tensors.size()) +
                    " does not match model with " +
                    std::to_string(named.size()) + " tensors");
  }
  for (std::size_t i = 0; i < named.size(); ++i) {
    const auto& entry = tensors[i];
    const std::string name = entry.at("name").get<std::string>();
    const Shape shape = entry.at("shape").get<Shape>();
    if (name != named[i].first) {
      throw UserError("checkpoint tensor " + std::to_string(i) + " named `" +
                      name + "`, expected `" + named[i].first + "`");
    }
    if (shape != named[i].second.shape()) {
      throw UserError("checkpoint tensor `" + name + "` has shape " +
                      shape_to_string(shape) + ", expected " +
                      shape_to_string(named[i].second.shape()));
    }
  }
  for (auto& [name, tensor] : named) {
    Tensor t = tensor;
    auto& data = t.mutable_data();
    in.read(reinterpret_cast<char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  }
  if (!in) throw UserError("truncated checkpoint payload: " + path.string());
  return params;
}

}  // namespace cpoforge
