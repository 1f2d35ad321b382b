#include "cpoforge/prefgen.hpp"

#include <fstream>

#include <json.hpp>

#include "cpoforge/decode.hpp"
#include "cpoforge/errors.hpp"
#include "cpoforge/tokenizer.hpp"

namespace cpoforge {

PreferenceDataset synthesize(const ModelParams& params, const Corpus& corpus,
                             std::size_t max_new_tokens,
                             const std::string& generator_checkpoint,
                             std::uint64_t seed) {
  PreferenceDataset dataset;
  dataset.generator_checkpoint = generator_checkpoint;
  dataset.seed = seed;
  dataset.triplets.reserve(corpus.pairs.size());
  for (const SegmentPair& pair : corpus.pairs) {
    TokenSeq raw;
    try {
      raw = greedy_generate(params, encode(pair.source), max_new_tokens);
    } catch (const UserError& e) {
      throw UserError("segment id " + std::to_string(pair.id) + ": " +
                      e.what());
    }
    PreferenceTriplet triplet;
    triplet.source = pair.source;
    triplet.rejected = trim_whitespace(decode(raw));
    triplet.chosen = pair.chosen;
    triplet.id = pair.id;
    triplet.degenerate = triplet.rejected == triplet.chosen;
    dataset.triplets.push_back(std::move(triplet));
  }
  return dataset;
}

PreferenceDataset drop_degenerate(const PreferenceDataset& dataset) {
  PreferenceDataset out;
  out.generator_checkpoint = dataset.generator_checkpoint;
  out.seed = dataset.seed;
  for (const PreferenceTriplet& t : dataset.triplets) {
    if (!t.degenerate) out.triplets.push_back(t);
  }
  return out;
}

void save_dataset(const PreferenceDataset& dataset,
                  const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write preference dataset: " + path.string());

  nlohmann::ordered_json meta;
  meta["generator_checkpoint"] = dataset.generator_checkpoint;
  meta["seed"] = dataset.seed;
  out << meta.dump() << "\n";

  for (const PreferenceTriplet& t : dataset.triplets) {
    nlohmann::ordered_json record;
    record["source"] = t.source;
    record["rejected"] = t.rejected;
    record["chosen"] = t.chosen;
    record["id"] = t.id;
    record["degenerate"] = t.degenerate;
    out << record.dump() << "\n";
  }
  if (!out) {
    throw UserError("failed while writing preference dataset: " + path.string());
  }
}

PreferenceDataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open preference dataset: " + path.string());

  PreferenceDataset dataset;
  std::string line;
  std::int64_t line_no = 0;
  bool meta_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_whitespace(line).empty()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": blank line in preference dataset");
    }
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed JSON record: " + e.what());
    }
    if (!record.is_object()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": record must be a JSON object");
    }
    if (!meta_seen && line_no == 1 && record.contains("generator_checkpoint")) {
      dataset.generator_checkpoint =
          record["generator_checkpoint"].get<std::string>();
      dataset.seed = record.value("seed", std::uint64_t{0});
      meta_seen = true;
      continue;
    }
    for (const char* field : {"source", "rejected", "chosen"}) {
      if (!record.contains(field) || !record[field].is_string()) {
        throw UserError(path.string() + ":" + std::to_string(line_no) +
                        ": record missing string field `" + field + "`");
      }
    }
    if (!record.contains("id") || !record["id"].is_number_integer()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": record missing integer field `id`");
    }
    if (!record.contains("degenerate") || !record["degenerate"].is_boolean()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": record missing boolean field `degenerate`");
    }
    PreferenceTriplet t;
    t.source = record["source"].get<std::string>();
    t.rejected = record["rejected"].get<std::string>();
    t.chosen = record["chosen"].get<std::string>();
    t.id = record["id"].get<std::int64_t>();
    t.degenerate = record["degenerate"].get<bool>();
    dataset.triplets.push_back(std::move(t));
  }
  if (dataset.triplets.empty()) {
    throw UserError("preference dataset empty: " + path.string());
  }
  return dataset;
}

}  // namespace cpoforge
