#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cpoforge/corpus.hpp"
#include "cpoforge/model.hpp"

namespace cpoforge {

// One preference training record: the source, the model's own greedy
// output as the rejected candidate, and the TM target as the chosen one.
struct PreferenceTriplet {
  std::string source;
  std::string rejected;
  std::string chosen;
  std::int64_t id = 0;
  bool degenerate = false;  // rejected == chosen byte-for-byte

  bool operator==(const PreferenceTriplet&) const = default;
};

struct PreferenceDataset {
  std::vector<PreferenceTriplet> triplets;
  std::string generator_checkpoint;  // label of the params that produced `rejected`
  std::uint64_t seed = 0;

  bool operator==(const PreferenceDataset&) const = default;
};

// Greedy-decodes every corpus segment with `params` and pairs the output
// (whitespace-trimmed) against the TM target. Keeps degenerate pairs,
// flagged; one triplet per segment, corpus order.
PreferenceDataset synthesize(const ModelParams& params, const Corpus& corpus,
                             std::size_t max_new_tokens,
                             const std::string& generator_checkpoint,
                             std::uint64_t seed = 0);

PreferenceDataset drop_degenerate(const PreferenceDataset& dataset);

// JSON Lines: one metadata record (generator_checkpoint, seed) followed by
// one record per triplet with fields source/rejected/chosen/id/degenerate.
void save_dataset(const PreferenceDataset& dataset,
                  const std::filesystem::path& path);
PreferenceDataset load_dataset(const std::filesystem::path& path);

}  // namespace cpoforge
