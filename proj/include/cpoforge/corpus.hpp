#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace cpoforge {

// One translation-memory entry: the source text and the human-approved
// target that becomes the "chosen" side of a preference pair.
struct SegmentPair {
  std::string source;
  std::string chosen;
  std::int64_t id = 0;  // stable index within the file, 0-based line order
};

struct Corpus {
  std::vector<SegmentPair> pairs;  // exactly file order, never re-sorted
  std::string name;
  std::string language_pair;

  std::size_t size() const { return pairs.size(); }
};

// Ladder of nested subset sizes, e.g. {1000, 2000, 5000}.
struct SubsetSchedule {
  std::vector<std::size_t> sizes;

  // Throws UserError unless sizes are strictly increasing, positive, and
  // bounded by corpus_size.
  void validate(std::size_t corpus_size) const;
};

// Loads a JSON Lines TM file with string fields `source` and `target`.
// Unknown fields are ignored. Stored texts are whitespace-trimmed;
// segments empty after trimming are rejected, not dropped.
Corpus load_tm(const std::filesystem::path& path);

// Writes the corpus back as JSON Lines; load_tm(save_tm(c)) preserves
// ids, sources, and chosen texts.
void save_tm(const Corpus& corpus, const std::filesystem::path& path);

// First n pairs in original order. subset(c, a) is a prefix of
// subset(c, b) whenever a < b.
Corpus subset(const Corpus& corpus, std::size_t n);

struct SplitResult {
  Corpus train;
  Corpus dev;
  Corpus test;
};

// Deterministic disjoint partition. Dev and test get round(frac * N)
// pairs each, chosen by a seeded shuffle; the remainder trains. Members
// of each part keep ascending id order.
SplitResult split(const Corpus& corpus, double dev_frac, double test_frac,
                  std::uint64_t seed);

std::string trim_whitespace(const std::string& text);

}  // namespace cpoforge
