#include "cpoforge/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include <json.hpp>

#include "cpoforge/errors.hpp"

namespace cpoforge {

namespace {

bool is_ascii_space(char c) {
  return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' ||
         c == '\f';
}

}  // namespace

std::string trim_whitespace(const std::string& text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && is_ascii_space(text[begin])) ++begin;
  while (end > begin && is_ascii_space(text[end - 1])) --end;
  return text.substr(begin, end - begin);
}

void SubsetSchedule::validate(std::size_t corpus_size) const {
  if (sizes.empty()) throw UserError("subset schedule is empty");
  std::size_t prev = 0;
  for (std::size_t s : sizes) {
    if (s == 0) throw UserError("subset schedule contains size 0");
    if (s <= prev) {
      throw UserError("subset schedule must be strictly increasing (" +
                      std::to_string(s) + " after " + std::to_string(prev) +
                      ")");
    }
    prev = s;
  }
  if (sizes.back() > corpus_size) {
    throw UserError("subset schedule max " + std::to_string(sizes.back()) +
                    " exceeds corpus size " + std::to_string(corpus_size));
  }
}

Corpus load_tm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw UserError("cannot open TM file: " + path.string());
  }

  Corpus corpus;
  corpus.name = path.stem().string();

  std::string line;
  std::int64_t line_no = 0;  // 1-based in messages
  std::int64_t next_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_whitespace(line).empty()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": blank line in TM file");
    }
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": malformed JSON record: " + e.what());
    }
    if (!record.is_object() || !record.contains("source") ||
        !record.contains("target") || !record["source"].is_string() ||
        !record["target"].is_string()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": record must have string fields `source` and `target`");
    }
    SegmentPair pair;
    pair.source = trim_whitespace(record["source"].get<std::string>());
    pair.chosen = trim_whitespace(record["target"].get<std::string>());
    pair.id = next_id;
    if (pair.source.empty()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": segment id " + std::to_string(pair.id) +
                      ": field `source` empty after trimming");
    }
    if (pair.chosen.empty()) {
      throw UserError(path.string() + ":" + std::to_string(line_no) +
                      ": segment id " + std::to_string(pair.id) +
                      ": field `target` empty after trimming");
    }
    corpus.pairs.push_back(std::move(pair));
    ++next_id;
  }

  if (corpus.pairs.empty()) {
    throw UserError("corpus empty: " + path.string());
  }
  return corpus;
}

void save_tm(const Corpus& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw UserError("cannot write TM file: " + path.string());
  }
  for (const SegmentPair& pair : corpus.pairs) {
    nlohmann::ordered_json record;
    record["source"] = pair.source;
    record["target"] = pair.chosen;
    out << record.dump() << "\n";
  }
  if (!out) {
    throw UserError("failed while writing TM file: " + path.string());
  }
}

Corpus subset(const Corpus& corpus, std::size_t n) {
  if (n == 0) throw UserError("subset size must be positive");
  if (n > corpus.pairs.size()) {
    throw UserError("subset size " + std::to_string(n) +
                    " exceeds corpus size " +
                    std::to_string(corpus.pairs.size()));
  }
  Corpus result;
  result.name = corpus.name;
  result.language_pair = corpus.language_pair;
  result.pairs.assign(corpus.pairs.begin(),
                      corpus.pairs.begin() + static_cast<std::ptrdiff_t>(n));
  return result;
}

SplitResult split(const Corpus& corpus, double dev_frac, double test_frac,
                  std::uint64_t seed) {
  if (dev_frac < 0.0 || test_frac < 0.0 || dev_frac + test_frac >= 1.0) {
    throw UserError("split fractions out of range: dev + test must be in [0, 1)");
  }
  const std::size_t n = corpus.pairs.size();
  const auto dev_n = static_cast<std::size_t>(std::llround(dev_frac * static_cast<double>(n)));
  const auto test_n = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  auto collect = [&](std::size_t begin, std::size_t count) {
    std::vector<std::size_t> picked(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                    order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    std::sort(picked.begin(), picked.end());
    Corpus part;
    part.name = corpus.name;
    part.language_pair = corpus.language_pair;
    part.pairs.reserve(count);
    for (std::size_t idx : picked) part.pairs.push_back(corpus.pairs[idx]);
    return part;
  };

  SplitResult result;
  result.dev = collect(0, dev_n);
  result.test = collect(dev_n, test_n);
  result.train = collect(dev_n + test_n, n - dev_n - test_n);
  return result;
}

}  // namespace cpoforge
