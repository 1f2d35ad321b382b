#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace cpoforge {

// Word tokenization shared by the word-level metrics: Unicode punctuation
// (a curated table covering ASCII, Latin-1, general punctuation, CJK and
// fullwidth forms) is detached into standalone tokens, then the text is
// split on whitespace. No lowercasing, no morphological segmentation;
// Korean is treated as space-delimited words.
std::vector<std::string> metric_tokenize(const std::string& text);

struct BleuStats {
  double score = 0.0;  // 0..100
  std::array<double, 4> precisions{};  // modified n-gram precisions
  double brevity_penalty = 1.0;
  std::array<std::int64_t, 4> matches{};
  std::array<std::int64_t, 4> totals{};
  std::int64_t hyp_length = 0;
  std::int64_t ref_length = 0;
};

// Corpus-level BLEU-4: clipped n-gram precision counts pooled over the
// corpus, geometric mean over orders 1..4, times the brevity penalty.
// Without smoothing any zero-match order zeroes the score; with
// `floor_smoothing` zero numerators are floored at 0.1 matches.
BleuStats bleu_stats(const std::vector<std::string>& hypotheses,
                     const std::vector<std::string>& references,
                     bool floor_smoothing = false);
double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references,
            bool floor_smoothing = false);

// chrF++: character n-grams of order 1..6 (whitespace removed) plus word
// n-grams of order 1..2, corpus-pooled. Precision and recall are
// macro-averaged over orders that occur on either side, then combined
// with F-beta, beta = 2. Returns 0..100.
double chrf_pp(const std::vector<std::string>& hypotheses,
               const std::vector<std::string>& references);

struct TerStats {
  std::int64_t edits = 0;
  std::int64_t reference_words = 0;
  double score = 0.0;  // edits per reference word; can exceed 1
};

// Translation edit rate: word-level Levenshtein edits (uniform cost) plus
// block shifts at cost 1, found by a greedy best-improvement search. A
// candidate shift must place a block (length <= 10) where the reference
// holds the same words, and is only taken when it lowers the remaining
// edit distance by at least 2 (so accepted shifts strictly reduce the
// total count).
TerStats ter_stats(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references);
double ter(const std::vector<std::string>& hypotheses,
           const std::vector<std::string>& references);

}  // namespace cpoforge
