#include "cpoforge/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <unordered_map>

#include "cpoforge/errors.hpp"
#include "cpoforge/utf8.hpp"

namespace cpoforge {

namespace {

bool is_space_cp(char32_t cp) {
  switch (cp) {
    case U' ':
    case U'\t':
    case U'\n':
    case U'\r':
    case U'\v':
    case U'\f':
    case 0x00A0:  // no-break space
    case 0x2028:
    case 0x2029:
    case 0x3000:  // ideographic space
      return true;
    default:
      return (cp >= 0x2000 && cp <= 0x200B);
  }
}

bool is_punct_cp(char32_t cp) {
  if ((cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
      (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E)) {
    return true;
  }
  switch (cp) {
    case 0xA1:  // inverted exclamation
    case 0xAB:  // left guillemet
    case 0xB7:  // middle dot
    case 0xBB:  // right guillemet
    case 0xBF:  // inverted question mark
      return true;
    default:
      break;
  }
  if (cp >= 0x2010 && cp <= 0x2027) return true;  // dashes, quotes, ellipsis
  if (cp >= 0x2030 && cp <= 0x205E) return true;  // per-mille .. punctuation
  if (cp >= 0x3001 && cp <= 0x3003) return true;  // CJK comma, full stop
  if (cp >= 0x3008 && cp <= 0x3011) return true;  // CJK brackets
  if (cp >= 0x3014 && cp <= 0x301F) return true;
  if (cp >= 0xFF01 && cp <= 0xFF0F) return true;  // fullwidth punctuation
  if (cp >= 0xFF1A && cp <= 0xFF20) return true;
  if (cp >= 0xFF3B && cp <= 0xFF40) return true;
  if (cp >= 0xFF5B && cp <= 0xFF65) return true;
  return false;
}

std::vector<char32_t> codepoints(const std::string& text) {
  std::vector<char32_t> cps;
  cps.reserve(text.size());
  std::size_t pos = 0;
  while (pos < text.size()) {
    const Utf8Decoded d = utf8_decode_next(text, pos);
    cps.push_back(d.codepoint);
    pos += d.length;
  }
  return cps;
}

void check_corpus(const char* op, const std::vector<std::string>& hyps,
                  const std::vector<std::string>& refs) {
  if (hyps.size() != refs.size()) {
    throw UserError(std::string(op) + ": hypothesis count " +
                    std::to_string(hyps.size()) +
                    " does not match reference count " +
                    std::to_string(refs.size()));
  }
  if (hyps.empty()) throw UserError(std::string(op) + ": empty corpus");
}

using NgramCounts = std::map<std::vector<std::string>, std::int64_t>;

NgramCounts word_ngrams(const std::vector<std::string>& tokens,
                        std::size_t order) {
  NgramCounts counts;
  if (tokens.size() >= order) {
    for (std::size_t i = 0; i + order <= tokens.size(); ++i) {
      std::vector<std::string> gram(tokens.begin() + static_cast<std::ptrdiff_t>(i),
                                    tokens.begin() + static_cast<std::ptrdiff_t>(i + order));
      ++counts[std::move(gram)];
    }
  }
  return counts;
}

std::map<std::u32string, std::int64_t> char_ngrams(
    const std::u32string& chars, std::size_t order) {
  std::map<std::u32string, std::int64_t> counts;
  if (chars.size() >= order) {
    for (std::size_t i = 0; i + order <= chars.size(); ++i) {
      ++counts[chars.substr(i, order)];
    }
  }
  return counts;
}

template <typename Map>
std::int64_t clipped_matches(const Map& hyp_counts, const Map& ref_counts) {
  std::int64_t matched = 0;
  for (const auto& [gram, count] : hyp_counts) {
    auto it = ref_counts.find(gram);
    if (it != ref_counts.end()) matched += std::min(count, it->second);
  }
  return matched;
}

template <typename Map>
std::int64_t total_count(const Map& counts) {
  std::int64_t total = 0;
  for (const auto& [gram, count] : counts) total += count;
  return total;
}

}  // namespace

std::vector<std::string> metric_tokenize(const std::string& text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char32_t cp : codepoints(text)) {
    if (is_space_cp(cp)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
    } else if (is_punct_cp(cp)) {
      if (!current.empty()) {
        tokens.push_back(std::move(current));
        current.clear();
      }
      std::string punct;
      utf8_append(punct, cp);
      tokens.push_back(std::move(punct));
    } else {
      utf8_append(current, cp);
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

// --- BLEU ------------------------------------------------------------------

BleuStats bleu_stats(const std::vector<std::string>& hypotheses,
                     const std::vector<std::string>& references,
                     bool floor_smoothing) {
  check_corpus("bleu", hypotheses, references);
  BleuStats stats;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = metric_tokenize(hypotheses[s]);
    const auto ref = metric_tokenize(references[s]);
    stats.hyp_length += static_cast<std::int64_t>(hyp.size());
    stats.ref_length += static_cast<std::int64_t>(ref.size());
    for (std::size_t order = 1; order <= 4; ++order) {
      const NgramCounts hyp_counts = word_ngrams(hyp, order);
      const NgramCounts ref_counts = word_ngrams(ref, order);
      stats.matches[order - 1] += clipped_matches(hyp_counts, ref_counts);
      stats.totals[order - 1] += total_count(hyp_counts);
    }
  }

  double log_sum = 0.0;
  bool zero = false;
  for (std::size_t i = 0; i < 4; ++i) {
    if (stats.totals[i] == 0) {
      stats.precisions[i] = 0.0;
      zero = true;
      continue;
    }
    double numerator = static_cast<double>(stats.matches[i]);
    if (stats.matches[i] == 0) {
      if (floor_smoothing) {
        numerator = 0.1;
      } else {
        zero = true;
      }
    }
    stats.precisions[i] =
        numerator / static_cast<double>(stats.totals[i]);
    if (stats.precisions[i] > 0.0) {
      log_sum += std::log(stats.precisions[i]);
    }
  }

  if (stats.hyp_length == 0) {
    stats.brevity_penalty = 0.0;
  } else if (stats.hyp_length < stats.ref_length) {
    stats.brevity_penalty =
        std::exp(1.0 - static_cast<double>(stats.ref_length) /
                           static_cast<double>(stats.hyp_length));
  } else {
    stats.brevity_penalty = 1.0;
  }

  const bool scoreable = floor_smoothing
                             ? std::all_of(stats.totals.begin(), stats.totals.end(),
                                           [](std::int64_t t) { return t > 0; })
                             : !zero;
  if (scoreable && stats.hyp_length > 0) {
    stats.score = 100.0 * stats.brevity_penalty * std::exp(log_sum / 4.0);
  } else {
    stats.score = 0.0;
  }
  return stats;
}

double bleu(const std::vector<std::string>& hypotheses,
            const std::vector<std::string>& references, bool floor_smoothing) {
  return bleu_stats(hypotheses, references, floor_smoothing).score;
}

// --- chrF++ ----------------------------------------------------------------

namespace {

constexpr std::size_t kChrfCharOrder = 6;
constexpr std::size_t kChrfWordOrder = 2;
constexpr double kChrfBeta = 2.0;

struct OrderTotals {
  std::int64_t matched = 0;
  std::int64_t hyp_total = 0;
  std::int64_t ref_total = 0;
};

std::u32string strip_whitespace_chars(const std::string& text) {
  std::u32string out;
  for (char32_t cp : codepoints(text)) {
    if (!is_space_cp(cp)) out.push_back(cp);
  }
  return out;
}

}  // namespace

double chrf_pp(const std::vector<std::string>& hypotheses,
               const std::vector<std::string>& references) {
  check_corpus("chrf_pp", hypotheses, references);

  std::vector<OrderTotals> orders(kChrfCharOrder + kChrfWordOrder);
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const std::u32string hyp_chars = strip_whitespace_chars(hypotheses[s]);
    const std::u32string ref_chars = strip_whitespace_chars(references[s]);
    for (std::size_t order = 1; order <= kChrfCharOrder; ++order) {
      const auto hyp_counts = char_ngrams(hyp_chars, order);
      const auto ref_counts = char_ngrams(ref_chars, order);
      OrderTotals& t = orders[order - 1];
      t.matched += clipped_matches(hyp_counts, ref_counts);
      t.hyp_total += total_count(hyp_counts);
      t.ref_total += total_count(ref_counts);
    }
    const auto hyp_words = metric_tokenize(hypotheses[s]);
    const auto ref_words = metric_tokenize(references[s]);
    for (std::size_t order = 1; order <= kChrfWordOrder; ++order) {
      const auto hyp_counts = word_ngrams(hyp_words, order);
      const auto ref_counts = word_ngrams(ref_words, order);
      OrderTotals& t = orders[kChrfCharOrder + order - 1];
      t.matched += clipped_matches(hyp_counts, ref_counts);
      t.hyp_total += total_count(hyp_counts);
      t.ref_total += total_count(ref_counts);
    }
  }

  // Orders absent from both sides (corpus shorter than the n-gram) are
  // dropped from the macro-average so identical corpora score 100.
  double prec_sum = 0.0;
  double rec_sum = 0.0;
  std::size_t active = 0;
  for (const OrderTotals& t : orders) {
    if (t.hyp_total == 0 && t.ref_total == 0) continue;
    ++active;
    if (t.hyp_total > 0) {
      prec_sum += static_cast<double>(t.matched) /
                  static_cast<double>(t.hyp_total);
    }
    if (t.ref_total > 0) {
      rec_sum += static_cast<double>(t.matched) /
                 static_cast<double>(t.ref_total);
    }
  }
  if (active == 0) return 0.0;
  const double precision = prec_sum / static_cast<double>(active);
  const double recall = rec_sum / static_cast<double>(active);
  const double beta_sq = kChrfBeta * kChrfBeta;
  const double denom = beta_sq * precision + recall;
  if (denom == 0.0) return 0.0;
  return 100.0 * (1.0 + beta_sq) * precision * recall / denom;
}

// --- TER ---------------------------------------------------------------------

namespace {

constexpr std::size_t kMaxShiftLength = 10;

std::int64_t levenshtein(const std::vector<std::string>& a,
                         const std::vector<std::string>& b) {
  const std::size_t n = a.size(), m = b.size();
  std::vector<std::int64_t> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = static_cast<std::int64_t>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<std::int64_t>(i);
    for (std::size_t j = 1; j <= m; ++j) {
      const std::int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

// Edits for one segment: greedy best-improvement shift search on top of
// plain word edit distance.
std::int64_t segment_edits(std::vector<std::string> hyp,
                           const std::vector<std::string>& ref) {
  std::int64_t shifts = 0;
  std::int64_t current = levenshtein(hyp, ref);
  while (current > 0 && !hyp.empty()) {
    std::int64_t best_distance = current;
    std::vector<std::string> best_hyp;
    const std::size_t max_len = std::min(kMaxShiftLength, hyp.size());
    for (std::size_t len = 1; len <= max_len; ++len) {
      for (std::size_t i = 0; i + len <= hyp.size(); ++i) {
        std::vector<std::string> rest;
        rest.reserve(hyp.size() - len);
        rest.insert(rest.end(), hyp.begin(),
                    hyp.begin() + static_cast<std::ptrdiff_t>(i));
        rest.insert(rest.end(),
                    hyp.begin() + static_cast<std::ptrdiff_t>(i + len),
                    hyp.end());
        for (std::size_t j = 0; j + len <= ref.size() && j <= rest.size();
             ++j) {
          if (j == i) continue;
          bool matches_ref = true;
          for (std::size_t k = 0; k < len; ++k) {
            if (ref[j + k] != hyp[i + k]) {
              matches_ref = false;
              break;
            }
          }
          if (!matches_ref) continue;
          std::vector<std::string> candidate;
          candidate.reserve(hyp.size());
          candidate.insert(candidate.end(), rest.begin(),
                           rest.begin() + static_cast<std::ptrdiff_t>(j));
          candidate.insert(candidate.end(),
                           hyp.begin() + static_cast<std::ptrdiff_t>(i),
                           hyp.begin() + static_cast<std::ptrdiff_t>(i + len));
          candidate.insert(candidate.end(),
                           rest.begin() + static_cast<std::ptrdiff_t>(j),
                           rest.end());
          const std::int64_t d = levenshtein(candidate, ref);
          // A shift costs 1, so it must cut the distance by >= 2 to help.
          if (current - d >= 2 && d < best_distance) {
            best_distance = d;
            best_hyp = std::move(candidate);
          }
        }
      }
    }
    if (best_hyp.empty() && best_distance == current) break;
    hyp = std::move(best_hyp);
    current = best_distance;
    ++shifts;
  }
  return shifts + current;
}

}  // namespace

TerStats ter_stats(const std::vector<std::string>& hypotheses,
                   const std::vector<std::string>& references) {
  check_corpus("ter", hypotheses, references);
  TerStats stats;
  for (std::size_t s = 0; s < hypotheses.size(); ++s) {
    const auto hyp = metric_tokenize(hypotheses[s]);
    const auto ref = metric_tokenize(references[s]);
    stats.edits += segment_edits(hyp, ref);
    stats.reference_words += static_cast<std::int64_t>(ref.size());
  }
  if (stats.reference_words == 0) {
    throw UserError("ter: references contain no words");
  }
  stats.score = static_cast<double>(stats.edits) /
                static_cast<double>(stats.reference_words);
  return stats;
}

double ter(const std::vector<std::string>& hypotheses,
           const std::vector<std::string>& references) {
  return ter_stats(hypotheses, references).score;
}

}  // namespace cpoforge
