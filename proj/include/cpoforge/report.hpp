#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cpoforge/corpus.hpp"
#include "cpoforge/model.hpp"

namespace cpoforge {

struct MetricReportRow {
  std::string system;  // e.g. "SFT", "CPO"
  std::string size;    // training-set size label, e.g. "14.7k"
  double bleu = 0.0;    // 0..100
  double chrfpp = 0.0;  // 0..100
  double ter = 0.0;     // edits per reference word; rendered x100
  std::optional<double> external_score;  // hook for an external scorer

  bool operator==(const MetricReportRow&) const = default;
};

struct EvalReport {
  std::vector<MetricReportRow> rows;
  std::string language_pair;
  std::size_t test_size = 0;
  std::vector<std::string> checkpoint_labels;
};

// Greedy-decodes every test source with `params` and scores the outputs
// against the chosen references.
MetricReportRow evaluate_checkpoint(const ModelParams& params,
                                    const Corpus& test,
                                    std::size_t max_new_tokens,
                                    const std::string& system_label,
                                    const std::string& size_label);

// CSV with columns size,system,bleu,chrfpp,ter,external. Scores carry two
// decimals, TER is rendered x100, absent external scores stay empty.
// Metadata rides in `#` comment lines, which the parser restores.
std::string render_report_csv(const EvalReport& report);
EvalReport parse_report_csv(const std::string& csv);

void save_report(const EvalReport& report, const std::filesystem::path& path);
EvalReport load_report(const std::filesystem::path& path);

// Aligned table for terminal display.
std::string render_report_pretty(const EvalReport& report);

struct ComparisonResult {
  // Interleaved rows (one per system per overlapping size label) plus a
  // wide per-size layout for line plots.
  std::string comparison_csv;
  std::string plot_csv;
  std::vector<std::string> sizes;  // overlapping labels, sft-report order
};

// Joins two reports on their size labels. Throws UserError when no size
// label overlaps.
ComparisonResult compare(const EvalReport& sft_report,
                         const EvalReport& cpo_report);

// External-score file: JSON Lines with fields system, size, score.
// Every key must match an existing (system, size) row; unmatched keys are
// an error naming the key, never a silent drop.
EvalReport attach_external_scores(const EvalReport& report,
                                  const std::filesystem::path& path);

}  // namespace cpoforge
