#include "cpoforge/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cpoforge/decode.hpp"
#include "cpoforge/errors.hpp"
#include "cpoforge/metrics.hpp"
#include "cpoforge/tokenizer.hpp"

namespace cpoforge {

namespace {

std::string two_decimals(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

std::string csv_quote(const std::string& field) {
  if (field.find_first_of(",\"\n") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += "\"";
  return out;
}

std::vector<std::string> csv_split(const std::string& line) {
  std::vector<std::string> fields;
  std::string current;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          current += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        current += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(current));
      current.clear();
    } else {
      current += c;
    }
  }
  fields.push_back(std::move(current));
  return fields;
}

double parse_score(const std::string& field, const std::string& where) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(field, &pos);
    if (pos != field.size()) throw std::invalid_argument(field);
    return v;
  } catch (const std::exception&) {
    throw UserError(where + ": expected numeric score, got `" + field + "`");
  }
}

}  // namespace

MetricReportRow evaluate_checkpoint(const ModelParams& params,
                                    const Corpus& test,
                                    std::size_t max_new_tokens,
                                    const std::string& system_label,
                                    const std::string& size_label) {
  if (test.pairs.empty()) throw UserError("evaluate: empty test corpus");

  std::vector<std::string> hypotheses;
  std::vector<std::string> references;
  hypotheses.reserve(test.pairs.size());
  references.reserve(test.pairs.size());
  for (const SegmentPair& pair : test.pairs) {
    TokenSeq generated;
    try {
      generated = greedy_generate(params, encode(pair.source), max_new_tokens);
    } catch (const UserError& e) {
      throw UserError("segment id " + std::to_string(pair.id) + ": " +
                      e.what());
    }
    hypotheses.push_back(trim_whitespace(decode(generated)));
    references.push_back(pair.chosen);
  }

  MetricReportRow row;
  row.system = system_label;
  row.size = size_label;
  row.bleu = bleu(hypotheses, references);
  row.chrfpp = chrf_pp(hypotheses, references);
  row.ter = ter(hypotheses, references);
  return row;
}

std::string render_report_csv(const EvalReport& report) {
  std::ostringstream out;
  if (!report.language_pair.empty()) {
    out << "# language_pair=" << report.language_pair << "\n";
  }
  if (report.test_size > 0) {
    out << "# test_size=" << report.test_size << "\n";
  }
  for (const std::string& label : report.checkpoint_labels) {
    out << "# checkpoint=" << label << "\n";
  }
  out << "size,system,bleu,chrfpp,ter,external\n";
  for (const MetricReportRow& row : report.rows) {
    out << csv_quote(row.size) << "," << csv_quote(row.system) << ","
        << two_decimals(row.bleu) << "," << two_decimals(row.chrfpp) << ","
        << two_decimals(row.ter * 100.0) << ",";
    if (row.external_score) out << two_decimals(*row.external_score);
    out << "\n";
  }
  return out.str();
}

EvalReport parse_report_csv(const std::string& csv) {
  EvalReport report;
  std::istringstream in(csv);
  std::string line;
  std::size_t line_no = 0;
  bool header_seen = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = "report csv line " + std::to_string(line_no);
    if (line[0] == '#') {
      const std::string body = trim_whitespace(line.substr(1));
      const std::size_t eq = body.find('=');
      if (eq != std::string::npos) {
        const std::string key = body.substr(0, eq);
        const std::string value = body.substr(eq + 1);
        if (key == "language_pair") report.language_pair = value;
        else if (key == "test_size") report.test_size = std::stoull(value);
        else if (key == "checkpoint") report.checkpoint_labels.push_back(value);
      }
      continue;
    }
    if (!header_seen) {
      if (line != "size,system,bleu,chrfpp,ter,external") {
        throw UserError(where + ": unexpected header `" + line + "`");
      }
      header_seen = true;
      continue;
    }
    const std::vector<std::string> fields = csv_split(line);
    if (fields.size() != 6) {
      throw UserError(where + ": expected 6 fields, got " +
                      std::to_string(fields.size()));
    }
    MetricReportRow row;
    row.size = fields[0];
    row.system = fields[1];
    row.bleu = parse_score(fields[2], where);
    row.chrfpp = parse_score(fields[3], where);
    row.ter = parse_score(fields[4], where) / 100.0;
    if (!fields[5].empty()) {
      row.external_score = parse_score(fields[5], where);
    }
    report.rows.push_back(std::move(row));
  }
  if (!header_seen) throw UserError("report csv: missing header row");
  return report;
}

void save_report(const EvalReport& report, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UserError("cannot write report: " + path.string());
  out << render_report_csv(report);
  if (!out) throw UserError("failed while writing report: " + path.string());
}

EvalReport load_report(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UserError("cannot open report: " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  try {
    return parse_report_csv(buffer.str());
  } catch (const UserError& e) {
    throw UserError(path.string() + ": " + e.what());
  }
}

std::string render_report_pretty(const EvalReport& report) {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"size", "system", "BLEU", "chrF++", "TER", "external"});
  for (const MetricReportRow& row : report.rows) {
    cells.push_back({row.size, row.system, two_decimals(row.bleu),
                     two_decimals(row.chrfpp), two_decimals(row.ter * 100.0),
                     row.external_score ? two_decimals(*row.external_score)
                                        : std::string("-")});
  }
  std::vector<std::size_t> widths(cells[0].size(), 0);
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      widths[c] = std::max(widths[c], row[c].size());
    }
  }
  std::ostringstream out;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      out << row[c] << std::string(widths[c] - row[c].size() + 2, ' ');
    }
    out << "\n";
  }
  return out.str();
}

ComparisonResult compare(const EvalReport& sft_report,
                         const EvalReport& cpo_report) {
  auto find_row = [](const EvalReport& report, const std::string& size)
      -> const MetricReportRow* {
    for (const MetricReportRow& row : report.rows) {
      if (row.size == size) return &row;
    }
    return nullptr;
  };

  ComparisonResult result;
  for (const MetricReportRow& row : sft_report.rows) {
    if (find_row(cpo_report, row.size) &&
        std::find(result.sizes.begin(), result.sizes.end(), row.size) ==
            result.sizes.end()) {
      result.sizes.push_back(row.size);
    }
  }
  if (result.sizes.empty()) {
    throw UserError("compare: no overlapping sizes between the two reports");
  }

  const bool any_external = [&] {
    for (const std::string& size : result.sizes) {
      if (find_row(sft_report, size)->external_score ||
          find_row(cpo_report, size)->external_score) {
        return true;
      }
    }
    return false;
  }();

  std::ostringstream comparison;
  comparison << "size,system,bleu,chrfpp,ter";
  if (any_external) comparison << ",external";
  comparison << "\n";
  auto emit = [&](const MetricReportRow& row) {
    comparison << csv_quote(row.size) << "," << csv_quote(row.system) << ","
               << two_decimals(row.bleu) << "," << two_decimals(row.chrfpp)
               << "," << two_decimals(row.ter * 100.0);
    if (any_external) {
      comparison << ",";
      if (row.external_score) comparison << two_decimals(*row.external_score);
    }
    comparison << "\n";
  };
  for (const std::string& size : result.sizes) {
    emit(*find_row(sft_report, size));
    emit(*find_row(cpo_report, size));
  }
  result.comparison_csv = comparison.str();

  std::ostringstream plot;
  plot << "size,sft_bleu,cpo_bleu,sft_chrfpp,cpo_chrfpp,sft_ter,cpo_ter";
  if (any_external) plot << ",sft_external,cpo_external";
  plot << "\n";
  for (const std::string& size : result.sizes) {
    const MetricReportRow* s = find_row(sft_report, size);
    const MetricReportRow* c = find_row(cpo_report, size);
    plot << csv_quote(size) << "," << two_decimals(s->bleu) << ","
         << two_decimals(c->bleu) << "," << two_decimals(s->chrfpp) << ","
         << two_decimals(c->chrfpp) << "," << two_decimals(s->ter * 100.0)
         << "," << two_decimals(c->ter * 100.0);
    if (any_external) {
      plot << ",";
      if (s->external_score) plot << two_decimals(*s->external_score);
      plot << ",";
      if (c->external_score) plot << two_decimals(*c->external_score);
    }
    plot << "\n";
  }
  result.plot_csv = plot.str();
  return result;
}

EvalReport attach_external_scores(const EvalReport& report,
                                  const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw UserError("cannot open external score file: " + path.string());

  EvalReport out = report;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> unmatched;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim_whitespace(line).empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json record;
    try {
      record = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw UserError(where + ": malformed JSON record: " + e.what());
    }
    if (!record.is_object() || !record.contains("system") ||
        !record.contains("size") || !record.contains("score") ||
        !record["system"].is_string() || !record["size"].is_string() ||
        !record["score"].is_number()) {
      throw UserError(where +
                      ": record must have string `system`, string `size`, "
                      "numeric `score`");
    }
    const std::string system = record["system"].get<std::string>();
    const std::string size = record["size"].get<std::string>();
    const double score = record["score"].get<double>();
    bool matched = false;
    for (MetricReportRow& row : out.rows) {
      if (row.system == system && row.size == size) {
        row.external_score = score;
        matched = true;
      }
    }
    if (!matched) unmatched.push_back("(" + system + ", " + size + ")");
  }
  if (!unmatched.empty()) {
    std::string keys;
    for (std::size_t i = 0; i < unmatched.size(); ++i) {
      if (i) keys += ", ";
      keys += unmatched[i];
    }
    throw UserError("external scores with no matching report row: " + keys);
  }
  return out;
}

}  // namespace cpoforge
