#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biaslens/domain.hpp"
#include "biaslens/experiment.hpp"

namespace biaslens {

/// Published result tables shipped as comparison data. The measured
/// checkpoints are deprecated, so these are historical baselines, never
/// expected values.
enum class ReferenceLabel { DavinciT3, DavinciT4, CurieT7, CurieT8 };
std::string to_string(ReferenceLabel label);
ReferenceLabel reference_label_from_string(const std::string& s);

struct ReferenceRow {
  std::optional<int> debias_id;
  Positioning positioning = Positioning::Inline;
  JobGroup group = JobGroup::FemaleDominated;
  double m = 0, f = 0, d = 0;  // percentages
};

struct ReferenceTable {
  ReferenceLabel label = ReferenceLabel::DavinciT3;
  std::vector<ReferenceRow> rows;
};

std::vector<ReferenceTable> parse_reference_tables_csv(const std::string& text);
std::vector<ReferenceTable> builtin_reference_tables();
ReferenceTable builtin_reference_table(ReferenceLabel label);

/// Reads and validates a jobs CSV (schema: name,male_ratio,female_ratio,group).
std::vector<Job> load_jobs(const std::filesystem::path& path);

struct GroupRatioAverages {
  double male_avg = 0;
  double female_avg = 0;
};

/// Mean employment ratios per job group; both groups must be non-empty.
/// Indexed like JobGroup.
std::array<GroupRatioAverages, 2> reference_averages(std::span<const Job> jobs);

enum class ReportFormat { Markdown, Csv, Json };
ReportFormat report_format_from_string(const std::string& s);

struct ReportSpec {
  ReportFormat format = ReportFormat::Markdown;
  bool include_reference = false;
  int precision = 1;  // display decimals; exports keep full precision
};

/// Renders the group rows of a run: one table for task 1, one for the pronoun
/// task range, columns Without/With dialogue x Female/Male dominated x M/F/D,
/// rows per debias prompt with per-abstraction-level averages. CSV and JSON
/// formats carry full precision regardless of display precision.
std::string emit_report(const ResultSet& results, const ReportSpec& spec);

/// Parses the CSV produced by emit_report back into group rows (exact).
std::vector<GroupRow> parse_report_csv(const std::string& text);

struct ComparisonRow {
  std::optional<int> debias_id;
  Positioning positioning = Positioning::Inline;
  JobGroup group = JobGroup::FemaleDominated;
  CategoryMap<double> measured_pct{0, 0, 0};
  CategoryMap<double> reference_pct{0, 0, 0};
  CategoryMap<double> delta{0, 0, 0};  // absolute differences
};

/// Joins measured group rows with a reference table on (debias, positioning,
/// group). Errors if nothing overlaps.
std::vector<ComparisonRow> compare_to_reference(const ResultSet& results,
                                                const ReferenceTable& table);

std::string render_comparison(const ReferenceTable& table,
                              std::span<const ComparisonRow> rows,
                              int precision = 1);

}  // namespace biaslens
