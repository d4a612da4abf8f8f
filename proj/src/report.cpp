#include "biaslens/report.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "biaslens/builtin_data.hpp"
#include "biaslens/util.hpp"

namespace biaslens {

std::string to_string(ReferenceLabel label) {
  switch (label) {
    case ReferenceLabel::DavinciT3: return "davinci-t3";
    case ReferenceLabel::DavinciT4: return "davinci-t4";
    case ReferenceLabel::CurieT7: return "curie-t7";
    case ReferenceLabel::CurieT8: return "curie-t8";
  }
  throw Error("unreachable reference label");
}

ReferenceLabel reference_label_from_string(const std::string& s) {
  if (s == "davinci-t3") return ReferenceLabel::DavinciT3;
  if (s == "davinci-t4") return ReferenceLabel::DavinciT4;
  if (s == "curie-t7") return ReferenceLabel::CurieT7;
  if (s == "curie-t8") return ReferenceLabel::CurieT8;
  throw ValidationError(
      "unknown reference table '" + s +
      "' (valid: davinci-t3, davinci-t4, curie-t7, curie-t8)");
}

namespace {

std::optional<int> parse_debias_token(const std::string& token,
                                      std::size_t line_no) {
  if (token == "none") return std::nullopt;
  try {
    std::size_t consumed = 0;
    int id = std::stoi(token, &consumed);
    if (consumed != token.size()) throw std::invalid_argument(token);
    return id;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": bad debias id '" + token + "'");
  }
}

double parse_number(const std::string& token, std::size_t line_no) {
  try {
    std::size_t consumed = 0;
    double value = std::stod(token, &consumed);
    if (consumed != token.size()) throw std::invalid_argument(token);
    return value;
  } catch (const std::exception&) {
    throw ValidationError("line " + std::to_string(line_no) +
                          ": '" + token + "' is not a number");
  }
}

/// true when the task-1 table is the natural comparison target.
bool reference_is_task1(ReferenceLabel label) {
  return label == ReferenceLabel::DavinciT3 || label == ReferenceLabel::CurieT7;
}

}  // namespace

std::vector<ReferenceTable> parse_reference_tables_csv(
    const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw ValidationError("reference csv is empty");
  if (trim(lines[0]) != "table,debias_id,positioning,group,m,f,d") {
    throw ValidationError(
        "reference csv header must be 'table,debias_id,positioning,group,m,f,d'");
  }
  std::map<std::string, ReferenceTable> tables;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> fields = split(lines[i], ',');
    if (fields.size() != 7) {
      throw ValidationError("reference csv line " + std::to_string(line_no) +
                            ": expected 7 fields");
    }
    const std::string label_token = trim(fields[0]);
    ReferenceRow row;
    row.debias_id = parse_debias_token(trim(fields[1]), line_no);
    row.positioning = positioning_from_string(trim(fields[2]));
    row.group = job_group_from_string(trim(fields[3]));
    row.m = parse_number(trim(fields[4]), line_no);
    row.f = parse_number(trim(fields[5]), line_no);
    row.d = parse_number(trim(fields[6]), line_no);
    const double sum = row.m + row.f + row.d;
    if (sum < 99.7 - 1e-9 || sum > 100.3 + 1e-9) {
      throw ValidationError("reference csv line " + std::to_string(line_no) +
                            ": row sums to " + format_full(sum) +
                            ", expected 100 within 0.3");
    }
    auto [it, inserted] = tables.try_emplace(label_token);
    if (inserted) it->second.label = reference_label_from_string(label_token);
    it->second.rows.push_back(row);
  }
  std::vector<ReferenceTable> out;
  for (auto& [label, table] : tables) out.push_back(std::move(table));
  return out;
}

std::vector<ReferenceTable> builtin_reference_tables() {
  return parse_reference_tables_csv(builtin::kReferenceTablesCsv);
}

ReferenceTable builtin_reference_table(ReferenceLabel label) {
  for (ReferenceTable& table : builtin_reference_tables()) {
    if (table.label == label) return std::move(table);
  }
  throw Error("shipped reference data is missing table " + to_string(label));
}

std::vector<Job> load_jobs(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open jobs csv " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return parse_jobs_csv(text);
}

std::array<GroupRatioAverages, 2> reference_averages(
    std::span<const Job> jobs) {
  std::array<GroupRatioAverages, 2> sums{};
  std::array<std::size_t, 2> counts{0, 0};
  for (const Job& job : jobs) {
    const auto idx = static_cast<std::size_t>(job.group);
    sums[idx].male_avg += job.male_ratio;
    sums[idx].female_avg += job.female_ratio;
    counts[idx] += 1;
  }
  for (std::size_t idx = 0; idx < 2; ++idx) {
    if (counts[idx] == 0) {
      throw ValidationError("no jobs in group '" +
                            to_string(static_cast<JobGroup>(idx)) + "'");
    }
    sums[idx].male_avg /= static_cast<double>(counts[idx]);
    sums[idx].female_avg /= static_cast<double>(counts[idx]);
  }
  return sums;
}

ReportFormat report_format_from_string(const std::string& s) {
  if (s == "markdown" || s == "markdown-table") return ReportFormat::Markdown;
  if (s == "csv") return ReportFormat::Csv;
  if (s == "json") return ReportFormat::Json;
  throw ValidationError("unknown report format '" + s +
                        "' (valid: markdown, csv, json)");
}

namespace {

std::string debias_token(const std::optional<int>& id) {
  return id ? std::to_string(*id) : std::string("none");
}

std::string positioning_heading(Positioning p) {
  return p == Positioning::Inline ? "Without dialogue" : "With dialogue";
}

std::string group_heading(JobGroup g) {
  return g == JobGroup::FemaleDominated ? "Female dominated" : "Male dominated";
}

struct ColumnKey {
  Positioning positioning;
  JobGroup group;
};

std::string percent(double fraction, int precision) {
  return format_fixed(fraction * 100.0, precision) + "%";
}

/// Rows of one display table (a single task range), keyed by debias id in
/// catalog order: none first, then ascending ids.
struct TableRows {
  std::string task_range;
  std::vector<std::optional<int>> debias_order;
  std::map<std::string, const GroupRow*> by_key;  // debias|pos|group
};

std::string row_key(const std::optional<int>& debias, Positioning pos,
                    JobGroup group) {
  return debias_token(debias) + "|" + to_string(pos) + "|" + to_string(group);
}

Abstraction abstraction_of(const std::optional<int>& debias_id) {
  if (!debias_id) return Abstraction::None;
  if (*debias_id <= 2) return Abstraction::High;
  if (*debias_id <= 4) return Abstraction::Medium;
  return Abstraction::Low;
}

std::string abstraction_heading(Abstraction a) {
  switch (a) {
    case Abstraction::None: return "";
    case Abstraction::High: return "High";
    case Abstraction::Medium: return "Med.";
    case Abstraction::Low: return "Low";
  }
  return "";
}

std::string render_markdown_table(
    const std::string& title, const TableRows& table,
    const std::vector<ColumnKey>& columns, int precision) {
  std::string out;
  out += "## " + title + "\n\n";
  out += "Columns:";
  for (std::size_t i = 0; i < columns.size(); ++i) {
    out += (i == 0 ? " " : "; ") + positioning_heading(columns[i].positioning) +
           " / " + group_heading(columns[i].group) + " (M, F, D)";
  }
  out += "\n\n";

  out += "| Abs. | ID |";
  for (std::size_t i = 0; i < columns.size(); ++i) out += " M | F | D |";
  out += "\n|---|---|";
  for (std::size_t i = 0; i < columns.size(); ++i) out += "---|---|---|";
  out += "\n";

  auto value_cells = [&](auto lookup) {
    std::string cells;
    for (const ColumnKey& col : columns) {
      const std::optional<CategoryMap<double>> normalized = lookup(col);
      if (!normalized.has_value()) {
        cells += " - | - | - |";
        continue;
      }
      for (GenderCategory cat : kGenderCategories) {
        cells += " " + percent(at(*normalized, cat), precision) + " |";
      }
    }
    return cells;
  };

  auto emit_id_row = [&](const std::optional<int>& debias,
                         const std::string& abs_label) {
    out += "| " + abs_label + " | " + (debias ? std::to_string(*debias)
                                              : std::string("None")) + " |";
    out += value_cells(
        [&](const ColumnKey& col) -> std::optional<CategoryMap<double>> {
          auto it =
              table.by_key.find(row_key(debias, col.positioning, col.group));
          if (it == table.by_key.end()) return std::nullopt;
          return it->second->distribution.normalized;
        });
    out += "\n";
  };

  // Baseline row, then ids grouped by abstraction level with an Avg row each.
  bool has_baseline = false;
  std::map<Abstraction, std::vector<std::optional<int>>> levels;
  for (const std::optional<int>& debias : table.debias_order) {
    if (!debias) {
      has_baseline = true;
    } else {
      levels[abstraction_of(debias)].push_back(debias);
    }
  }
  if (has_baseline) emit_id_row(std::nullopt, "");

  for (Abstraction level :
       {Abstraction::High, Abstraction::Medium, Abstraction::Low}) {
    auto it = levels.find(level);
    if (it == levels.end()) continue;
    for (const std::optional<int>& debias : it->second) {
      emit_id_row(debias, abstraction_heading(level));
    }
    // Per-level average over this level's rows, from full-precision values.
    out += "| " + abstraction_heading(level) + " | Avg |";
    out += value_cells(
        [&](const ColumnKey& col) -> std::optional<CategoryMap<double>> {
          CategoryMap<double> mean{0.0, 0.0, 0.0};
          std::size_t count = 0;
          for (const std::optional<int>& debias : it->second) {
            auto row_it =
                table.by_key.find(row_key(debias, col.positioning, col.group));
            if (row_it == table.by_key.end()) continue;
            for (GenderCategory cat : kGenderCategories) {
              at(mean, cat) += at(row_it->second->distribution.normalized, cat);
            }
            ++count;
          }
          if (count == 0) return std::nullopt;
          for (GenderCategory cat : kGenderCategories) {
            at(mean, cat) /= static_cast<double>(count);
          }
          return mean;
        });
    out += "\n";
  }
  out += "\n";
  return out;
}

std::string emit_markdown(const ResultSet& results, const ReportSpec& spec);

std::string emit_csv(const ResultSet& results) {
  std::string out =
      "task_range,debias_id,abstraction,positioning,group,"
      "normalized_male,normalized_female,normalized_diverse,"
      "raw_male,raw_female,raw_diverse,residual_mass\n";
  for (const GroupRow& row : results.group_rows) {
    out += row.task_range + "," + debias_token(row.debias_id) + "," +
           to_string(row.abstraction) + "," + to_string(row.positioning) +
           "," + to_string(row.group);
    for (GenderCategory cat : kGenderCategories) {
      out += "," + format_full(at(row.distribution.normalized, cat));
    }
    for (GenderCategory cat : kGenderCategories) {
      out += "," + format_full(at(row.distribution.raw_mass, cat));
    }
    out += "," + format_full(row.distribution.residual_mass) + "\n";
  }
  return out;
}

}  // namespace

std::vector<GroupRow> parse_report_csv(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw ValidationError("report csv is empty");
  const std::string expected_header =
      "task_range,debias_id,abstraction,positioning,group,"
      "normalized_male,normalized_female,normalized_diverse,"
      "raw_male,raw_female,raw_diverse,residual_mass";
  if (trim(lines[0]) != expected_header) {
    throw ValidationError("unexpected report csv header");
  }
  std::vector<GroupRow> rows;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> fields = split(lines[i], ',');
    if (fields.size() != 12) {
      throw ValidationError("report csv line " + std::to_string(line_no) +
                            ": expected 12 fields");
    }
    GroupRow row;
    row.task_range = trim(fields[0]);
    row.debias_id = parse_debias_token(trim(fields[1]), line_no);
    row.abstraction = abstraction_from_string(trim(fields[2]));
    row.positioning = positioning_from_string(trim(fields[3]));
    row.group = job_group_from_string(trim(fields[4]));
    std::size_t f = 5;
    for (GenderCategory cat : kGenderCategories) {
      at(row.distribution.normalized, cat) =
          parse_number(trim(fields[f++]), line_no);
    }
    for (GenderCategory cat : kGenderCategories) {
      at(row.distribution.raw_mass, cat) =
          parse_number(trim(fields[f++]), line_no);
    }
    row.distribution.residual_mass = parse_number(trim(fields[f]), line_no);
    rows.push_back(std::move(row));
  }
  return rows;
}

std::vector<ComparisonRow> compare_to_reference(const ResultSet& results,
                                                const ReferenceTable& table) {
  const bool want_task1 = reference_is_task1(table.label);
  std::vector<ComparisonRow> out;
  for (const GroupRow& row : results.group_rows) {
    const bool is_task1 = row.task_range == "1";
    if (is_task1 != want_task1) continue;
    const ReferenceRow* match = nullptr;
    for (const ReferenceRow& ref : table.rows) {
      if (ref.debias_id == row.debias_id &&
          ref.positioning == row.positioning && ref.group == row.group) {
        match = &ref;
        break;
      }
    }
    if (match == nullptr) continue;
    ComparisonRow cmp;
    cmp.debias_id = row.debias_id;
    cmp.positioning = row.positioning;
    cmp.group = row.group;
    for (GenderCategory cat : kGenderCategories) {
      at(cmp.measured_pct, cat) =
          at(row.distribution.normalized, cat) * 100.0;
    }
    cmp.reference_pct = {match->m, match->f, match->d};
    for (GenderCategory cat : kGenderCategories) {
      at(cmp.delta, cat) =
          std::fabs(at(cmp.measured_pct, cat) - at(cmp.reference_pct, cat));
    }
    out.push_back(cmp);
  }
  if (out.empty()) {
    throw ValidationError("no rows of the results overlap reference table " +
                          to_string(table.label));
  }
  return out;
}

std::string render_comparison(const ReferenceTable& table,
                              std::span<const ComparisonRow> rows,
                              int precision) {
  std::string out;
  out += "## Comparison against " + to_string(table.label) + "\n\n";
  out +=
      "Reference values are historical measurements from deprecated "
      "checkpoints, shown for comparison only.\n\n";
  out += "| ID | Positioning | Group | measured M | measured F | measured D "
         "| reference M | reference F | reference D | dM | dF | dD |\n";
  out += "|---|---|---|---|---|---|---|---|---|---|---|---|\n";
  for (const ComparisonRow& row : rows) {
    out += "| " + (row.debias_id ? std::to_string(*row.debias_id)
                                 : std::string("None")) +
           " | " + to_string(row.positioning) + " | " + to_string(row.group) +
           " |";
    for (GenderCategory cat : kGenderCategories) {
      out += " " + format_fixed(at(row.measured_pct, cat), precision) + "% |";
    }
    for (GenderCategory cat : kGenderCategories) {
      out += " " + format_fixed(at(row.reference_pct, cat), precision) + "% |";
    }
    for (GenderCategory cat : kGenderCategories) {
      out += " " + format_fixed(at(row.delta, cat), precision) + " |";
    }
    out += "\n";
  }
  out += "\n";
  return out;
}

namespace {

std::string emit_markdown(const ResultSet& results, const ReportSpec& spec) {
  // Collect tables by task range, preserving row order within each.
  std::vector<TableRows> tables;
  for (const GroupRow& row : results.group_rows) {
    TableRows* table = nullptr;
    for (TableRows& t : tables) {
      if (t.task_range == row.task_range) {
        table = &t;
        break;
      }
    }
    if (table == nullptr) {
      tables.push_back(TableRows{row.task_range, {}, {}});
      table = &tables.back();
    }
    if (std::find(table->debias_order.begin(), table->debias_order.end(),
                  row.debias_id) == table->debias_order.end()) {
      table->debias_order.push_back(row.debias_id);
    }
    table->by_key[row_key(row.debias_id, row.positioning, row.group)] = &row;
  }

  std::string out = "# Gender association report\n\n";
  out += "Provider: " + results.metadata.provider_tag +
         " | config digest: " + results.metadata.config_digest + "\n\n";
  if (results.group_rows.empty()) {
    out += "No group rows in this result set.\n";
    return out;
  }

  for (const TableRows& table : tables) {
    // Columns present in this table, positioning-major.
    std::vector<ColumnKey> columns;
    for (Positioning pos : {Positioning::Inline, Positioning::Dialogue}) {
      for (JobGroup group :
           {JobGroup::FemaleDominated, JobGroup::MaleDominated}) {
        for (const auto& [key, row] : table.by_key) {
          if (row->positioning == pos && row->group == group) {
            columns.push_back(ColumnKey{pos, group});
            break;
          }
        }
      }
    }
    const bool multi = table.task_range.find('-') != std::string::npos ||
                       table.task_range.find(',') != std::string::npos;
    const std::string title =
        table.task_range == "1"
            ? "Task prompt 1 (explicit gender word)"
            : multi ? "Task prompts " + table.task_range +
                          " (pronouns), aggregated"
                    : "Task prompt " + table.task_range + " (pronouns)";
    out += render_markdown_table(title, table, columns, spec.precision);
  }

  if (spec.include_reference) {
    for (const TableRows& table : tables) {
      const ReferenceLabel label = table.task_range == "1"
                                       ? ReferenceLabel::DavinciT3
                                       : ReferenceLabel::DavinciT4;
      try {
        const ReferenceTable reference = builtin_reference_table(label);
        const std::vector<ComparisonRow> rows =
            compare_to_reference(results, reference);
        out += render_comparison(reference, rows, spec.precision);
      } catch (const ValidationError&) {
        // Nothing overlaps; skip the comparison section.
      }
    }
  }
  return out;
}

}  // namespace

std::string emit_report(const ResultSet& results, const ReportSpec& spec) {
  if (spec.precision < 0) {
    throw ValidationError("report precision must be >= 0");
  }
  switch (spec.format) {
    case ReportFormat::Markdown: return emit_markdown(results, spec);
    case ReportFormat::Csv: return emit_csv(results);
    case ReportFormat::Json: return results_to_json(results);
  }
  throw Error("unreachable report format");
}

}  // namespace biaslens
