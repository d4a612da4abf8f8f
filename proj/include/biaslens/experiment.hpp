#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "biaslens/domain.hpp"
#include "biaslens/engine.hpp"

namespace biaslens {

inline constexpr int kResultSchemaVersion = 1;

struct RunConfig {
  std::vector<int> task_ids;
  /// The no-prompt baseline is always measured; listed ids are added to it.
  std::vector<int> debias_ids;
  std::vector<Positioning> positionings;
  /// Empty means every catalog job.
  std::vector<std::string> job_names;
  std::filesystem::path output_path;
};

/// One row of the report tables: a group mean for a (task-or-range, debias,
/// positioning, group) slice. Task 1 is always reported on its own; the
/// pronoun tasks are averaged into a single range row with equal task weight.
struct GroupRow {
  std::string task_range;  // "1", "2-4", or a comma list
  std::optional<int> debias_id;
  Abstraction abstraction = Abstraction::None;
  Positioning positioning = Positioning::Inline;
  JobGroup group = JobGroup::FemaleDominated;
  GenderDistribution distribution;
};

struct RunMetadata {
  int schema_version = kResultSchemaVersion;
  std::string provider_tag;
  std::string timestamp;  // ISO-8601 UTC; excluded from golden comparisons
  std::string config_digest;
};

struct ResultSet {
  RunMetadata metadata;
  std::vector<MeasurementCell> cells;
  std::vector<GroupRow> group_rows;
};

/// Builds the scoring prefix for a (task, job, debias, positioning) tuple.
/// Inline splices the debias text into the task question; Dialogue puts it
/// before the scaffolded small-talk turns. The continuation sets are those
/// of the bare rendered case; a missing debias prompt composed Inline is
/// byte-identical to render_case.
RenderedCase compose_prefix(const TaskPrompt& task, const Job& job,
                            const DebiasPrompt& debias, Positioning positioning,
                            const DialogueScaffold& scaffold,
                            const PromptLayout& layout = {});

/// Fingerprint of the run configuration plus every catalog input that shapes
/// prompts or scoring; partial results from a different digest are never
/// merged.
std::string config_digest(const RunConfig& config, const Catalog& catalog);

/// Executes the full (task x debias x positioning x job) matrix. Cells
/// already present in the output file (same provenance and config digest)
/// are not re-scored; on a provider failure the completed cells are written
/// back so the run can resume.
ResultSet run_matrix(const RunConfig& config, const Catalog& catalog,
                     Provider& provider, const WarnFn& warn = {});

/// Every (prefix, continuation) pair the matrix would score, in matrix
/// order; the request list for recording a replay fixture.
std::vector<ScoreRequest> enumerate_matrix_requests(const RunConfig& config,
                                                    const Catalog& catalog);

std::string results_to_json(const ResultSet& results);
ResultSet results_from_json(const std::string& text);
void save_results(const ResultSet& results, const std::filesystem::path& path);
ResultSet load_results(const std::filesystem::path& path);

}  // namespace biaslens
