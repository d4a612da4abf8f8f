#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "biaslens/domain.hpp"
#include "biaslens/provider.hpp"

namespace biaslens {

/// Raw per-category probability mass, its normalization to a distribution
/// over the three categories, and the probability left uncaptured by any
/// verbalization.
struct GenderDistribution {
  CategoryMap<double> raw_mass{0.0, 0.0, 0.0};
  CategoryMap<double> normalized{0.0, 0.0, 0.0};
  double residual_mass = 1.0;
};

struct CellProvenance {
  int task_id = 0;
  std::optional<int> debias_id;
  Positioning positioning = Positioning::Inline;
  std::string job;
  JobGroup group = JobGroup::FemaleDominated;

  friend bool operator==(const CellProvenance&, const CellProvenance&) = default;
};

/// One measured (task, debias, positioning, job) point.
struct MeasurementCell {
  CellProvenance provenance;
  GenderDistribution distribution;
};

using WarnFn = std::function<void(const std::string&)>;

/// Total probability the provider assigns to a set of continuations after
/// the prefix: sum of exp(logprob) computed via log-sum-exp. Scores are
/// fetched through score_batch, which equals per-item scoring by contract.
/// A mass above 1 + 1e-6 signals overlapping continuations or a broken
/// provider and raises an error.
double category_mass(const std::string& prefix,
                     std::span<const std::string> continuations,
                     Provider& provider);

/// Divides each raw mass by their sum. All-zero masses are an error; no
/// fallback distribution is fabricated.
GenderDistribution normalize(const CategoryMap<double>& raw_mass);

/// category_mass per category on the case's prefix, then normalize. Warns
/// through `warn` when more than half the probability mass escapes the
/// verbalizations (residual_mass > 0.5).
MeasurementCell measure_job(const RenderedCase& c, JobGroup group,
                            Provider& provider, const WarnFn& warn = {});

/// Arithmetic mean of the normalized distributions of the given group's
/// cells (raw masses and residuals are averaged alongside). All cells passed
/// must share task id, debias id and positioning.
GenderDistribution aggregate_group(std::span<const MeasurementCell> cells,
                                   JobGroup group);

/// Plain per-component mean; used for cross-task aggregate rows.
GenderDistribution mean_distribution(
    std::span<const GenderDistribution> distributions);

}  // namespace biaslens
