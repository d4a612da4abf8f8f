#include "biaslens/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "biaslens/util.hpp"

namespace biaslens {

namespace {

constexpr double kMassTolerance = 1e-6;

std::string provenance_text(const CellProvenance& p) {
  return "task=" + std::to_string(p.task_id) + " debias=" +
         (p.debias_id ? std::to_string(*p.debias_id) : std::string("none")) +
         " positioning=" + to_string(p.positioning) + " job=" + p.job;
}

template <typename E>
[[noreturn]] void rethrow_with_context(const E& error, const std::string& ctx) {
  throw E(ctx + ": " + error.what());
}

}  // namespace

double category_mass(const std::string& prefix,
                     std::span<const std::string> continuations,
                     Provider& provider) {
  if (continuations.empty()) {
    throw ValidationError("category has no continuations");
  }
  std::unordered_set<std::string> seen;
  std::vector<ScoreRequest> requests;
  requests.reserve(continuations.size());
  for (const std::string& continuation : continuations) {
    if (!seen.insert(continuation).second) {
      throw ValidationError("duplicate continuation '" + continuation +
                            "' in category set");
    }
    requests.push_back({prefix, continuation});
  }

  const std::vector<ScoreRecord> records = provider.score_batch(requests);

  double max_logprob = -std::numeric_limits<double>::infinity();
  for (const ScoreRecord& record : records) {
    max_logprob = std::max(max_logprob, record.logprob);
  }
  if (std::isinf(max_logprob)) return 0.0;  // every continuation impossible

  double sum = 0.0;
  for (const ScoreRecord& record : records) {
    sum += std::exp(record.logprob - max_logprob);
  }
  const double mass = std::exp(max_logprob + std::log(sum));
  if (mass > 1.0 + kMassTolerance) {
    throw Error("category mass " + format_full(mass) +
                " exceeds 1: continuations overlap or the provider is "
                "inconsistent (prefix \"" +
                prefix + "\")");
  }
  return mass;
}

GenderDistribution normalize(const CategoryMap<double>& raw_mass) {
  double total = 0.0;
  for (GenderCategory cat : kGenderCategories) {
    const double mass = at(raw_mass, cat);
    if (std::isnan(mass) || mass < 0.0 || mass > 1.0 + kMassTolerance) {
      throw ValidationError("raw mass " + format_full(mass) + " for '" +
                            to_string(cat) + "' is outside [0, 1]");
    }
    total += mass;
  }
  if (total <= 0.0) {
    throw DegenerateDistributionError(
        "all category masses are zero; cannot normalize");
  }
  if (total > 1.0 + kMassTolerance) {
    throw Error("category masses sum to " + format_full(total) +
                " > 1; the provider is inconsistent");
  }
  GenderDistribution out;
  out.raw_mass = raw_mass;
  for (GenderCategory cat : kGenderCategories) {
    at(out.normalized, cat) = at(raw_mass, cat) / total;
  }
  out.residual_mass = 1.0 - total;
  return out;
}

MeasurementCell measure_job(const RenderedCase& c, JobGroup group,
                            Provider& provider, const WarnFn& warn) {
  validate_case(c);
  CellProvenance provenance{c.provenance.task_id, c.provenance.debias_id,
                            c.provenance.positioning, c.provenance.job, group};
  const std::string ctx = "while measuring " + provenance_text(provenance);
  try {
    CategoryMap<double> raw{0.0, 0.0, 0.0};
    for (GenderCategory cat : kGenderCategories) {
      try {
        at(raw, cat) = category_mass(c.prefix, at(c.continuations, cat),
                                     provider);
      } catch (const MissingRecordError& e) {
        rethrow_with_context(
            e, ctx + " category=" + to_string(cat));
      }
    }
    GenderDistribution distribution = normalize(raw);
    if (distribution.residual_mass > 0.5 && warn) {
      warn("residual mass " + format_fixed(distribution.residual_mass, 4) +
           " exceeds 0.5 for " + provenance_text(provenance) +
           "; the verbalizations capture little of the probability density");
    }
    return MeasurementCell{std::move(provenance), distribution};
  } catch (const MissingRecordError&) {
    throw;  // already carries context
  } catch (const TokenBoundaryError& e) {
    rethrow_with_context(e, ctx);
  } catch (const NetworkError& e) {
    rethrow_with_context(e, ctx);
  } catch (const DegenerateDistributionError& e) {
    rethrow_with_context(e, ctx);
  } catch (const ValidationError& e) {
    rethrow_with_context(e, ctx);
  } catch (const Error& e) {
    rethrow_with_context(e, ctx);
  }
}

GenderDistribution mean_distribution(
    std::span<const GenderDistribution> distributions) {
  if (distributions.empty()) {
    throw ValidationError("cannot average zero distributions");
  }
  GenderDistribution out;
  out.residual_mass = 0.0;
  for (const GenderDistribution& d : distributions) {
    for (GenderCategory cat : kGenderCategories) {
      at(out.raw_mass, cat) += at(d.raw_mass, cat);
      at(out.normalized, cat) += at(d.normalized, cat);
    }
    out.residual_mass += d.residual_mass;
  }
  const double n = static_cast<double>(distributions.size());
  for (GenderCategory cat : kGenderCategories) {
    at(out.raw_mass, cat) /= n;
    at(out.normalized, cat) /= n;
  }
  out.residual_mass /= n;
  return out;
}

GenderDistribution aggregate_group(std::span<const MeasurementCell> cells,
                                   JobGroup group) {
  if (cells.empty()) throw ValidationError("no cells to aggregate");
  const CellProvenance& first = cells.front().provenance;
  std::vector<const MeasurementCell*> members;
  for (const MeasurementCell& cell : cells) {
    const CellProvenance& p = cell.provenance;
    if (p.task_id != first.task_id || p.debias_id != first.debias_id ||
        p.positioning != first.positioning) {
      throw ValidationError(
          "cells with mixed provenance passed to aggregate_group: " +
          provenance_text(first) + " vs " + provenance_text(p));
    }
    if (p.group == group) members.push_back(&cell);
  }
  if (members.empty()) {
    throw ValidationError("no cells in group '" + to_string(group) +
                          "' to aggregate");
  }
  // Summation in job-name order makes the mean independent of input order.
  std::sort(members.begin(), members.end(),
            [](const MeasurementCell* a, const MeasurementCell* b) {
              return a->provenance.job < b->provenance.job;
            });
  std::vector<GenderDistribution> distributions;
  distributions.reserve(members.size());
  for (const MeasurementCell* cell : members) {
    distributions.push_back(cell->distribution);
  }
  return mean_distribution(distributions);
}

}  // namespace biaslens
