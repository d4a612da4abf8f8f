#include "biaslens/diagnostics.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace biaslens {

namespace {

using nlohmann::json;

constexpr double kTieMargin = 1e-9;

double continuation_score(const ScoreRecord& record, bool length_normalize) {
  if (!length_normalize) return record.logprob;
  // Token count comes from the provider's per-token logprobs; a provider
  // that reports none is treated as scoring one unit.
  const std::size_t tokens =
      record.token_logprobs.has_value() && !record.token_logprobs->empty()
          ? record.token_logprobs->size()
          : 1;
  return record.logprob / static_cast<double>(tokens);
}

}  // namespace

std::string to_string(PreferenceOrdering o) {
  switch (o) {
    case PreferenceOrdering::APreferred: return "A-preferred";
    case PreferenceOrdering::BPreferred: return "B-preferred";
    case PreferenceOrdering::Tie: return "tie";
  }
  throw Error("unreachable preference ordering");
}

std::vector<AssociationCase> load_association_cases(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open case file " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw IoError("unparseable case file " + path.string() + ": " + e.what());
  }
  if (!doc.is_array() || doc.empty()) {
    throw ValidationError("case file " + path.string() +
                          " must be a non-empty JSON list");
  }
  std::vector<AssociationCase> cases;
  for (const json& obj : doc) {
    AssociationCase c;
    try {
      c.name = obj.value("name", "case " + std::to_string(cases.size() + 1));
      c.context = obj.at("context").get<std::string>();
      for (const json& s : obj.at("option_a")) {
        c.option_a.push_back(s.get<std::string>());
      }
      for (const json& s : obj.at("option_b")) {
        c.option_b.push_back(s.get<std::string>());
      }
    } catch (const json::exception& e) {
      throw ValidationError(std::string("malformed association case: ") +
                            e.what());
    }
    if (c.option_a.empty() || c.option_b.empty()) {
      throw ValidationError("association case '" + c.name +
                            "' needs at least one paraphrase per option");
    }
    cases.push_back(std::move(c));
  }
  return cases;
}

PreferenceResult preference(const std::string& context, const std::string& a,
                            const std::string& b, Provider& provider,
                            bool length_normalize) {
  if (a == b) {
    throw ValidationError("preference needs two distinct continuations, got '" +
                          a + "' twice");
  }
  const ScoreRecord record_a = provider.score_continuation(context, a);
  const ScoreRecord record_b = provider.score_continuation(context, b);
  PreferenceResult result;
  result.length_normalized = length_normalize;
  result.a_score = continuation_score(record_a, length_normalize);
  result.b_score = continuation_score(record_b, length_normalize);
  result.margin = result.a_score - result.b_score;
  if (std::isnan(result.margin)) result.margin = 0.0;  // both impossible
  if (std::fabs(result.margin) < kTieMargin) {
    result.ordering = PreferenceOrdering::Tie;
  } else {
    result.ordering = result.margin > 0 ? PreferenceOrdering::APreferred
                                        : PreferenceOrdering::BPreferred;
  }
  return result;
}

FlipReport flip_rate(const AssociationCase& c, Provider& provider,
                     bool length_normalize) {
  if (c.option_a.empty() || c.option_b.empty()) {
    throw ValidationError("association case '" + c.name +
                          "' needs at least one paraphrase per option");
  }
  std::vector<std::pair<std::string, std::string>> pairs;
  if (c.option_a.size() == c.option_b.size()) {
    for (std::size_t i = 0; i < c.option_a.size(); ++i) {
      pairs.emplace_back(c.option_a[i], c.option_b[i]);
    }
  } else {
    for (const std::string& a : c.option_a) {
      for (const std::string& b : c.option_b) pairs.emplace_back(a, b);
    }
  }
  if (pairs.size() < 2) {
    throw ValidationError("association case '" + c.name +
                          "' needs at least two paraphrase pairs");
  }

  FlipReport report;
  for (const auto& [a, b] : pairs) {
    report.verdicts.push_back(
        PairVerdict{a, b, preference(c.context, a, b, provider,
                                     length_normalize)});
  }
  const PreferenceOrdering base = report.verdicts.front().result.ordering;
  std::size_t flips = 0;
  for (std::size_t i = 1; i < report.verdicts.size(); ++i) {
    if (report.verdicts[i].result.ordering != base) ++flips;
  }
  report.flip_rate =
      static_cast<double>(flips) / static_cast<double>(pairs.size() - 1);
  return report;
}

}  // namespace biaslens
