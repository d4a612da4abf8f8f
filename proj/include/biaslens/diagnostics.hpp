#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "biaslens/provider.hpp"

namespace biaslens {

/// A stereotype/anti-stereotype pairing with paraphrases of each option.
/// Equal-length lists are compared index-aligned; unequal lengths fall back
/// to comparing all pairs.
struct AssociationCase {
  std::string name;
  std::string context;
  std::vector<std::string> option_a;  // stereotype paraphrases
  std::vector<std::string> option_b;  // anti-stereotype paraphrases
};

/// JSON list of AssociationCase objects.
std::vector<AssociationCase> load_association_cases(
    const std::filesystem::path& path);

enum class PreferenceOrdering { APreferred, BPreferred, Tie };
std::string to_string(PreferenceOrdering o);

struct PreferenceResult {
  PreferenceOrdering ordering = PreferenceOrdering::Tie;
  double margin = 0.0;   // a_score - b_score
  double a_score = 0.0;  // per-token mean logprob unless unnormalized
  double b_score = 0.0;
  bool length_normalized = true;
};

/// Which continuation the model prefers after the context. Scores are
/// per-token mean log-probabilities by default (comparing continuations of
/// unequal length in raw logprob conflates length with preference); a tie is
/// a margin below 1e-9 in magnitude.
PreferenceResult preference(const std::string& context, const std::string& a,
                            const std::string& b, Provider& provider,
                            bool length_normalize = true);

struct PairVerdict {
  std::string a;
  std::string b;
  PreferenceResult result;
};

struct FlipReport {
  double flip_rate = 0.0;  // fraction of pairs disagreeing with the first
  std::vector<PairVerdict> verdicts;
};

/// Scores every paraphrase pair of a case and reports how often the ordering
/// flips relative to the first pair. Needs at least two pairs.
FlipReport flip_rate(const AssociationCase& c, Provider& provider,
                     bool length_normalize = true);

}  // namespace biaslens
