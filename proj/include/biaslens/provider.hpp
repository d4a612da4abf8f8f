#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "biaslens/errors.hpp"

namespace biaslens {

/// One scored (prefix, continuation) pair in natural-log space. A zero
/// probability is negative infinity, never an absent record.
struct ScoreRecord {
  std::string provider_tag;
  std::string prefix;
  std::string continuation;
  double logprob = 0.0;
  std::optional<std::vector<double>> token_logprobs;
};

/// logprob must be <= 0 and, when per-token values are present, equal their
/// sum within 1e-9 (negative infinities compare equal).
void validate(const ScoreRecord& record);

/// Serialized as one JSON object per line. JSON has no infinity literal, so
/// a null logprob (or null list element) encodes negative infinity.
std::string to_json_line(const ScoreRecord& record);
ScoreRecord score_record_from_json_line(const std::string& line);

struct ScoreRequest {
  std::string prefix;
  std::string continuation;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_backoff{250};
};

class Provider {
 public:
  virtual ~Provider() = default;

  /// Stable identity used for cache keys and result metadata: kind + model.
  virtual std::string tag() const = 0;

  /// Log-probability of the continuation's token sequence conditioned on the
  /// prefix. Tokenization is entirely the provider's concern.
  virtual ScoreRecord score_continuation(const std::string& prefix,
                                         const std::string& continuation) = 0;

  /// Results in request order; equal to mapping score_continuation over the
  /// requests. All-or-nothing: the first unrecoverable error aborts the batch.
  virtual std::vector<ScoreRecord> score_batch(
      const std::vector<ScoreRequest>& requests);

 protected:
  static void check_request(const std::string& prefix,
                            const std::string& continuation);
};

/// In-memory lookup table; the ground truth for unit tests and hand-built
/// fixtures.
class TabularProvider : public Provider {
 public:
  explicit TabularProvider(std::string tag = "tabular:local");

  void set(const std::string& prefix, const std::string& continuation,
           double logprob,
           std::optional<std::vector<double>> token_logprobs = std::nullopt);
  void add(const ScoreRecord& record);  // keeps the table's own tag

  std::string tag() const override { return tag_; }
  ScoreRecord score_continuation(const std::string& prefix,
                                 const std::string& continuation) override;
  std::size_t size() const { return table_.size(); }

 private:
  std::string tag_;
  std::unordered_map<std::string, ScoreRecord> table_;
};

/// Every continuation is one token drawn uniformly from a vocabulary of the
/// given size: logprob = ln(1/V) regardless of content.
class UniformProvider : public Provider {
 public:
  explicit UniformProvider(int vocabulary_size);

  std::string tag() const override;
  ScoreRecord score_continuation(const std::string& prefix,
                                 const std::string& continuation) override;

 private:
  int vocabulary_size_;
};

/// Fully enumerable synthetic language model over an explicit token
/// vocabulary. Conditional token probabilities are a deterministic,
/// seed-keyed function of (context, token), normalized over the vocabulary,
/// so exact brute-force enumeration is possible. Continuations are tokenized
/// by greedy longest match; an unspellable continuation has probability zero.
class SyntheticVocabProvider : public Provider {
 public:
  SyntheticVocabProvider(std::vector<std::string> vocabulary,
                         std::uint64_t seed, std::string name = "model");

  const std::vector<std::string>& vocabulary() const { return vocabulary_; }

  /// Linear-space P(token | context); positive for every vocabulary token.
  double token_probability(const std::string& context,
                           const std::string& token) const;

  /// Greedy longest-match tokenization; empty result means unspellable.
  std::vector<std::string> tokenize(const std::string& text) const;

  std::string tag() const override { return tag_; }
  ScoreRecord score_continuation(const std::string& prefix,
                                 const std::string& continuation) override;

 private:
  double token_weight(const std::string& context,
                      const std::string& token) const;

  std::vector<std::string> vocabulary_;
  std::uint64_t seed_;
  std::string tag_;
};

/// Persistent JSONL score cache keyed by (provider_tag, prefix,
/// continuation). Loads eagerly; appends on put; concurrent readers and
/// serialized writers.
class ScoreCache {
 public:
  explicit ScoreCache(std::filesystem::path path);

  std::optional<ScoreRecord> get(const std::string& provider_tag,
                                 const std::string& prefix,
                                 const std::string& continuation) const;
  void put(const ScoreRecord& record);
  std::size_t size() const;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, ScoreRecord> entries_;
  std::ofstream appender_;
};

/// Line-delimited JSON fixture of ScoreRecords.
std::vector<ScoreRecord> load_fixture(const std::filesystem::path& path);
void write_fixture(const std::vector<ScoreRecord>& records,
                   const std::filesystem::path& path);

/// Answers exactly the recorded keys, echoing the recorded provider tag so
/// replayed runs are bit-identical to the original ones.
class ReplayProvider : public Provider {
 public:
  explicit ReplayProvider(std::vector<ScoreRecord> records);
  static ReplayProvider from_file(const std::filesystem::path& path);

  std::string tag() const override { return tag_; }
  ScoreRecord score_continuation(const std::string& prefix,
                                 const std::string& continuation) override;
  std::size_t size() const { return table_.size(); }

 private:
  std::string tag_;
  std::unordered_map<std::string, ScoreRecord> table_;
};

/// Scores every request against a live provider and writes the fixture the
/// ReplayProvider will answer from.
void record_fixture(Provider& provider,
                    const std::vector<ScoreRequest>& requests,
                    const std::filesystem::path& output_path);

}  // namespace biaslens
