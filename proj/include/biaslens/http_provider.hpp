#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "biaslens/provider.hpp"

namespace biaslens {

struct HttpProviderConfig {
  std::string endpoint;  // e.g. "http://localhost:8000/v1"
  std::string model;
  std::string auth_env = "OPENAI_API_KEY";  // token read from this variable
  int max_in_flight = 4;
  RetryPolicy retry;
  std::optional<std::string> cache_path;
};

struct HttpClientPool;

/// Scores continuations through an OpenAI-compatible completions endpoint:
/// POST {endpoint}/completions with max_tokens=0, echo=true and logprobs
/// requested, then sums exactly the echoed tokens whose character span lies
/// inside the continuation. The continuation must start on a token boundary.
/// Keep-alive connections are pooled and reused across requests.
class HttpProvider : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config);
  ~HttpProvider() override;

  std::string tag() const override;
  ScoreRecord score_continuation(const std::string& prefix,
                                 const std::string& continuation) override;
  std::vector<ScoreRecord> score_batch(
      const std::vector<ScoreRequest>& requests) override;

  struct Stats {
    std::uint64_t network_requests = 0;  // HTTP calls issued (incl. retries)
    std::uint64_t cache_hits = 0;
  };
  Stats stats() const;

 private:
  ScoreRecord fetch(const std::string& prefix, const std::string& continuation);

  HttpProviderConfig config_;
  std::string base_path_;
  std::unique_ptr<HttpClientPool> clients_;
  std::unique_ptr<ScoreCache> cache_;
  std::atomic<std::uint64_t> network_requests_{0};
  std::atomic<std::uint64_t> cache_hits_{0};
};

/// Splits an echoed completions response into the continuation's token
/// logprobs. Shared with tests; throws TokenBoundaryError when the
/// prefix/continuation split falls inside a token.
std::vector<double> continuation_token_logprobs(
    const std::string& prefix, const std::string& continuation,
    const std::vector<std::string>& tokens,
    const std::vector<std::optional<double>>& token_logprobs,
    const std::vector<std::size_t>& text_offsets);

}  // namespace biaslens
