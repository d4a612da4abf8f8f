#include "biaslens/http_provider.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <mutex>
#include <random>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "biaslens/util.hpp"

namespace biaslens {

namespace {

using nlohmann::json;

struct ParsedEndpoint {
  std::string scheme_host_port;  // "http://host:1234"
  std::string base_path;         // "/v1" or ""
};

ParsedEndpoint parse_endpoint(const std::string& endpoint) {
  const std::size_t scheme_end = endpoint.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint '" + endpoint +
                      "' must include a scheme, e.g. http://host:port/v1");
  }
  const std::size_t path_start = endpoint.find('/', scheme_end + 3);
  ParsedEndpoint out;
  if (path_start == std::string::npos) {
    out.scheme_host_port = endpoint;
  } else {
    out.scheme_host_port = endpoint.substr(0, path_start);
    out.base_path = endpoint.substr(path_start);
  }
  while (!out.base_path.empty() && out.base_path.back() == '/') {
    out.base_path.pop_back();
  }
  return out;
}

bool retryable_status(int status) {
  return status == 408 || status == 429 || status >= 500;
}

std::chrono::milliseconds backoff_delay(const RetryPolicy& retry,
                                        int attempt) {
  static thread_local std::mt19937_64 rng{std::random_device{}()};
  std::uniform_real_distribution<double> jitter(0.5, 1.5);
  const double scale = std::pow(2.0, attempt - 1) * jitter(rng);
  auto delay = std::chrono::milliseconds(
      static_cast<long>(static_cast<double>(retry.base_backoff.count()) * scale));
  return std::min(delay, std::chrono::milliseconds(30'000));
}

}  // namespace

/// Idle keep-alive clients, one handed out per in-flight request.
struct HttpClientPool {
  std::string scheme_host_port;
  std::mutex mutex;
  std::vector<std::unique_ptr<httplib::Client>> idle;

  explicit HttpClientPool(std::string base) : scheme_host_port(std::move(base)) {}

  std::unique_ptr<httplib::Client> acquire() {
    {
      std::lock_guard<std::mutex> lock(mutex);
      if (!idle.empty()) {
        auto client = std::move(idle.back());
        idle.pop_back();
        return client;
      }
    }
    auto client = std::make_unique<httplib::Client>(scheme_host_port);
    client->set_connection_timeout(30);
    client->set_read_timeout(120);
    client->set_tcp_nodelay(true);
    client->set_keep_alive(true);
    return client;
  }

  void release(std::unique_ptr<httplib::Client> client) {
    std::lock_guard<std::mutex> lock(mutex);
    idle.push_back(std::move(client));
  }
};

std::vector<double> continuation_token_logprobs(
    const std::string& prefix, const std::string& continuation,
    const std::vector<std::string>& tokens,
    const std::vector<std::optional<double>>& token_logprobs,
    const std::vector<std::size_t>& text_offsets) {
  if (tokens.size() != token_logprobs.size() ||
      tokens.size() != text_offsets.size()) {
    throw ProviderError("echoed logprob arrays have mismatched lengths");
  }
  if (tokens.empty()) throw ProviderError("echoed response has no tokens");

  const std::size_t boundary = prefix.size();
  std::size_t first = tokens.size();
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (text_offsets[i] >= boundary) {
      first = i;
      break;
    }
  }
  if (first == tokens.size() || text_offsets[first] != boundary) {
    // The token covering the boundary is the one before `first`.
    const std::size_t covering = first == 0 ? 0 : first - 1;
    const std::size_t span_start = text_offsets[covering];
    const std::size_t span_end = span_start + tokens[covering].size();
    throw TokenBoundaryError(
        "continuation \"" + continuation +
        "\" does not start on a token boundary: token \"" + tokens[covering] +
        "\" spans [" + std::to_string(span_start) + ", " +
        std::to_string(span_end) + ") across prefix length " +
        std::to_string(boundary));
  }

  std::vector<double> result;
  result.reserve(tokens.size() - first);
  for (std::size_t i = first; i < tokens.size(); ++i) {
    if (!token_logprobs[i].has_value()) {
      throw ProviderError("echoed logprob missing for continuation token \"" +
                          tokens[i] + "\"");
    }
    result.push_back(*token_logprobs[i]);
  }
  return result;
}

HttpProvider::HttpProvider(HttpProviderConfig config)
    : config_(std::move(config)) {
  if (config_.endpoint.empty() || config_.model.empty()) {
    throw ConfigError("http provider requires both endpoint and model");
  }
  if (config_.max_in_flight < 1) {
    throw ConfigError("max_in_flight must be >= 1");
  }
  if (config_.retry.max_attempts < 1) {
    throw ConfigError("retry max_attempts must be >= 1");
  }
  ParsedEndpoint parsed = parse_endpoint(config_.endpoint);
  base_path_ = std::move(parsed.base_path);
  clients_ = std::make_unique<HttpClientPool>(std::move(parsed.scheme_host_port));
  if (config_.cache_path.has_value()) {
    cache_ = std::make_unique<ScoreCache>(*config_.cache_path);
  }
}

HttpProvider::~HttpProvider() = default;

std::string HttpProvider::tag() const { return "http:" + config_.model; }

HttpProvider::Stats HttpProvider::stats() const {
  return Stats{network_requests_.load(), cache_hits_.load()};
}

ScoreRecord HttpProvider::score_continuation(const std::string& prefix,
                                             const std::string& continuation) {
  check_request(prefix, continuation);
  if (cache_) {
    if (auto hit = cache_->get(tag(), prefix, continuation)) {
      cache_hits_.fetch_add(1);
      return *hit;
    }
  }
  ScoreRecord record = fetch(prefix, continuation);
  if (cache_) cache_->put(record);
  return record;
}

ScoreRecord HttpProvider::fetch(const std::string& prefix,
                                const std::string& continuation) {
  json body;
  body["model"] = config_.model;
  body["prompt"] = prefix + continuation;
  body["max_tokens"] = 0;
  body["echo"] = true;
  body["logprobs"] = 0;

  httplib::Headers headers;
  if (const char* token = std::getenv(config_.auth_env.c_str());
      token != nullptr && token[0] != '\0') {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::unique_ptr<httplib::Client> client;
  std::string last_error;
  for (int attempt = 1; attempt <= config_.retry.max_attempts; ++attempt) {
    if (attempt > 1) {
      std::this_thread::sleep_for(backoff_delay(config_.retry, attempt - 1));
    }
    if (!client) client = clients_->acquire();
    network_requests_.fetch_add(1);
    httplib::Result res = client->Post(base_path_ + "/completions", headers,
                                       body.dump(), "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      client.reset();  // the connection is suspect; reconnect on retry
      continue;
    }
    if (retryable_status(res->status)) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw NetworkError("completions request failed with HTTP " +
                         std::to_string(res->status) + ": " + res->body);
    }

    json payload;
    try {
      payload = json::parse(res->body);
    } catch (const json::exception& e) {
      throw ProviderError(std::string("unparseable completions response: ") +
                          e.what());
    }
    try {
      const json& logprobs = payload.at("choices").at(0).at("logprobs");
      std::vector<std::string> tokens;
      std::vector<std::optional<double>> token_logprobs;
      std::vector<std::size_t> offsets;
      for (const json& t : logprobs.at("tokens")) {
        tokens.push_back(t.get<std::string>());
      }
      for (const json& t : logprobs.at("token_logprobs")) {
        if (t.is_null()) {
          token_logprobs.push_back(std::nullopt);
        } else {
          token_logprobs.push_back(t.get<double>());
        }
      }
      for (const json& t : logprobs.at("text_offset")) {
        offsets.push_back(t.get<std::size_t>());
      }
      std::vector<double> continuation_logprobs = continuation_token_logprobs(
          prefix, continuation, tokens, token_logprobs, offsets);
      double total = 0.0;
      for (double lp : continuation_logprobs) total += lp;
      ScoreRecord record{tag(), prefix, continuation, total,
                         std::move(continuation_logprobs)};
      validate(record);
      clients_->release(std::move(client));
      return record;
    } catch (const json::exception& e) {
      throw ProviderError(
          std::string("completions response missing echoed logprobs: ") +
          e.what());
    }
  }
  throw NetworkError("completions request failed after " +
                     std::to_string(config_.retry.max_attempts) +
                     " attempts (" + last_error + ")");
}

std::vector<ScoreRecord> HttpProvider::score_batch(
    const std::vector<ScoreRequest>& requests) {
  if (requests.empty()) throw ValidationError("score batch is empty");

  const std::size_t worker_count = std::min<std::size_t>(
      static_cast<std::size_t>(config_.max_in_flight), requests.size());
  if (worker_count <= 1) return Provider::score_batch(requests);

  std::vector<ScoreRecord> results(requests.size());
  std::atomic<std::size_t> next{0};
  std::atomic<bool> abort{false};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  std::size_t first_error_index = requests.size();

  auto worker = [&]() {
    while (!abort.load()) {
      const std::size_t i = next.fetch_add(1);
      if (i >= requests.size()) return;
      try {
        results[i] =
            score_continuation(requests[i].prefix, requests[i].continuation);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
        abort.store(true);
        return;
      }
    }
  };

  std::vector<std::thread> workers;
  workers.reserve(worker_count);
  for (std::size_t i = 0; i < worker_count; ++i) workers.emplace_back(worker);
  for (std::thread& t : workers) t.join();

  if (first_error) std::rethrow_exception(first_error);
  return results;
}

}  // namespace biaslens
