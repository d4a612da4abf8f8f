#include "biaslens/provider.hpp"

#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "biaslens/util.hpp"

namespace biaslens {

namespace {

using nlohmann::json;

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::string table_key(const std::string& prefix,
                      const std::string& continuation) {
  std::string key;
  key.reserve(prefix.size() + continuation.size() + 1);
  key += prefix;
  key += '\x1f';
  key += continuation;
  return key;
}

std::string cache_key(const std::string& tag, const std::string& prefix,
                      const std::string& continuation) {
  return tag + '\x1f' + table_key(prefix, continuation);
}

std::string describe_key(const std::string& prefix,
                         const std::string& continuation) {
  return "prefix=\"" + prefix + "\" continuation=\"" + continuation + "\"";
}

json logprob_to_json(double value) {
  if (std::isinf(value)) return nullptr;  // negative infinity
  return value;
}

double logprob_from_json(const json& value, const std::string& context) {
  if (value.is_null()) return kNegInf;
  if (!value.is_number()) {
    throw IoError(context + ": logprob is neither a number nor null");
  }
  return value.get<double>();
}

}  // namespace

void validate(const ScoreRecord& record) {
  if (record.logprob > 0.0) {
    throw ValidationError("logprob " + format_full(record.logprob) +
                          " is positive for " +
                          describe_key(record.prefix, record.continuation));
  }
  if (std::isnan(record.logprob)) {
    throw ValidationError("logprob is NaN for " +
                          describe_key(record.prefix, record.continuation));
  }
  if (record.token_logprobs.has_value()) {
    double sum = 0.0;
    for (double t : *record.token_logprobs) sum += t;
    const bool both_inf = std::isinf(sum) && std::isinf(record.logprob);
    if (!both_inf && std::fabs(sum - record.logprob) > 1e-9) {
      throw ValidationError(
          "token logprobs sum to " + format_full(sum) + " but logprob is " +
          format_full(record.logprob) + " for " +
          describe_key(record.prefix, record.continuation));
    }
  }
}

std::string to_json_line(const ScoreRecord& record) {
  json obj;
  obj["provider_tag"] = record.provider_tag;
  obj["prefix"] = record.prefix;
  obj["continuation"] = record.continuation;
  obj["logprob"] = logprob_to_json(record.logprob);
  if (record.token_logprobs.has_value()) {
    json arr = json::array();
    for (double t : *record.token_logprobs) arr.push_back(logprob_to_json(t));
    obj["token_logprobs"] = std::move(arr);
  }
  return obj.dump();
}

ScoreRecord score_record_from_json_line(const std::string& line) {
  json obj;
  try {
    obj = json::parse(line);
  } catch (const json::exception& e) {
    throw IoError(std::string("bad score record: ") + e.what());
  }
  if (!obj.is_object()) throw IoError("score record is not a JSON object");
  ScoreRecord record;
  try {
    record.provider_tag = obj.at("provider_tag").get<std::string>();
    record.prefix = obj.at("prefix").get<std::string>();
    record.continuation = obj.at("continuation").get<std::string>();
    record.logprob = logprob_from_json(obj.at("logprob"), "score record");
    if (obj.contains("token_logprobs") && !obj["token_logprobs"].is_null()) {
      std::vector<double> tokens;
      for (const json& t : obj["token_logprobs"]) {
        tokens.push_back(logprob_from_json(t, "score record token"));
      }
      record.token_logprobs = std::move(tokens);
    }
  } catch (const json::exception& e) {
    throw IoError(std::string("bad score record: ") + e.what());
  }
  validate(record);
  return record;
}

void Provider::check_request(const std::string& prefix,
                             const std::string& continuation) {
  if (prefix.empty()) throw ValidationError("score request has empty prefix");
  if (continuation.empty()) {
    throw ValidationError("score request has empty continuation");
  }
}

std::vector<ScoreRecord> Provider::score_batch(
    const std::vector<ScoreRequest>& requests) {
  if (requests.empty()) throw ValidationError("score batch is empty");
  std::vector<ScoreRecord> results;
  results.reserve(requests.size());
  for (const ScoreRequest& request : requests) {
    results.push_back(score_continuation(request.prefix, request.continuation));
  }
  return results;
}

TabularProvider::TabularProvider(std::string tag) : tag_(std::move(tag)) {}

void TabularProvider::set(const std::string& prefix,
                          const std::string& continuation, double logprob,
                          std::optional<std::vector<double>> token_logprobs) {
  ScoreRecord record{tag_, prefix, continuation, logprob,
                     std::move(token_logprobs)};
  validate(record);
  table_[table_key(prefix, continuation)] = std::move(record);
}

void TabularProvider::add(const ScoreRecord& record) {
  ScoreRecord copy = record;
  copy.provider_tag = tag_;
  validate(copy);
  table_[table_key(copy.prefix, copy.continuation)] = std::move(copy);
}

ScoreRecord TabularProvider::score_continuation(
    const std::string& prefix, const std::string& continuation) {
  check_request(prefix, continuation);
  auto it = table_.find(table_key(prefix, continuation));
  if (it == table_.end()) {
    throw MissingRecordError("no table entry for " +
                             describe_key(prefix, continuation));
  }
  return it->second;
}

UniformProvider::UniformProvider(int vocabulary_size)
    : vocabulary_size_(vocabulary_size) {
  if (vocabulary_size < 1) {
    throw ValidationError("uniform provider vocabulary size must be >= 1");
  }
}

std::string UniformProvider::tag() const {
  return "uniform:" + std::to_string(vocabulary_size_);
}

ScoreRecord UniformProvider::score_continuation(
    const std::string& prefix, const std::string& continuation) {
  check_request(prefix, continuation);
  const double logprob = -std::log(static_cast<double>(vocabulary_size_));
  return ScoreRecord{tag(), prefix, continuation, logprob,
                     std::vector<double>{logprob}};
}

SyntheticVocabProvider::SyntheticVocabProvider(
    std::vector<std::string> vocabulary, std::uint64_t seed, std::string name)
    : vocabulary_(std::move(vocabulary)),
      seed_(seed),
      tag_("synthetic:" + name + "-" + std::to_string(seed)) {
  if (vocabulary_.empty()) {
    throw ValidationError("synthetic vocabulary is empty");
  }
}

double SyntheticVocabProvider::token_weight(const std::string& context,
                                            const std::string& token) const {
  std::uint64_t h = fnv1a64(context);
  h = fnv1a64("\x1f", h);
  h = fnv1a64(token, h);
  h = fnv1a64(to_hex(seed_), h);
  // Weight in [0.25, 1.25); never zero, so every token is reachable.
  return 0.25 + static_cast<double>(h % 100000ull) / 100000.0;
}

double SyntheticVocabProvider::token_probability(
    const std::string& context, const std::string& token) const {
  double total = 0.0;
  for (const std::string& t : vocabulary_) total += token_weight(context, t);
  return token_weight(context, token) / total;
}

std::vector<std::string> SyntheticVocabProvider::tokenize(
    const std::string& text) const {
  std::vector<std::string> tokens;
  std::size_t pos = 0;
  while (pos < text.size()) {
    const std::string* best = nullptr;
    for (const std::string& token : vocabulary_) {
      if (token.empty() || token.size() > text.size() - pos) continue;
      if (text.compare(pos, token.size(), token) != 0) continue;
      if (best == nullptr || token.size() > best->size()) best = &token;
    }
    if (best == nullptr) return {};  // unspellable
    tokens.push_back(*best);
    pos += best->size();
  }
  return tokens;
}

ScoreRecord SyntheticVocabProvider::score_continuation(
    const std::string& prefix, const std::string& continuation) {
  check_request(prefix, continuation);
  const std::vector<std::string> tokens = tokenize(continuation);
  if (tokens.empty()) {
    return ScoreRecord{tag_, prefix, continuation, kNegInf, std::nullopt};
  }
  std::string context = prefix;
  std::vector<double> token_logprobs;
  double total = 0.0;
  for (const std::string& token : tokens) {
    const double lp = std::log(token_probability(context, token));
    token_logprobs.push_back(lp);
    total += lp;
    context += token;
  }
  ScoreRecord record{tag_, prefix, continuation, total,
                     std::move(token_logprobs)};
  validate(record);
  return record;
}

ScoreCache::ScoreCache(std::filesystem::path path) : path_(std::move(path)) {
  if (std::filesystem::exists(path_)) {
    std::ifstream in(path_);
    if (!in) throw IoError("cannot open cache file " + path_.string());
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      ScoreRecord record;
      try {
        record = score_record_from_json_line(line);
      } catch (const Error& e) {
        throw IoError("corrupt cache " + path_.string() + " at line " +
                      std::to_string(line_no) + ": " + e.what());
      }
      entries_[cache_key(record.provider_tag, record.prefix,
                         record.continuation)] = std::move(record);
    }
  } else if (path_.has_parent_path()) {
    std::filesystem::create_directories(path_.parent_path());
  }
  appender_.open(path_, std::ios::app);
  if (!appender_) {
    throw IoError("cannot open cache file " + path_.string() +
                  " for writing");
  }
}

std::optional<ScoreRecord> ScoreCache::get(
    const std::string& provider_tag, const std::string& prefix,
    const std::string& continuation) const {
  std::lock_guard<std::mutex> lock(mutex_);
  auto it = entries_.find(cache_key(provider_tag, prefix, continuation));
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void ScoreCache::put(const ScoreRecord& record) {
  validate(record);
  std::lock_guard<std::mutex> lock(mutex_);
  const std::string key =
      cache_key(record.provider_tag, record.prefix, record.continuation);
  if (entries_.emplace(key, record).second) {
    appender_ << to_json_line(record) << '\n';
    appender_.flush();
    if (!appender_) throw IoError("failed writing cache " + path_.string());
  }
}

std::size_t ScoreCache::size() const {
  std::lock_guard<std::mutex> lock(mutex_);
  return entries_.size();
}

std::vector<ScoreRecord> load_fixture(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open fixture " + path.string());
  std::vector<ScoreRecord> records;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      records.push_back(score_record_from_json_line(line));
    } catch (const Error& e) {
      throw IoError("corrupt fixture " + path.string() + " at line " +
                    std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

void write_fixture(const std::vector<ScoreRecord>& records,
                   const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write fixture " + path.string());
  for (const ScoreRecord& record : records) {
    out << to_json_line(record) << '\n';
  }
  out.flush();
  if (!out) throw IoError("failed writing fixture " + path.string());
}

ReplayProvider::ReplayProvider(std::vector<ScoreRecord> records) {
  if (records.empty()) throw ValidationError("replay fixture is empty");
  tag_ = records.front().provider_tag;
  for (ScoreRecord& record : records) {
    validate(record);
    if (record.provider_tag != tag_) {
      throw ValidationError("replay fixture mixes provider tags '" + tag_ +
                            "' and '" + record.provider_tag + "'");
    }
    table_[table_key(record.prefix, record.continuation)] = std::move(record);
  }
}

ReplayProvider ReplayProvider::from_file(const std::filesystem::path& path) {
  return ReplayProvider(load_fixture(path));
}

ScoreRecord ReplayProvider::score_continuation(
    const std::string& prefix, const std::string& continuation) {
  check_request(prefix, continuation);
  auto it = table_.find(table_key(prefix, continuation));
  if (it == table_.end()) {
    throw MissingRecordError("no recorded score for " +
                             describe_key(prefix, continuation));
  }
  return it->second;
}

void record_fixture(Provider& provider,
                    const std::vector<ScoreRequest>& requests,
                    const std::filesystem::path& output_path) {
  if (requests.empty()) throw ValidationError("no requests to record");
  write_fixture(provider.score_batch(requests), output_path);
}

}  // namespace biaslens
