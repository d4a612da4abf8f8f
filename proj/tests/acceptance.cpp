// Acceptance suite: exercises each acceptance criterion end to end and
// prints one PASS/FAIL line per criterion. Exit status is the number of
// failed criteria.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "biaslens/diagnostics.hpp"
#include "biaslens/domain.hpp"
#include "biaslens/engine.hpp"
#include "biaslens/experiment.hpp"
#include "biaslens/http_provider.hpp"
#include "biaslens/report.hpp"
#include "biaslens/util.hpp"
#include "support/enumeration_oracle.hpp"
#include "support/fake_openai_server.hpp"
#include "support/run_cli.hpp"
#include "support/temp_dir.hpp"

using namespace biaslens;
using biaslens::testing::enumerate_category_mass;
using biaslens::testing::FakeOpenAiServer;
using biaslens::testing::TempDir;

namespace {

struct Failure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void require(bool condition, const std::string& message) {
  if (!condition) throw Failure(message);
}

void require_close(double actual, double expected, double tolerance,
                   const std::string& what) {
  if (std::fabs(actual - expected) > tolerance) {
    throw Failure(what + ": got " + format_full(actual) + ", expected " +
                  format_full(expected) + " within " + format_full(tolerance));
  }
}

void require_runtime(double seconds, double budget, const std::string& what) {
  if (seconds > budget) {
    throw Failure(what + " took " + format_fixed(seconds, 2) +
                  "s, budget is " + format_fixed(budget, 1) + "s");
  }
}

std::string strip_timestamp(const std::string& json_text) {
  nlohmann::json doc = nlohmann::json::parse(json_text);
  doc["metadata"].erase("timestamp");
  return doc.dump();
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Failure("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

RunConfig demo_run_config() {
  RunConfig config;
  config.task_ids = {1, 2};
  config.debias_ids = {1, 4};
  config.positionings = {Positioning::Inline, Positioning::Dialogue};
  config.job_names = {"nurse", "plumber"};
  return config;
}

// --- Criterion 1 -----------------------------------------------------------

void normalization_suite() {
  const auto start = std::chrono::steady_clock::now();
  std::mt19937 rng(12345);
  std::uniform_real_distribution<double> logp(-14.0, std::log(0.33));
  std::uniform_real_distribution<double> lambda(1e-6, 1.0);

  RenderedCase c;
  c.prefix = "P";
  at(c.continuations, GenderCategory::Male) = {" He"};
  at(c.continuations, GenderCategory::Female) = {" She"};
  at(c.continuations, GenderCategory::Diverse) = {" They"};
  c.provenance = {2, std::nullopt, Positioning::Inline, "job"};

  for (int round = 0; round < 1000; ++round) {
    const double lm = logp(rng), lf = logp(rng), ld = logp(rng);
    TabularProvider provider;
    provider.set("P", " He", lm);
    provider.set("P", " She", lf);
    provider.set("P", " They", ld);
    const MeasurementCell cell =
        measure_job(c, JobGroup::FemaleDominated, provider);
    double total = 0.0;
    for (GenderCategory cat : kGenderCategories) {
      total += at(cell.distribution.normalized, cat);
    }
    require(std::fabs(total - 1.0) <= 1e-9,
            "normalized sum drifted to " + format_full(total));

    // Scaling every raw mass by the same factor leaves normalization untouched.
    const double shift = std::log(lambda(rng));
    TabularProvider scaled;
    scaled.set("P", " He", lm + shift);
    scaled.set("P", " She", lf + shift);
    scaled.set("P", " They", ld + shift);
    const MeasurementCell scaled_cell =
        measure_job(c, JobGroup::FemaleDominated, scaled);
    for (GenderCategory cat : kGenderCategories) {
      require(std::fabs(at(scaled_cell.distribution.normalized, cat) -
                        at(cell.distribution.normalized, cat)) <= 1e-12,
              "scale invariance violated at category " + to_string(cat));
    }
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  require_runtime(seconds, 5.0, "normalization suite");
}

// --- Criterion 2 -----------------------------------------------------------

void oracle_equivalence() {
  const auto start = std::chrono::steady_clock::now();
  std::vector<std::string> vocab;
  for (int i = 0; i < 50; ++i) {
    char buf[8];
    std::snprintf(buf, sizeof(buf), " t%02d", i);
    vocab.push_back(buf);
  }
  SyntheticVocabProvider model(vocab, 424242, "oracle");
  std::mt19937 rng(98765);
  std::uniform_int_distribution<std::size_t> pick(0, vocab.size() - 1);
  std::uniform_int_distribution<int> set_size(2, 6);
  std::uniform_int_distribution<int> tokens(1, 2);

  const std::vector<std::string> prefixes = {"A:", "Q: about the place.\nA:",
                                             "prefix text"};
  for (int round = 0; round < 100; ++round) {
    std::set<std::string> set;
    const int n = set_size(rng);
    while (static_cast<int>(set.size()) < n) {
      std::string continuation = vocab[pick(rng)];
      if (tokens(rng) == 2) continuation += vocab[pick(rng)];
      set.insert(continuation);
    }
    const std::vector<std::string> continuations(set.begin(), set.end());
    const std::string& prefix = prefixes[round % prefixes.size()];

    const double expected =
        enumerate_category_mass(model, prefix, continuations, 2);
    const double actual = category_mass(prefix, continuations, model);
    require(std::fabs(actual - expected) <=
                1e-12 * std::max(expected, 1e-300),
            "oracle mismatch: engine " + format_full(actual) + " vs oracle " +
                format_full(expected));
  }
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  require_runtime(seconds, 10.0, "oracle equivalence");
}

// --- Criterion 3 -----------------------------------------------------------

void catalog_fidelity() {
  const Catalog catalog = builtin_catalog();
  require(catalog.tasks.size() == 4,
          "expected 4 task prompts, got " +
              std::to_string(catalog.tasks.size()));
  require(catalog.debias_prompts.size() == 6,
          "expected 6 debias prompts, got " +
              std::to_string(catalog.debias_prompts.size()));
  require(catalog.debias(std::nullopt).text.empty(),
          "the baseline debias prompt must be empty");

  const std::size_t male = expand_verbalizations(
                               at(catalog.verbalizations, GenderCategory::Male))
                               .size();
  const std::size_t female =
      expand_verbalizations(at(catalog.verbalizations, GenderCategory::Female))
          .size();
  const std::size_t diverse =
      expand_verbalizations(
          at(catalog.verbalizations, GenderCategory::Diverse))
          .size();
  require(male == 4 && female == 4 && diverse == 18,
          "verbalization expansions are " + std::to_string(male) + "/" +
              std::to_string(female) + "/" + std::to_string(diverse) +
              ", expected 4/4/18");

  require(catalog.jobs.size() == 40,
          "expected 40 jobs, got " + std::to_string(catalog.jobs.size()));
  require(catalog.jobs_in_group(JobGroup::FemaleDominated).size() == 20 &&
              catalog.jobs_in_group(JobGroup::MaleDominated).size() == 20,
          "expected 20 jobs per group");

  const auto averages = reference_averages(catalog.jobs);
  const auto& fd =
      averages[static_cast<std::size_t>(JobGroup::FemaleDominated)];
  const auto& md = averages[static_cast<std::size_t>(JobGroup::MaleDominated)];
  require_close(fd.male_avg, 10.8, 0.05, "female-dominated male average");
  require_close(fd.female_avg, 89.2, 0.05, "female-dominated female average");
  require_close(md.male_avg, 94.4, 0.05, "male-dominated male average");
  require_close(md.female_avg, 5.6, 0.05, "male-dominated female average");
}

// --- Criterion 4 -----------------------------------------------------------

void matrix_combinatorics() {
  const Catalog catalog = builtin_catalog();
  RunConfig config;
  config.task_ids = {1, 2, 3, 4};
  config.debias_ids = {1, 2, 3, 4, 5, 6};
  config.positionings = {Positioning::Inline, Positioning::Dialogue};
  UniformProvider provider(50);
  const ResultSet results = run_matrix(config, catalog, provider);
  require(results.cells.size() == 2240,
          "expected 2240 cells, got " + std::to_string(results.cells.size()));
  require(results.group_rows.size() == 56,
          "expected 56 group rows, got " +
              std::to_string(results.group_rows.size()));
  std::size_t task1_rows = 0, range_rows = 0;
  for (const GroupRow& row : results.group_rows) {
    if (row.task_range == "1") {
      ++task1_rows;
    } else {
      require(row.task_range == "2-4",
              "unexpected task range '" + row.task_range + "'");
      ++range_rows;
    }
  }
  require(task1_rows == 28 && range_rows == 28,
          "expected 28 rows per table, got " + std::to_string(task1_rows) +
              " and " + std::to_string(range_rows));

  // Resume equivalence over the shipped replay fixture.
  TempDir dir;
  const std::string fixture =
      biaslens::testing::data_dir() + "/demo/fixture.jsonl";
  RunConfig demo = demo_run_config();

  demo.output_path = dir.file("baseline.json");
  {
    ReplayProvider replay = ReplayProvider::from_file(fixture);
    run_matrix(demo, catalog, replay);
  }

  std::vector<ScoreRecord> truncated = load_fixture(fixture);
  truncated.resize(truncated.size() - 3);  // drop the final cell's scores
  write_fixture(truncated, dir.file("truncated.jsonl"));

  demo.output_path = dir.file("resumed.json");
  {
    ReplayProvider replay = ReplayProvider::from_file(dir.file("truncated.jsonl"));
    try {
      run_matrix(demo, catalog, replay);
      throw Failure("interrupted run unexpectedly completed");
    } catch (const MissingRecordError&) {
      // expected: the truncated fixture cannot finish the matrix
    }
  }
  {
    ReplayProvider replay = ReplayProvider::from_file(fixture);
    run_matrix(demo, catalog, replay);
  }
  require(strip_timestamp(read_file(dir.file("resumed.json"))) ==
              strip_timestamp(read_file(dir.file("baseline.json"))),
          "resumed run differs from the uninterrupted run");
}

// --- Criterion 5 -----------------------------------------------------------

void reference_table_integrity() {
  const std::vector<ReferenceTable> tables = builtin_reference_tables();
  require(tables.size() == 4, "expected 4 reference tables");
  std::size_t rows = 0;
  for (const ReferenceTable& table : tables) {
    require(table.rows.size() == 28,
            to_string(table.label) + " has " +
                std::to_string(table.rows.size()) + " rows, expected 28");
    for (const ReferenceRow& row : table.rows) {
      const double sum = row.m + row.f + row.d;
      require(sum >= 99.7 && sum <= 100.3,
              to_string(table.label) + " row sums to " + format_full(sum));
      ++rows;
    }
  }
  require(rows == 112, "expected 112 reference rows");

  auto find_row = [&](ReferenceLabel label, std::optional<int> debias,
                      Positioning pos, JobGroup group) -> ReferenceRow {
    for (const ReferenceTable& table : tables) {
      if (table.label != label) continue;
      for (const ReferenceRow& row : table.rows) {
        if (row.debias_id == debias && row.positioning == pos &&
            row.group == group) {
          return row;
        }
      }
    }
    throw Failure("reference row not found in " + to_string(label));
  };
  const ReferenceRow t3 =
      find_row(ReferenceLabel::DavinciT3, std::nullopt, Positioning::Inline,
               JobGroup::FemaleDominated);
  require(t3.m == 12.0 && t3.f == 87.9 && t3.d == 0.0,
          "davinci-t3 baseline female-dominated row is (" + format_full(t3.m) +
              ", " + format_full(t3.f) + ", " + format_full(t3.d) +
              "), expected (12.0, 87.9, 0.0)");
  const ReferenceRow t4 =
      find_row(ReferenceLabel::DavinciT4, std::nullopt, Positioning::Inline,
               JobGroup::MaleDominated);
  require(t4.m == 84.4 && t4.f == 6.4 && t4.d == 9.2,
          "davinci-t4 baseline male-dominated row is (" + format_full(t4.m) +
              ", " + format_full(t4.f) + ", " + format_full(t4.d) +
              "), expected (84.4, 6.4, 9.2)");
}

// --- Criterion 6 -----------------------------------------------------------

void provider_substitutability() {
  const auto start = std::chrono::steady_clock::now();
  const Catalog catalog = builtin_catalog();
  FakeOpenAiServer server;
  const std::string endpoint = server.start();
  TempDir dir;

  HttpProviderConfig http_config;
  http_config.endpoint = endpoint;
  http_config.model = "fake-model";
  http_config.max_in_flight = 16;
  http_config.retry.base_backoff = std::chrono::milliseconds(1);
  http_config.cache_path = dir.file("cache.jsonl").string();

  RunConfig config = demo_run_config();

  // Pass 1: live HTTP with a cold cache.
  config.output_path = dir.file("http.json");
  {
    HttpProvider provider(http_config);
    run_matrix(config, catalog, provider);
    require(server.request_count() > 0, "the live pass issued no requests");
  }

  // Pass 2: same endpoint config, warm cache; the network stays silent.
  server.reset_counters();
  config.output_path = dir.file("cached.json");
  {
    HttpProvider provider(http_config);
    run_matrix(config, catalog, provider);
    require(server.request_count() == 0,
            "cached rerun issued " + std::to_string(server.request_count()) +
                " network requests");
  }

  // Pass 3: replay a fixture recorded from the same endpoint.
  const auto fixture_path = dir.file("recorded.jsonl");
  {
    HttpProvider provider(http_config);
    record_fixture(provider, enumerate_matrix_requests(config, catalog),
                   fixture_path);
  }
  config.output_path = dir.file("replayed.json");
  {
    ReplayProvider replay = ReplayProvider::from_file(fixture_path);
    run_matrix(config, catalog, replay);
  }

  const std::string http_doc = strip_timestamp(read_file(dir.file("http.json")));
  const std::string cached_doc =
      strip_timestamp(read_file(dir.file("cached.json")));
  const std::string replayed_doc =
      strip_timestamp(read_file(dir.file("replayed.json")));
  require(http_doc == cached_doc, "cache-only results differ from live HTTP");
  require(http_doc == replayed_doc, "replayed results differ from live HTTP");

  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  require_runtime(seconds, 30.0, "provider substitutability");
}

// --- Criterion 7 -----------------------------------------------------------

void diagnostics_criterion() {
  // Hand-counted flip rates on constructed tables.
  {
    TabularProvider provider;
    provider.set("C", " a1", -1.0);
    provider.set("C", " b1", -2.0);
    provider.set("C", " a2", -2.0);
    provider.set("C", " b2", -1.0);
    provider.set("C", " a3", -1.0);
    provider.set("C", " b3", -2.0);
    AssociationCase c{"aba", "C", {" a1", " a2", " a3"}, {" b1", " b2", " b3"}};
    const FlipReport report = flip_rate(c, provider);
    require(report.flip_rate == 0.5,
            "A,B,A flip rate is " + format_full(report.flip_rate));
  }
  {
    TabularProvider provider;
    provider.set("C", " a1", -1.0);
    provider.set("C", " b1", -2.0);
    provider.set("C", " a2", -1.1);
    provider.set("C", " b2", -2.1);
    AssociationCase c{"agree", "C", {" a1", " a2"}, {" b1", " b2"}};
    require(flip_rate(c, provider).flip_rate == 0.0,
            "agreeing pairs should never flip");
  }

  // Antisymmetry across 200 random pairs.
  std::mt19937 rng(777);
  std::uniform_real_distribution<double> logp(-9.0, -0.1);
  std::uniform_int_distribution<int> token_count(1, 5);
  for (int round = 0; round < 200; ++round) {
    TabularProvider provider;
    const int ta = token_count(rng), tb = token_count(rng);
    const double la = logp(rng) * ta, lb = logp(rng) * tb;
    provider.set("C", " a", la, std::vector<double>(ta, la / ta));
    provider.set("C", " b", lb, std::vector<double>(tb, lb / tb));
    const PreferenceResult forward = preference("C", " a", " b", provider);
    const PreferenceResult backward = preference("C", " b", " a", provider);
    require(std::fabs(forward.margin + backward.margin) <= 1e-12,
            "margins are not antisymmetric");
    const bool reversed =
        (forward.ordering == PreferenceOrdering::APreferred &&
         backward.ordering == PreferenceOrdering::BPreferred) ||
        (forward.ordering == PreferenceOrdering::BPreferred &&
         backward.ordering == PreferenceOrdering::APreferred) ||
        (forward.ordering == PreferenceOrdering::Tie &&
         backward.ordering == PreferenceOrdering::Tie);
    require(reversed, "orderings are not reversed");
  }
}

// --- Criterion 8 -----------------------------------------------------------

void golden_cli_outputs() {
  TempDir dir;
  const std::string config =
      biaslens::testing::data_dir() + "/demo/config.json";
  const std::string base = "--config " + config + " matrix --output ";

  const auto run1 = biaslens::testing::run_cli(base + dir.file("r1.json").string());
  const auto run2 = biaslens::testing::run_cli(base + dir.file("r2.json").string());
  require(run1.exit_code == 0 && run2.exit_code == 0,
          "matrix runs exited nonzero");
  require(!run1.output.empty(), "matrix printed nothing");
  require(run1.output == run2.output,
          "matrix tables differ between two runs");
  require(strip_timestamp(read_file(dir.file("r1.json"))) ==
              strip_timestamp(read_file(dir.file("r2.json"))),
          "result documents differ between two runs");

  const auto json_export = biaslens::testing::run_cli(
      "report --results " + dir.file("r1.json").string() + " --format json");
  require(json_export.exit_code == 0, "report --format json exited nonzero");
  require(strip_timestamp(json_export.output) ==
              strip_timestamp(read_file(dir.file("r1.json"))),
          "json export does not round-trip the results document");

  const ResultSet results = load_results(dir.file("r1.json"));
  const auto csv_export = biaslens::testing::run_cli(
      "report --results " + dir.file("r1.json").string() + " --format csv");
  const std::vector<GroupRow> rows = parse_report_csv(csv_export.output);
  require(rows.size() == results.group_rows.size(),
          "csv export row count mismatch");
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (GenderCategory cat : kGenderCategories) {
      require(at(rows[i].distribution.normalized, cat) ==
                  at(results.group_rows[i].distribution.normalized, cat),
              "csv export lost precision");
    }
  }
}

}  // namespace

int main() {
  struct Criterion {
    std::string name;
    std::function<void()> body;
  };
  const std::vector<Criterion> criteria = {
      {"normalization suite (1000 cells, sum=1 within 1e-9, scale-invariant "
       "within 1e-12, <5s)",
       normalization_suite},
      {"category-mass oracle equivalence (100 random sets vs brute force, "
       "1e-12 relative, <10s)",
       oracle_equivalence},
      {"catalog fidelity (4 tasks, 6+1 debias, 4/4/18 expansions, 40 jobs, "
       "group averages 10.8/89.2 and 94.4/5.6 within 0.05)",
       catalog_fidelity},
      {"matrix combinatorics (2240 cells, 56 group rows, bit-exact resume)",
       matrix_combinatorics},
      {"reference table integrity (112 rows in [99.7, 100.3], spot values)",
       reference_table_integrity},
      {"provider substitutability (http+cache == cache-only == replay, zero "
       "cached network requests, <30s)",
       provider_substitutability},
      {"diagnostics (hand-counted flip rates, antisymmetry over 200 pairs)",
       diagnostics_criterion},
      {"golden CLI outputs (byte-identical tables, lossless json round-trip)",
       golden_cli_outputs},
  };

  int failures = 0;
  for (const Criterion& criterion : criteria) {
    const auto start = std::chrono::steady_clock::now();
    std::string failure;
    try {
      criterion.body();
    } catch (const std::exception& e) {
      failure = e.what();
    }
    const double seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
            .count();
    if (failure.empty()) {
      std::printf("PASS  %s  [%.2fs]\n", criterion.name.c_str(), seconds);
    } else {
      ++failures;
      std::printf("FAIL  %s  [%.2fs]\n      %s\n", criterion.name.c_str(),
                  seconds, failure.c_str());
    }
  }
  std::printf("%d/%zu acceptance criteria passed\n",
              static_cast<int>(criteria.size()) - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
