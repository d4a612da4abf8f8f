#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "biaslens/builtin_data.hpp"
#include "biaslens/diagnostics.hpp"
#include "biaslens/domain.hpp"
#include "biaslens/engine.hpp"
#include "biaslens/experiment.hpp"
#include "biaslens/http_provider.hpp"
#include "biaslens/provider.hpp"
#include "biaslens/report.hpp"
#include "biaslens/util.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace biaslens;

struct ProviderFlags {
  std::string kind;  // tabular | replay | http | uniform
  std::string endpoint;
  std::string model;
  std::string fixture;
  std::string cache;
  std::string auth_env = "OPENAI_API_KEY";
  int max_in_flight = 4;
  int retries = 5;
  int backoff_ms = 250;
  int vocab_size = 50;
};

struct CatalogFlags {
  std::string prompts_path;
  std::string jobs_path;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(in)),
                     std::istreambuf_iterator<char>());
}

Catalog make_catalog(const CatalogFlags& flags) {
  const Catalog base = builtin_catalog();
  if (flags.prompts_path.empty() && flags.jobs_path.empty()) return base;
  const std::string prompts = flags.prompts_path.empty()
                                  ? builtin::kPromptsCfg
                                  : read_file(flags.prompts_path);
  const std::string jobs = flags.jobs_path.empty()
                               ? builtin::kJobsCsv
                               : read_file(flags.jobs_path);
  return parse_catalog(prompts, jobs);
}

std::unique_ptr<Provider> make_provider(const ProviderFlags& flags) {
  if (flags.kind == "tabular") {
    if (flags.fixture.empty()) {
      throw ConfigError("tabular provider requires --fixture");
    }
    auto provider = std::make_unique<TabularProvider>(
        "tabular:" + fs::path(flags.fixture).stem().string());
    for (const ScoreRecord& record : load_fixture(flags.fixture)) {
      provider->add(record);
    }
    return provider;
  }
  if (flags.kind == "replay") {
    if (flags.fixture.empty()) {
      throw ConfigError("replay provider requires --fixture");
    }
    return std::make_unique<ReplayProvider>(
        ReplayProvider::from_file(flags.fixture));
  }
  if (flags.kind == "http") {
    HttpProviderConfig config;
    config.endpoint = flags.endpoint;
    config.model = flags.model;
    config.auth_env = flags.auth_env;
    config.max_in_flight = flags.max_in_flight;
    config.retry.max_attempts = flags.retries;
    config.retry.base_backoff = std::chrono::milliseconds(flags.backoff_ms);
    if (!flags.cache.empty()) config.cache_path = flags.cache;
    return std::make_unique<HttpProvider>(std::move(config));
  }
  if (flags.kind == "uniform") {
    return std::make_unique<UniformProvider>(flags.vocab_size);
  }
  throw ConfigError("unknown provider kind '" + flags.kind +
                    "' (valid: tabular, replay, http, uniform)");
}

/// Matrix config file: provider settings plus the run matrix. Relative paths
/// are resolved against the config file's directory.
struct MatrixConfig {
  ProviderFlags provider;
  RunConfig run;
};

MatrixConfig load_matrix_config(const fs::path& path) {
  json doc;
  try {
    doc = json::parse(read_file(path));
  } catch (const json::exception& e) {
    throw ConfigError("unparseable config " + path.string() + ": " + e.what());
  }
  const fs::path base = path.has_parent_path() ? path.parent_path() : ".";
  auto resolve_path = [&](const std::string& p) -> std::string {
    if (p.empty()) return p;
    fs::path candidate(p);
    return candidate.is_absolute() ? candidate.string()
                                   : (base / candidate).string();
  };

  MatrixConfig config;
  try {
    const json& provider = doc.at("provider");
    config.provider.kind = provider.at("kind").get<std::string>();
    config.provider.endpoint = provider.value("endpoint", "");
    config.provider.model = provider.value("model", "");
    config.provider.fixture = resolve_path(provider.value("fixture", ""));
    config.provider.cache = resolve_path(provider.value("cache", ""));
    config.provider.auth_env = provider.value("auth_env", "OPENAI_API_KEY");
    config.provider.max_in_flight = provider.value("max_in_flight", 4);
    config.provider.vocab_size = provider.value("vocab_size", 50);
    if (provider.contains("retry")) {
      config.provider.retries = provider["retry"].value("max_attempts", 5);
      config.provider.backoff_ms =
          provider["retry"].value("base_backoff_ms", 250);
    }
    for (const json& id : doc.at("tasks")) {
      config.run.task_ids.push_back(id.get<int>());
    }
    if (doc.contains("debias")) {
      for (const json& id : doc["debias"]) {
        config.run.debias_ids.push_back(id.get<int>());
      }
    }
    for (const json& p : doc.at("positionings")) {
      config.run.positionings.push_back(
          positioning_from_string(p.get<std::string>()));
    }
    if (doc.contains("jobs")) {
      for (const json& name : doc["jobs"]) {
        config.run.job_names.push_back(name.get<std::string>());
      }
    }
    config.run.output_path = resolve_path(doc.value("output", ""));
  } catch (const json::exception& e) {
    throw ConfigError("malformed config " + path.string() + ": " + e.what());
  }
  return config;
}

WarnFn stderr_warner() {
  return [](const std::string& message) {
    std::cerr << "warning: " << message << "\n";
  };
}

void print_distribution(const MeasurementCell& cell) {
  const GenderDistribution& d = cell.distribution;
  std::cout << "job=" << cell.provenance.job
            << " task=" << cell.provenance.task_id << " debias="
            << (cell.provenance.debias_id
                    ? std::to_string(*cell.provenance.debias_id)
                    : std::string("none"))
            << " positioning=" << to_string(cell.provenance.positioning)
            << " group=" << to_string(cell.provenance.group) << "\n\n";
  std::cout << "| category | raw mass | normalized |\n";
  std::cout << "|---|---|---|\n";
  for (GenderCategory cat : kGenderCategories) {
    std::cout << "| " << to_string(cat) << " | "
              << format_full(at(d.raw_mass, cat)) << " | "
              << format_fixed(at(d.normalized, cat) * 100.0, 2) << "% |\n";
  }
  std::cout << "\nresidual_mass " << format_full(d.residual_mass) << "\n";
}

int cmd_measure(const ProviderFlags& provider_flags,
                const CatalogFlags& catalog_flags, const std::string& job_name,
                int task_id, std::optional<int> debias_id,
                const std::string& positioning_name) {
  const Catalog catalog = make_catalog(catalog_flags);
  const Positioning positioning = positioning_from_string(positioning_name);
  const TaskPrompt& task = catalog.task(task_id);
  const Job& job = catalog.job(job_name);
  const DebiasPrompt debias = catalog.debias(debias_id);
  std::unique_ptr<Provider> provider = make_provider(provider_flags);
  RenderedCase composed = compose_prefix(task, job, debias, positioning,
                                         catalog.scaffold, catalog.layout);
  MeasurementCell cell =
      measure_job(composed, job.group, *provider, stderr_warner());
  print_distribution(cell);
  return 0;
}

int cmd_matrix(const fs::path& config_path, const std::string& output_override,
               const CatalogFlags& catalog_flags) {
  MatrixConfig config = load_matrix_config(config_path);
  if (!output_override.empty()) config.run.output_path = output_override;
  if (config.run.output_path.empty()) {
    throw ConfigError("matrix config needs an output path");
  }
  const Catalog catalog = make_catalog(catalog_flags);
  std::unique_ptr<Provider> provider = make_provider(config.provider);
  ResultSet results;
  try {
    results = run_matrix(config.run, catalog, *provider, stderr_warner());
  } catch (const Error&) {
    if (fs::exists(config.run.output_path)) {
      std::cerr << "partial results saved to " << config.run.output_path
                << "; rerun the same command to resume\n";
    }
    throw;
  }
  std::cout << emit_report(results, ReportSpec{}) << std::flush;
  std::cerr << "results written to " << config.run.output_path.string()
            << " (" << results.cells.size() << " cells)\n";
  return 0;
}

int cmd_report(const fs::path& results_path, const std::string& reference,
               const std::string& format_name, int precision) {
  const ResultSet results = load_results(results_path);
  ReportSpec spec;
  spec.format = report_format_from_string(format_name);
  spec.precision = precision;
  std::cout << emit_report(results, spec);
  if (!reference.empty()) {
    const ReferenceTable table =
        builtin_reference_table(reference_label_from_string(reference));
    const std::vector<ComparisonRow> rows = compare_to_reference(results, table);
    std::cout << render_comparison(table, rows, precision);
  }
  std::cout << std::flush;
  return 0;
}

int cmd_diagnose(const ProviderFlags& provider_flags, const fs::path& cases_path,
                 bool no_length_norm) {
  const std::vector<AssociationCase> cases = load_association_cases(cases_path);
  std::unique_ptr<Provider> provider = make_provider(provider_flags);
  for (const AssociationCase& c : cases) {
    const FlipReport report = flip_rate(c, *provider, !no_length_norm);
    std::cout << "case: " << c.name << "\n";
    std::cout << "context: " << c.context << "\n";
    for (std::size_t i = 0; i < report.verdicts.size(); ++i) {
      const PairVerdict& v = report.verdicts[i];
      std::cout << "  pair " << (i + 1) << ": \"" << v.a << "\" vs \"" << v.b
                << "\" -> " << to_string(v.result.ordering) << " (margin "
                << format_full(v.result.margin)
                << (v.result.length_normalized ? " per token" : "") << ")\n";
    }
    std::cout << "  flip rate: " << format_fixed(report.flip_rate, 4) << "\n\n";
  }
  return 0;
}

std::vector<ScoreRequest> load_request_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open request file " + path.string());
  std::vector<ScoreRequest> requests;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    try {
      json obj = json::parse(line);
      requests.push_back({obj.at("prefix").get<std::string>(),
                          obj.at("continuation").get<std::string>()});
    } catch (const json::exception& e) {
      throw IoError("bad request at " + path.string() + ":" +
                    std::to_string(line_no) + ": " + e.what());
    }
  }
  if (requests.empty()) {
    throw ValidationError("request file " + path.string() + " is empty");
  }
  return requests;
}

int cmd_record_fixture(const ProviderFlags& provider_flags,
                       const CatalogFlags& catalog_flags,
                       const std::string& config_path,
                       const std::string& requests_path,
                       const fs::path& out_path) {
  std::vector<ScoreRequest> requests;
  std::unique_ptr<Provider> provider;
  if (!config_path.empty()) {
    MatrixConfig config = load_matrix_config(config_path);
    const Catalog catalog = make_catalog(catalog_flags);
    requests = enumerate_matrix_requests(config.run, catalog);
    provider = make_provider(config.provider);
  } else if (!requests_path.empty()) {
    requests = load_request_file(requests_path);
    provider = make_provider(provider_flags);
  } else {
    throw ConfigError("record-fixture needs --config or --requests");
  }
  record_fixture(*provider, requests, out_path);
  std::cerr << "recorded " << requests.size() << " scores to "
            << out_path.string() << "\n";
  return 0;
}

int cmd_catalogs(const CatalogFlags& catalog_flags) {
  const Catalog catalog = make_catalog(catalog_flags);
  std::cout << "# Task prompts\n\n";
  for (const TaskPrompt& task : catalog.tasks) {
    std::cout << "[" << task.id << "] mode=" << to_string(task.mode) << "\n";
    std::cout << "  " << catalog.layout.question_marker << " " << task.question
              << "\n";
    std::cout << "  " << catalog.layout.answer_marker;
    if (!task.answer_prefix.empty()) std::cout << " " << task.answer_prefix;
    std::cout << "\n  continuations:";
    for (GenderCategory cat : kGenderCategories) {
      std::cout << " " << to_string(cat) << "=[";
      const auto& conts = at(task.continuations, cat);
      for (std::size_t i = 0; i < conts.size(); ++i) {
        std::cout << (i ? ", " : "") << "\"" << conts[i] << "\"";
      }
      std::cout << "]";
    }
    std::cout << "\n\n";
  }
  std::cout << "# Debiasing prompts\n\n";
  for (const DebiasPrompt& d : catalog.debias_prompts) {
    std::cout << "[" << *d.id << "] " << to_string(d.abstraction) << ": "
              << d.text << "\n";
  }
  std::cout << "\n# Verbalizations\n\n";
  for (GenderCategory cat : kGenderCategories) {
    const VerbalizationSet& set = at(catalog.verbalizations, cat);
    std::cout << to_string(cat) << ":";
    for (std::size_t i = 0; i < set.base_forms.size(); ++i) {
      std::cout << (i ? ", " : " ") << set.base_forms[i];
    }
    std::cout << " -> " << expand_verbalizations(set).size()
              << " continuations\n";
  }
  std::cout << "\n# Jobs (" << catalog.jobs.size() << ")\n\n";
  std::cout << "| name | male_ratio | female_ratio | group |\n";
  std::cout << "|---|---|---|---|\n";
  for (const Job& job : catalog.jobs) {
    std::cout << "| " << job.name << " | " << format_fixed(job.male_ratio, 1)
              << " | " << format_fixed(job.female_ratio, 1) << " | "
              << to_string(job.group) << " |\n";
  }
  const auto averages = reference_averages(catalog.jobs);
  std::cout << "\ngroup averages (male/female):\n";
  for (JobGroup group : {JobGroup::FemaleDominated, JobGroup::MaleDominated}) {
    const auto& avg = averages[static_cast<std::size_t>(group)];
    std::cout << "  " << to_string(group) << ": "
              << format_fixed(avg.male_avg, 3) << "% / "
              << format_fixed(avg.female_avg, 3) << "%\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "biaslens: measures a language model's occupational gender "
      "associations from continuation probabilities"};
  app.require_subcommand(1);

  ProviderFlags provider_flags;
  CatalogFlags catalog_flags;
  std::string config_path;

  app.add_option("--provider", provider_flags.kind,
                 "Provider kind: tabular, replay, http, or uniform");
  app.add_option("--endpoint", provider_flags.endpoint,
                 "OpenAI-compatible base URL, e.g. http://host:8000/v1");
  app.add_option("--model", provider_flags.model, "Model identifier");
  app.add_option("--fixture", provider_flags.fixture,
                 "Score fixture (JSONL) for tabular/replay providers");
  app.add_option("--cache", provider_flags.cache,
                 "Persistent score cache path (http provider)");
  app.add_option("--auth-env", provider_flags.auth_env,
                 "Environment variable holding the API token");
  app.add_option("--max-in-flight", provider_flags.max_in_flight,
                 "Concurrent request bound for batch scoring");
  app.add_option("--retries", provider_flags.retries,
                 "Attempts per HTTP request");
  app.add_option("--backoff-ms", provider_flags.backoff_ms,
                 "Base backoff between retries");
  app.add_option("--vocab-size", provider_flags.vocab_size,
                 "Vocabulary size of the uniform provider");
  app.add_option("--config", config_path, "Matrix config file (JSON)");
  app.add_option("--prompts", catalog_flags.prompts_path,
                 "Prompt catalog file overriding the built-in one");
  app.add_option("--jobs", catalog_flags.jobs_path,
                 "Jobs CSV overriding the built-in one");

  auto* measure = app.add_subcommand(
      "measure", "Measure the gender distribution for one job and task");
  std::string measure_job_name;
  int measure_task = 0;
  std::optional<int> measure_debias;
  std::string measure_positioning = "inline";
  measure->add_option("--job", measure_job_name, "Job name from the catalog")
      ->required();
  measure->add_option("--task", measure_task, "Task prompt id")->required();
  measure->add_option("--debias", measure_debias,
                      "Debias prompt id (omit for the baseline)");
  measure->add_option("--positioning", measure_positioning,
                      "inline or dialogue");

  auto* matrix = app.add_subcommand(
      "matrix", "Run the full task x debias x positioning x job matrix");
  std::string matrix_output_override;
  matrix->add_option("--output", matrix_output_override,
                     "Override the config's output path");

  auto* report = app.add_subcommand(
      "report", "Render a results file as tables or machine-readable export");
  std::string report_results;
  std::string report_reference;
  std::string report_format = "markdown";
  int report_precision = 1;
  report->add_option("--results", report_results, "Results JSON file")
      ->required();
  report->add_option("--reference", report_reference,
                     "Reference table to compare against "
                     "(davinci-t3, davinci-t4, curie-t7, curie-t8)");
  report->add_option("--format", report_format, "markdown, csv, or json");
  report->add_option("--precision", report_precision, "Display decimals");

  auto* diagnose = app.add_subcommand(
      "diagnose", "Paraphrase-sensitivity diagnostic over association cases");
  std::string diagnose_cases;
  bool diagnose_no_norm = false;
  diagnose->add_option("--cases", diagnose_cases, "Case file (JSON list)")
      ->required();
  diagnose->add_flag("--no-length-norm", diagnose_no_norm,
                     "Compare raw logprobs instead of per-token means");

  auto* record = app.add_subcommand(
      "record-fixture", "Snapshot scores from a live provider for replay");
  std::string record_requests;
  std::string record_out;
  record->add_option("--requests", record_requests,
                     "JSONL file of {prefix, continuation} requests");
  record->add_option("--out", record_out, "Fixture output path")->required();

  auto* catalogs = app.add_subcommand(
      "catalogs", "Print the shipped task prompts, debias prompts, "
                  "verbalizations and jobs");
  (void)catalogs;

  CLI11_PARSE(app, argc, argv);

  try {
    if (measure->parsed()) {
      return cmd_measure(provider_flags, catalog_flags, measure_job_name,
                         measure_task, measure_debias, measure_positioning);
    }
    if (matrix->parsed()) {
      if (config_path.empty()) {
        throw ConfigError("matrix requires --config");
      }
      return cmd_matrix(config_path, matrix_output_override, catalog_flags);
    }
    if (report->parsed()) {
      return cmd_report(report_results, report_reference, report_format,
                        report_precision);
    }
    if (diagnose->parsed()) {
      return cmd_diagnose(provider_flags, diagnose_cases, diagnose_no_norm);
    }
    if (record->parsed()) {
      return cmd_record_fixture(provider_flags, catalog_flags, config_path,
                                record_requests, record_out);
    }
    if (catalogs->parsed()) {
      return cmd_catalogs(catalog_flags);
    }
    std::cerr << "error (usage): no subcommand given\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error (config): " << e.what() << "\n";
    return 3;
  } catch (const ValidationError& e) {
    std::cerr << "error (usage): " << e.what() << "\n";
    return 2;
  } catch (const ProviderError& e) {
    std::cerr << "error (provider): " << e.what() << "\n";
    return 4;
  } catch (const IoError& e) {
    std::cerr << "error (io): " << e.what() << "\n";
    return 5;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error (internal): " << e.what() << "\n";
    return 1;
  }
}
