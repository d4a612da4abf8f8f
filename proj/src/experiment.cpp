#include "biaslens/experiment.hpp"

#include <algorithm>
#include <ctime>
#include <fstream>
#include <map>
#include <set>

#include <nlohmann/json.hpp>

#include "biaslens/util.hpp"

namespace biaslens {

namespace {

using nlohmann::json;

std::string substitute_job(const std::string& tmpl, const std::string& job) {
  std::string out;
  out.reserve(tmpl.size() + job.size());
  std::size_t start = 0;
  const std::string placeholder = kJobPlaceholder;
  while (true) {
    std::size_t pos = tmpl.find(placeholder, start);
    if (pos == std::string::npos) {
      out.append(tmpl, start, std::string::npos);
      return out;
    }
    out.append(tmpl, start, pos - start);
    out.append(job);
    start = pos + placeholder.size();
  }
}

/// "Q: <question>\nA:[ <answer>]" with an optional lead spliced into the
/// question line (the Inline debias text).
std::string qa_tail(const TaskPrompt& task, const Job& job,
                    const std::string& question_lead,
                    const PromptLayout& layout) {
  std::string prefix = layout.question_marker + " " + question_lead +
                       substitute_job(task.question, job.name) +
                       layout.line_separator + layout.answer_marker;
  if (!task.answer_prefix.empty()) {
    prefix += " " + substitute_job(task.answer_prefix, job.name);
  }
  return prefix;
}

std::string timestamp_now() {
  std::time_t now = std::time(nullptr);
  std::tm utc{};
  gmtime_r(&now, &utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &utc);
  return buf;
}

std::string cell_key(int task_id, const std::optional<int>& debias_id,
                     Positioning positioning, const std::string& job) {
  return std::to_string(task_id) + '|' +
         (debias_id ? std::to_string(*debias_id) : std::string("none")) + '|' +
         to_string(positioning) + '|' + job;
}

struct ResolvedRun {
  std::vector<int> task_ids;                    // sorted unique
  std::vector<std::optional<int>> debias_ids;   // none first, then sorted
  std::vector<Positioning> positionings;        // config order, deduped
  std::vector<Job> jobs;                        // run order
};

ResolvedRun resolve(const RunConfig& config, const Catalog& catalog) {
  if (config.task_ids.empty()) {
    throw ValidationError("run config needs at least one task");
  }
  if (config.positionings.empty()) {
    throw ValidationError("run config needs at least one positioning");
  }
  ResolvedRun run;

  std::set<int> task_set(config.task_ids.begin(), config.task_ids.end());
  for (int id : task_set) {
    catalog.task(id);  // validates
    run.task_ids.push_back(id);
  }

  run.debias_ids.push_back(std::nullopt);  // baseline is always measured
  std::set<int> debias_set(config.debias_ids.begin(), config.debias_ids.end());
  for (int id : debias_set) {
    catalog.debias(id);  // validates
    run.debias_ids.emplace_back(id);
  }

  for (Positioning p : config.positionings) {
    if (std::find(run.positionings.begin(), run.positionings.end(), p) ==
        run.positionings.end()) {
      run.positionings.push_back(p);
    }
  }

  if (config.job_names.empty()) {
    run.jobs = catalog.jobs;
  } else {
    std::set<std::string> seen;
    for (const std::string& name : config.job_names) {
      if (seen.insert(name).second) run.jobs.push_back(catalog.job(name));
    }
  }
  if (run.jobs.empty()) {
    throw ValidationError("run config needs at least one job");
  }
  return run;
}

std::string range_label(const std::vector<int>& task_ids) {
  bool contiguous = true;
  for (std::size_t i = 1; i < task_ids.size(); ++i) {
    if (task_ids[i] != task_ids[i - 1] + 1) contiguous = false;
  }
  if (task_ids.size() > 1 && contiguous) {
    return std::to_string(task_ids.front()) + "-" +
           std::to_string(task_ids.back());
  }
  std::string label;
  for (int id : task_ids) {
    if (!label.empty()) label += ",";
    label += std::to_string(id);
  }
  return label;
}

json distribution_to_json(const GenderDistribution& d) {
  json raw, normalized;
  for (GenderCategory cat : kGenderCategories) {
    raw[to_string(cat)] = at(d.raw_mass, cat);
    normalized[to_string(cat)] = at(d.normalized, cat);
  }
  return json{{"raw_mass", raw},
              {"normalized", normalized},
              {"residual_mass", d.residual_mass}};
}

GenderDistribution distribution_from_json(const json& obj) {
  GenderDistribution d;
  for (GenderCategory cat : kGenderCategories) {
    at(d.raw_mass, cat) = obj.at("raw_mass").at(to_string(cat)).get<double>();
    at(d.normalized, cat) =
        obj.at("normalized").at(to_string(cat)).get<double>();
  }
  d.residual_mass = obj.at("residual_mass").get<double>();
  return d;
}

json debias_to_json(const std::optional<int>& id) {
  if (!id.has_value()) return nullptr;
  return *id;
}

std::optional<int> debias_from_json(const json& value) {
  if (value.is_null()) return std::nullopt;
  return value.get<int>();
}

}  // namespace

RenderedCase compose_prefix(const TaskPrompt& task, const Job& job,
                            const DebiasPrompt& debias, Positioning positioning,
                            const DialogueScaffold& scaffold,
                            const PromptLayout& layout) {
  if (job.name.empty()) throw ValidationError("job name is empty");
  const bool has_debias = debias.id.has_value();
  if (has_debias && debias.text.empty()) {
    throw ValidationError("debias prompt " + std::to_string(*debias.id) +
                          " has empty text");
  }

  RenderedCase out;
  if (positioning == Positioning::Inline) {
    const std::string lead = has_debias ? debias.text + " " : std::string();
    out.prefix = qa_tail(task, job, lead, layout);
  } else {
    std::string prefix;
    if (has_debias) prefix += debias.text + layout.line_separator;
    prefix += scaffold.opener + layout.line_separator;
    for (const auto& [question, answer] : scaffold.turns) {
      prefix += layout.question_marker + " " + question +
                layout.line_separator + layout.answer_marker + " " + answer +
                layout.line_separator;
    }
    prefix += qa_tail(task, job, "", layout);
    out.prefix = std::move(prefix);
  }
  out.continuations = task.continuations;
  out.provenance = {task.id, debias.id, positioning, job.name};
  validate_case(out);
  return out;
}

std::string config_digest(const RunConfig& config, const Catalog& catalog) {
  const ResolvedRun run = resolve(config, catalog);
  std::string canon = "v" + std::to_string(kResultSchemaVersion);
  canon += "|tasks=";
  for (int id : run.task_ids) canon += std::to_string(id) + ",";
  canon += "|debias=";
  for (const auto& id : run.debias_ids) {
    canon += (id ? std::to_string(*id) : std::string("none")) + ",";
  }
  canon += "|positionings=";
  for (Positioning p : run.positionings) canon += to_string(p) + ",";
  canon += "|jobs=";
  for (const Job& job : run.jobs) {
    canon += job.name + ":" + format_full(job.male_ratio) + ":" +
             format_full(job.female_ratio) + ":" + to_string(job.group) + ";";
  }
  canon += "|layout=" + catalog.layout.question_marker + "\x1f" +
           catalog.layout.answer_marker + "\x1f" +
           catalog.layout.line_separator;
  for (const TaskPrompt& task : catalog.tasks) {
    canon += "|task:" + std::to_string(task.id) + ":" + to_string(task.mode) +
             ":" + task.question + "\x1f" + task.answer_prefix;
    for (GenderCategory cat : kGenderCategories) {
      for (const std::string& c : at(task.continuations, cat)) {
        canon += "\x1f" + c;
      }
    }
  }
  for (const DebiasPrompt& d : catalog.debias_prompts) {
    canon += "|debias:" + std::to_string(*d.id) + ":" +
             to_string(d.abstraction) + ":" + d.text;
  }
  for (GenderCategory cat : kGenderCategories) {
    const VerbalizationSet& set = at(catalog.verbalizations, cat);
    canon += "|verb:" + to_string(cat) + ":";
    for (const std::string& form : set.base_forms) canon += form + ",";
    canon += set.expand_casings ? "expand" : "plain";
  }
  canon += "|scaffold:" + catalog.scaffold.opener;
  for (const auto& [q, a] : catalog.scaffold.turns) {
    canon += "\x1f" + q + "\x1f" + a;
  }
  return to_hex(fnv1a64(canon));
}

ResultSet run_matrix(const RunConfig& config, const Catalog& catalog,
                     Provider& provider, const WarnFn& warn) {
  const ResolvedRun run = resolve(config, catalog);
  const std::string digest = config_digest(config, catalog);

  std::map<std::string, MeasurementCell> completed;
  if (!config.output_path.empty() &&
      std::filesystem::exists(config.output_path)) {
    ResultSet previous = load_results(config.output_path);
    if (previous.metadata.config_digest != digest) {
      throw ConfigError(
          "results file " + config.output_path.string() +
          " was produced by a different configuration (digest " +
          previous.metadata.config_digest + ", expected " + digest +
          "); remove it or pick another output path");
    }
    for (MeasurementCell& cell : previous.cells) {
      const CellProvenance& p = cell.provenance;
      completed.emplace(cell_key(p.task_id, p.debias_id, p.positioning, p.job),
                        std::move(cell));
    }
  }

  ResultSet out;
  out.metadata = RunMetadata{kResultSchemaVersion, provider.tag(),
                             timestamp_now(), digest};

  auto save_partial = [&]() {
    if (config.output_path.empty()) return;
    ResultSet partial;
    partial.metadata = out.metadata;
    partial.cells = out.cells;
    save_results(partial, config.output_path);
  };

  for (int task_id : run.task_ids) {
    const TaskPrompt& task = catalog.task(task_id);
    for (const std::optional<int>& debias_id : run.debias_ids) {
      const DebiasPrompt debias = catalog.debias(debias_id);
      for (Positioning positioning : run.positionings) {
        for (const Job& job : run.jobs) {
          const std::string key =
              cell_key(task_id, debias_id, positioning, job.name);
          if (auto it = completed.find(key); it != completed.end()) {
            out.cells.push_back(it->second);
            continue;
          }
          RenderedCase composed = compose_prefix(
              task, job, debias, positioning, catalog.scaffold, catalog.layout);
          try {
            out.cells.push_back(
                measure_job(composed, job.group, provider, warn));
          } catch (...) {
            save_partial();
            throw;
          }
        }
      }
    }
  }

  // Group rows: task 1 stands alone; the remaining tasks are averaged into
  // one range row per slice with equal task weight.
  std::map<std::string, std::vector<MeasurementCell>> slices;
  for (const MeasurementCell& cell : out.cells) {
    const CellProvenance& p = cell.provenance;
    slices[cell_key(p.task_id, p.debias_id, p.positioning, "")].push_back(cell);
  }
  std::vector<JobGroup> groups_present;
  for (JobGroup group : {JobGroup::FemaleDominated, JobGroup::MaleDominated}) {
    if (std::any_of(run.jobs.begin(), run.jobs.end(),
                    [&](const Job& j) { return j.group == group; })) {
      groups_present.push_back(group);
    }
  }
  std::vector<int> implicit_tasks;
  for (int id : run.task_ids) {
    if (id != 1) implicit_tasks.push_back(id);
  }

  auto emit_rows_for = [&](const std::string& label,
                           const std::vector<int>& task_ids) {
    for (const std::optional<int>& debias_id : run.debias_ids) {
      const Abstraction abstraction = catalog.debias(debias_id).abstraction;
      for (Positioning positioning : run.positionings) {
        for (JobGroup group : groups_present) {
          std::vector<GenderDistribution> task_means;
          for (int task_id : task_ids) {
            const auto& slice =
                slices.at(cell_key(task_id, debias_id, positioning, ""));
            task_means.push_back(aggregate_group(slice, group));
          }
          out.group_rows.push_back(GroupRow{
              label, debias_id, abstraction, positioning, group,
              mean_distribution(task_means)});
        }
      }
    }
  };

  const bool has_task1 =
      std::find(run.task_ids.begin(), run.task_ids.end(), 1) !=
      run.task_ids.end();
  if (has_task1) emit_rows_for("1", {1});
  if (!implicit_tasks.empty()) {
    emit_rows_for(range_label(implicit_tasks), implicit_tasks);
  }

  if (!config.output_path.empty()) save_results(out, config.output_path);
  return out;
}

std::vector<ScoreRequest> enumerate_matrix_requests(const RunConfig& config,
                                                    const Catalog& catalog) {
  const ResolvedRun run = resolve(config, catalog);
  std::vector<ScoreRequest> requests;
  for (int task_id : run.task_ids) {
    const TaskPrompt& task = catalog.task(task_id);
    for (const std::optional<int>& debias_id : run.debias_ids) {
      const DebiasPrompt debias = catalog.debias(debias_id);
      for (Positioning positioning : run.positionings) {
        for (const Job& job : run.jobs) {
          RenderedCase composed = compose_prefix(
              task, job, debias, positioning, catalog.scaffold, catalog.layout);
          for (GenderCategory cat : kGenderCategories) {
            for (const std::string& continuation :
                 at(composed.continuations, cat)) {
              requests.push_back({composed.prefix, continuation});
            }
          }
        }
      }
    }
  }
  return requests;
}

std::string results_to_json(const ResultSet& results) {
  json doc;
  doc["schema_version"] = results.metadata.schema_version;
  doc["metadata"] = json{{"provider_tag", results.metadata.provider_tag},
                         {"timestamp", results.metadata.timestamp},
                         {"config_digest", results.metadata.config_digest}};
  json cells = json::array();
  for (const MeasurementCell& cell : results.cells) {
    json obj = distribution_to_json(cell.distribution);
    obj["task"] = cell.provenance.task_id;
    obj["debias"] = debias_to_json(cell.provenance.debias_id);
    obj["positioning"] = to_string(cell.provenance.positioning);
    obj["job"] = cell.provenance.job;
    obj["group"] = to_string(cell.provenance.group);
    cells.push_back(std::move(obj));
  }
  doc["cells"] = std::move(cells);
  json rows = json::array();
  for (const GroupRow& row : results.group_rows) {
    json obj = distribution_to_json(row.distribution);
    obj["tasks"] = row.task_range;
    obj["debias"] = debias_to_json(row.debias_id);
    obj["abstraction"] = to_string(row.abstraction);
    obj["positioning"] = to_string(row.positioning);
    obj["group"] = to_string(row.group);
    rows.push_back(std::move(obj));
  }
  doc["group_rows"] = std::move(rows);
  return doc.dump(2) + "\n";
}

ResultSet results_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("unparseable results document: ") + e.what());
  }
  try {
    const int version = doc.at("schema_version").get<int>();
    if (version != kResultSchemaVersion) {
      throw ConfigError("results schema_version " + std::to_string(version) +
                        " does not match supported version " +
                        std::to_string(kResultSchemaVersion) +
                        "; migrate the file or re-run the matrix");
    }
    ResultSet results;
    results.metadata.schema_version = version;
    const json& meta = doc.at("metadata");
    results.metadata.provider_tag = meta.at("provider_tag").get<std::string>();
    results.metadata.timestamp = meta.at("timestamp").get<std::string>();
    results.metadata.config_digest =
        meta.at("config_digest").get<std::string>();
    for (const json& obj : doc.at("cells")) {
      MeasurementCell cell;
      cell.provenance.task_id = obj.at("task").get<int>();
      cell.provenance.debias_id = debias_from_json(obj.at("debias"));
      cell.provenance.positioning =
          positioning_from_string(obj.at("positioning").get<std::string>());
      cell.provenance.job = obj.at("job").get<std::string>();
      cell.provenance.group =
          job_group_from_string(obj.at("group").get<std::string>());
      cell.distribution = distribution_from_json(obj);
      results.cells.push_back(std::move(cell));
    }
    for (const json& obj : doc.at("group_rows")) {
      GroupRow row;
      row.task_range = obj.at("tasks").get<std::string>();
      row.debias_id = debias_from_json(obj.at("debias"));
      row.abstraction =
          abstraction_from_string(obj.at("abstraction").get<std::string>());
      row.positioning =
          positioning_from_string(obj.at("positioning").get<std::string>());
      row.group = job_group_from_string(obj.at("group").get<std::string>());
      row.distribution = distribution_from_json(obj);
      results.group_rows.push_back(std::move(row));
    }
    return results;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed results document: ") + e.what());
  }
}

void save_results(const ResultSet& results, const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::filesystem::create_directories(path.parent_path());
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write results to " + path.string());
  out << results_to_json(results);
  out.flush();
  if (!out) throw IoError("failed writing results to " + path.string());
}

ResultSet load_results(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  return results_from_json(text);
}

}  // namespace biaslens
