#include "biaslens/domain.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_set>

#include "biaslens/builtin_data.hpp"
#include "biaslens/util.hpp"

namespace biaslens {

std::string to_string(GenderCategory c) {
  switch (c) {
    case GenderCategory::Male: return "male";
    case GenderCategory::Female: return "female";
    case GenderCategory::Diverse: return "diverse";
  }
  throw Error("unreachable gender category");
}

GenderCategory gender_category_from_string(const std::string& s) {
  if (s == "male") return GenderCategory::Male;
  if (s == "female") return GenderCategory::Female;
  if (s == "diverse") return GenderCategory::Diverse;
  throw ValidationError("unknown gender category '" + s + "'");
}

std::string to_string(JobGroup g) {
  return g == JobGroup::FemaleDominated ? "female_dominated" : "male_dominated";
}

JobGroup job_group_from_string(const std::string& s) {
  if (s == "female_dominated" || s == "FemaleDominated")
    return JobGroup::FemaleDominated;
  if (s == "male_dominated" || s == "MaleDominated")
    return JobGroup::MaleDominated;
  throw ValidationError("unknown job group '" + s + "'");
}

std::string to_string(Positioning p) {
  return p == Positioning::Inline ? "inline" : "dialogue";
}

Positioning positioning_from_string(const std::string& s) {
  if (s == "inline") return Positioning::Inline;
  if (s == "dialogue") return Positioning::Dialogue;
  throw ValidationError("unknown positioning '" + s +
                        "' (expected inline or dialogue)");
}

std::string to_string(TaskMode m) {
  switch (m) {
    case TaskMode::ExplicitWord: return "explicit_word";
    case TaskMode::SubjectPronoun: return "subject_pronoun";
    case TaskMode::ObjectPronoun: return "object_pronoun";
  }
  throw Error("unreachable task mode");
}

TaskMode task_mode_from_string(const std::string& s) {
  if (s == "explicit_word") return TaskMode::ExplicitWord;
  if (s == "subject_pronoun") return TaskMode::SubjectPronoun;
  if (s == "object_pronoun") return TaskMode::ObjectPronoun;
  throw ValidationError("unknown task mode '" + s + "'");
}

std::string to_string(Abstraction a) {
  switch (a) {
    case Abstraction::None: return "none";
    case Abstraction::High: return "high";
    case Abstraction::Medium: return "medium";
    case Abstraction::Low: return "low";
  }
  throw Error("unreachable abstraction level");
}

Abstraction abstraction_from_string(const std::string& s) {
  if (s == "none") return Abstraction::None;
  if (s == "high") return Abstraction::High;
  if (s == "medium") return Abstraction::Medium;
  if (s == "low") return Abstraction::Low;
  throw ValidationError("unknown abstraction level '" + s + "'");
}

namespace {

std::string with_single_leading_space(const std::string& s) {
  if (!s.empty() && s.front() == ' ') return s;
  return " " + s;
}

std::string substitute_job(const std::string& tmpl, const std::string& job) {
  std::string out;
  out.reserve(tmpl.size() + job.size());
  std::size_t start = 0;
  const std::size_t placeholder_len = std::string(kJobPlaceholder).size();
  while (true) {
    std::size_t pos = tmpl.find(kJobPlaceholder, start);
    if (pos == std::string::npos) {
      out.append(tmpl, start, std::string::npos);
      return out;
    }
    out.append(tmpl, start, pos - start);
    out.append(job);
    start = pos + placeholder_len;
  }
}

}  // namespace

std::vector<std::string> expand_verbalizations(const VerbalizationSet& set) {
  if (set.base_forms.empty()) {
    throw ValidationError("verbalization set for '" + to_string(set.category) +
                          "' has no base forms");
  }
  std::unordered_set<std::string> seen_bases;
  for (const std::string& base : set.base_forms) {
    if (!seen_bases.insert(base).second) {
      throw ValidationError("duplicate base form '" + base +
                            "' in verbalization set for '" +
                            to_string(set.category) + "'");
    }
  }
  std::vector<std::string> out;
  std::unordered_set<std::string> emitted;
  out.reserve(set.base_forms.size() * 2);
  for (const std::string& base : set.base_forms) {
    std::string spaced = with_single_leading_space(base);
    if (emitted.insert(spaced).second) out.push_back(spaced);
    if (set.expand_casings) {
      std::string lowered = to_lower_ascii(spaced);
      if (lowered != spaced && emitted.insert(lowered).second)
        out.push_back(lowered);
    }
  }
  return out;
}

void validate_case(const RenderedCase& c) {
  if (c.prefix.empty()) throw ValidationError("rendered prefix is empty");
  std::unordered_set<std::string> seen;
  for (GenderCategory cat : kGenderCategories) {
    const auto& conts = at(c.continuations, cat);
    if (conts.empty()) {
      throw ValidationError("no continuations for category '" +
                            to_string(cat) + "'");
    }
    for (const std::string& cont : conts) {
      if (cont.size() < 2 || cont.front() != ' ' || cont[1] == ' ') {
        throw ValidationError("continuation '" + cont +
                              "' must begin with exactly one space");
      }
      if (!seen.insert(cont).second) {
        throw ValidationError("continuation '" + cont +
                              "' appears in more than one category");
      }
    }
  }
}

namespace {

// Word-boundary blocklist for dialogue scaffolds. Generic occupation words
// plus gender terms and person pronouns; loaded job names are added per call.
const std::set<std::string>& scaffold_blocklist() {
  static const std::set<std::string> list = {
      "he",       "she",        "him",        "her",        "his",
      "hers",     "himself",    "herself",    "they",       "them",
      "their",    "theirs",     "themselves", "man",        "men",
      "woman",    "women",      "male",       "males",      "female",
      "females",  "boy",        "boys",       "girl",       "girls",
      "gender",   "genders",    "job",        "jobs",       "work",
      "works",    "worked",     "working",    "worker",     "workers",
      "career",   "careers",    "occupation", "occupations", "profession",
      "professions", "professional"};
  return list;
}

std::vector<std::string> words_of(const std::string& text) {
  std::vector<std::string> words;
  std::string current;
  for (char ch : text) {
    if ((ch >= 'a' && ch <= 'z') || (ch >= 'A' && ch <= 'Z')) {
      current.push_back(ch);
    } else if (!current.empty()) {
      words.push_back(to_lower_ascii(current));
      current.clear();
    }
  }
  if (!current.empty()) words.push_back(to_lower_ascii(current));
  return words;
}

void check_scaffold_text(const std::string& text,
                         const std::set<std::string>& job_words) {
  for (const std::string& word : words_of(text)) {
    if (scaffold_blocklist().count(word) || job_words.count(word)) {
      throw ValidationError("dialogue scaffold mentions blocked word '" +
                            word + "' in: " + text);
    }
  }
}

}  // namespace

void validate_scaffold(const DialogueScaffold& scaffold,
                       const std::vector<Job>& jobs) {
  if (scaffold.opener.empty())
    throw ValidationError("dialogue scaffold opener is empty");
  std::set<std::string> job_words;
  for (const Job& job : jobs) {
    for (const std::string& w : words_of(job.name)) job_words.insert(w);
  }
  check_scaffold_text(scaffold.opener, job_words);
  for (const auto& [question, answer] : scaffold.turns) {
    if (question.empty() || answer.empty())
      throw ValidationError("dialogue scaffold turn is empty");
    check_scaffold_text(question, job_words);
    check_scaffold_text(answer, job_words);
  }
}

RenderedCase render_case(const TaskPrompt& task, const Job& job,
                         const PromptLayout& layout) {
  if (job.name.empty()) throw ValidationError("job name is empty");
  if (task.question.find(kJobPlaceholder) == std::string::npos) {
    throw ValidationError("task " + std::to_string(task.id) +
                          " question is missing the [JOB] placeholder");
  }
  RenderedCase out;
  out.prefix = layout.question_marker + " " +
               substitute_job(task.question, job.name) + layout.line_separator +
               layout.answer_marker;
  if (!task.answer_prefix.empty()) {
    out.prefix += " " + substitute_job(task.answer_prefix, job.name);
  }
  out.continuations = task.continuations;
  out.provenance = {task.id, std::nullopt, Positioning::Inline, job.name};
  validate_case(out);
  return out;
}

namespace {

double parse_ratio(const std::string& field, std::size_t line_no) {
  std::size_t consumed = 0;
  double value = 0;
  try {
    value = std::stod(field, &consumed);
  } catch (const std::exception&) {
    throw ValidationError("jobs csv line " + std::to_string(line_no) +
                          ": '" + field + "' is not a number");
  }
  if (consumed != field.size()) {
    throw ValidationError("jobs csv line " + std::to_string(line_no) +
                          ": '" + field + "' is not a number");
  }
  if (value < 0.0 || value > 100.0) {
    throw ValidationError("jobs csv line " + std::to_string(line_no) +
                          ": ratio " + field + " outside [0, 100]");
  }
  return value;
}

}  // namespace

std::vector<Job> parse_jobs_csv(const std::string& text) {
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty()) throw ValidationError("jobs csv is empty");
  if (trim(lines[0]) != "name,male_ratio,female_ratio,group") {
    throw ValidationError(
        "jobs csv header must be 'name,male_ratio,female_ratio,group', got '" +
        lines[0] + "'");
  }
  std::vector<Job> jobs;
  std::unordered_set<std::string> names;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const std::size_t line_no = i + 1;
    if (trim(lines[i]).empty()) continue;
    std::vector<std::string> fields = split(lines[i], ',');
    if (fields.size() != 4) {
      throw ValidationError("jobs csv line " + std::to_string(line_no) +
                            ": expected 4 fields, got " +
                            std::to_string(fields.size()));
    }
    Job job;
    job.name = trim(fields[0]);
    if (job.name.empty()) {
      throw ValidationError("jobs csv line " + std::to_string(line_no) +
                            ": empty job name");
    }
    if (job.name != to_lower_ascii(job.name)) {
      throw ValidationError("jobs csv line " + std::to_string(line_no) +
                            ": job name '" + job.name + "' must be lowercase");
    }
    if (!names.insert(job.name).second) {
      throw ValidationError("jobs csv line " + std::to_string(line_no) +
                            ": duplicate job '" + job.name + "'");
    }
    job.male_ratio = parse_ratio(trim(fields[1]), line_no);
    job.female_ratio = parse_ratio(trim(fields[2]), line_no);
    const double sum = job.male_ratio + job.female_ratio;
    if (sum < 99.9 - 1e-9 || sum > 100.1 + 1e-9) {
      throw ValidationError("job '" + job.name + "': ratios sum to " +
                            format_full(sum) + ", expected 100 within 0.1");
    }
    job.group = job_group_from_string(trim(fields[3]));
    const JobGroup expected = job.female_ratio > job.male_ratio
                                  ? JobGroup::FemaleDominated
                                  : JobGroup::MaleDominated;
    if (job.group != expected) {
      throw ValidationError("job '" + job.name + "': group '" +
                            to_string(job.group) +
                            "' contradicts its ratios");
    }
    jobs.push_back(std::move(job));
  }
  if (jobs.empty()) throw ValidationError("jobs csv contains no jobs");
  return jobs;
}

namespace {

struct ConfigSection {
  std::string name;  // e.g. "task 2", "scaffold"
  std::map<std::string, std::string> values;
  std::size_t line_no = 0;
};

std::vector<ConfigSection> parse_sections(const std::string& text) {
  std::vector<ConfigSection> sections;
  const std::vector<std::string> lines = split_lines(text);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string line = trim(lines[i]);
    if (line.empty() || line.front() == '#') continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw ValidationError("catalog config line " + std::to_string(i + 1) +
                              ": unterminated section header");
      }
      sections.push_back({trim(line.substr(1, line.size() - 2)), {}, i + 1});
      continue;
    }
    std::size_t eq = line.find('=');
    if (eq == std::string::npos || sections.empty()) {
      throw ValidationError("catalog config line " + std::to_string(i + 1) +
                            ": expected 'key = value' inside a section");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (!sections.back().values.emplace(key, value).second) {
      throw ValidationError("catalog config line " + std::to_string(i + 1) +
                            ": duplicate key '" + key + "'");
    }
  }
  return sections;
}

std::string unescape(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i] == '\\' && i + 1 < s.size()) {
      char next = s[i + 1];
      if (next == 'n') {
        out.push_back('\n');
        ++i;
        continue;
      }
      if (next == 't') {
        out.push_back('\t');
        ++i;
        continue;
      }
    }
    out.push_back(s[i]);
  }
  return out;
}

std::vector<std::string> parse_list(const std::string& value) {
  std::vector<std::string> items;
  for (const std::string& raw : split(value, ',')) {
    std::string item = trim(raw);
    if (!item.empty()) items.push_back(std::move(item));
  }
  return items;
}

const std::string& require_key(const ConfigSection& section,
                               const std::string& key) {
  auto it = section.values.find(key);
  if (it == section.values.end()) {
    throw ValidationError("catalog section [" + section.name +
                          "] is missing key '" + key + "'");
  }
  return it->second;
}

Abstraction expected_abstraction(int debias_id) {
  if (debias_id <= 2) return Abstraction::High;
  if (debias_id <= 4) return Abstraction::Medium;
  return Abstraction::Low;
}

int parse_section_id(const std::string& section_name, const std::string& token) {
  try {
    std::size_t consumed = 0;
    int id = std::stoi(token, &consumed);
    if (consumed != token.size()) throw std::invalid_argument(token);
    return id;
  } catch (const std::exception&) {
    throw ValidationError("section [" + section_name +
                          "]: '" + token + "' is not an integer id");
  }
}

}  // namespace

const TaskPrompt& Catalog::task(int id) const {
  for (const TaskPrompt& t : tasks) {
    if (t.id == id) return t;
  }
  std::string valid;
  for (const TaskPrompt& t : tasks) {
    if (!valid.empty()) valid += ", ";
    valid += std::to_string(t.id);
  }
  throw ValidationError("unknown task id " + std::to_string(id) +
                        " (valid: " + valid + ")");
}

DebiasPrompt Catalog::debias(std::optional<int> id) const {
  if (!id.has_value()) return DebiasPrompt{std::nullopt, Abstraction::None, ""};
  for (const DebiasPrompt& d : debias_prompts) {
    if (d.id == id) return d;
  }
  std::string valid = "none";
  for (const DebiasPrompt& d : debias_prompts) {
    valid += ", " + std::to_string(*d.id);
  }
  throw ValidationError("unknown debias prompt id " + std::to_string(*id) +
                        " (valid: " + valid + ")");
}

const Job& Catalog::job(const std::string& name) const {
  for (const Job& j : jobs) {
    if (j.name == name) return j;
  }
  std::string valid;
  for (const Job& j : jobs) {
    if (!valid.empty()) valid += ", ";
    valid += j.name;
  }
  throw ValidationError("unknown job '" + name + "' (valid: " + valid + ")");
}

std::vector<Job> Catalog::jobs_in_group(JobGroup group) const {
  std::vector<Job> out;
  for (const Job& j : jobs) {
    if (j.group == group) out.push_back(j);
  }
  return out;
}

Catalog parse_catalog(const std::string& prompts_cfg_text,
                      const std::string& jobs_csv_text) {
  Catalog catalog;
  catalog.jobs = parse_jobs_csv(jobs_csv_text);

  bool scaffold_seen = false;
  CategoryMap<bool> verbalization_seen{false, false, false};
  std::vector<ConfigSection> task_sections;

  for (const ConfigSection& section : parse_sections(prompts_cfg_text)) {
    const std::vector<std::string> parts = split(section.name, ' ');
    const std::string& kind = parts[0];
    if (kind == "layout") {
      auto get = [&](const char* key, const std::string& fallback) {
        auto it = section.values.find(key);
        return it == section.values.end() ? fallback : unescape(it->second);
      };
      catalog.layout.question_marker = get("question_marker", "Q:");
      catalog.layout.answer_marker = get("answer_marker", "A:");
      catalog.layout.line_separator = get("line_separator", "\n");
    } else if (kind == "task") {
      if (parts.size() != 2) {
        throw ValidationError("bad task section header [" + section.name + "]");
      }
      task_sections.push_back(section);
    } else if (kind == "debias") {
      if (parts.size() != 2) {
        throw ValidationError("bad debias section header [" + section.name +
                              "]");
      }
      DebiasPrompt prompt;
      prompt.id = parse_section_id(section.name, parts[1]);
      if (*prompt.id < 1 || *prompt.id > 6) {
        throw ValidationError("debias prompt id must be in 1..6, got " +
                              parts[1]);
      }
      prompt.abstraction =
          abstraction_from_string(require_key(section, "abstraction"));
      if (prompt.abstraction != expected_abstraction(*prompt.id)) {
        throw ValidationError("debias prompt " + parts[1] +
                              ": abstraction '" +
                              to_string(prompt.abstraction) +
                              "' does not match its id band");
      }
      prompt.text = require_key(section, "text");
      if (prompt.text.empty()) {
        throw ValidationError("debias prompt " + parts[1] + " has empty text");
      }
      catalog.debias_prompts.push_back(std::move(prompt));
    } else if (kind == "verbalization") {
      if (parts.size() != 2) {
        throw ValidationError("bad verbalization section header [" +
                              section.name + "]");
      }
      VerbalizationSet set;
      set.category = gender_category_from_string(parts[1]);
      set.base_forms = parse_list(require_key(section, "forms"));
      auto it = section.values.find("expand_casings");
      set.expand_casings = it == section.values.end() || it->second != "false";
      const GenderCategory cat = set.category;
      at(catalog.verbalizations, cat) = std::move(set);
      at(verbalization_seen, cat) = true;
    } else if (kind == "scaffold") {
      catalog.scaffold.opener = require_key(section, "opener");
      catalog.scaffold.turns = {
          std::pair{require_key(section, "q1"), require_key(section, "a1")},
          std::pair{require_key(section, "q2"), require_key(section, "a2")},
          std::pair{require_key(section, "q3"), require_key(section, "a3")}};
      scaffold_seen = true;
    } else {
      throw ValidationError("unknown catalog section [" + section.name + "]");
    }
  }

  for (GenderCategory cat : kGenderCategories) {
    if (!at(verbalization_seen, cat)) {
      throw ValidationError("catalog is missing the '" + to_string(cat) +
                            "' verbalization set");
    }
  }
  if (!scaffold_seen) throw ValidationError("catalog is missing [scaffold]");

  for (const ConfigSection& section : task_sections) {
    TaskPrompt task;
    task.id = parse_section_id(section.name, split(section.name, ' ')[1]);
    if (task.id < 1 || task.id > 4) {
      throw ValidationError("task id must be in 1..4, got " + section.name);
    }
    task.mode = task_mode_from_string(require_key(section, "mode"));
    task.question = require_key(section, "question");
    auto answer_it = section.values.find("answer");
    task.answer_prefix =
        answer_it == section.values.end() ? "" : answer_it->second;
    if (task.question.find(kJobPlaceholder) == std::string::npos) {
      throw ValidationError("task " + std::to_string(task.id) +
                            " question is missing the [JOB] placeholder");
    }
    if (!task.answer_prefix.empty() &&
        task.answer_prefix.find(kJobPlaceholder) == std::string::npos) {
      throw ValidationError("task " + std::to_string(task.id) +
                            " answer prefix is missing the [JOB] placeholder");
    }
    if (task.mode == TaskMode::ExplicitWord) {
      for (GenderCategory cat : kGenderCategories) {
        at(task.continuations, cat) =
            expand_verbalizations(at(catalog.verbalizations, cat));
      }
    } else {
      for (GenderCategory cat : kGenderCategories) {
        std::vector<std::string> words =
            parse_list(require_key(section, to_string(cat)));
        if (words.empty()) {
          throw ValidationError("task " + std::to_string(task.id) +
                                ": empty continuation list for '" +
                                to_string(cat) + "'");
        }
        std::vector<std::string>& conts = at(task.continuations, cat);
        for (const std::string& w : words)
          conts.push_back(with_single_leading_space(w));
      }
    }
    for (const TaskPrompt& existing : catalog.tasks) {
      if (existing.id == task.id) {
        throw ValidationError("duplicate task id " + std::to_string(task.id));
      }
    }
    catalog.tasks.push_back(std::move(task));
  }
  if (catalog.tasks.empty()) throw ValidationError("catalog has no tasks");

  std::sort(catalog.tasks.begin(), catalog.tasks.end(),
            [](const TaskPrompt& a, const TaskPrompt& b) { return a.id < b.id; });
  std::sort(catalog.debias_prompts.begin(), catalog.debias_prompts.end(),
            [](const DebiasPrompt& a, const DebiasPrompt& b) {
              return *a.id < *b.id;
            });
  for (std::size_t i = 1; i < catalog.debias_prompts.size(); ++i) {
    if (*catalog.debias_prompts[i].id == *catalog.debias_prompts[i - 1].id) {
      throw ValidationError("duplicate debias prompt id " +
                            std::to_string(*catalog.debias_prompts[i].id));
    }
  }

  validate_scaffold(catalog.scaffold, catalog.jobs);
  return catalog;
}

Catalog builtin_catalog() {
  return parse_catalog(builtin::kPromptsCfg, builtin::kJobsCsv);
}

}  // namespace biaslens
