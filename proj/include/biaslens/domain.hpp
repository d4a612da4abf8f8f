#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "biaslens/errors.hpp"

namespace biaslens {

inline constexpr const char* kJobPlaceholder = "[JOB]";

enum class GenderCategory { Male, Female, Diverse };

inline constexpr std::array<GenderCategory, 3> kGenderCategories = {
    GenderCategory::Male, GenderCategory::Female, GenderCategory::Diverse};

constexpr std::size_t category_index(GenderCategory c) {
  return static_cast<std::size_t>(c);
}

/// One slot per gender category, always exactly three.
template <typename T>
using CategoryMap = std::array<T, 3>;

template <typename T>
T& at(CategoryMap<T>& map, GenderCategory c) {
  return map[category_index(c)];
}
template <typename T>
const T& at(const CategoryMap<T>& map, GenderCategory c) {
  return map[category_index(c)];
}

std::string to_string(GenderCategory c);
GenderCategory gender_category_from_string(const std::string& s);

enum class JobGroup { FemaleDominated, MaleDominated };
std::string to_string(JobGroup g);
JobGroup job_group_from_string(const std::string& s);

/// Where a debiasing prompt sits: inside the task instruction, or at the
/// start of a scaffolded conversation ("with dialogue" in reports).
enum class Positioning { Inline, Dialogue };
std::string to_string(Positioning p);
Positioning positioning_from_string(const std::string& s);

enum class TaskMode { ExplicitWord, SubjectPronoun, ObjectPronoun };
std::string to_string(TaskMode m);
TaskMode task_mode_from_string(const std::string& s);

enum class Abstraction { None, High, Medium, Low };
std::string to_string(Abstraction a);
Abstraction abstraction_from_string(const std::string& s);

/// Surface strings expressing one gender category, before case expansion.
struct VerbalizationSet {
  GenderCategory category = GenderCategory::Male;
  std::vector<std::string> base_forms;
  bool expand_casings = true;
};

/// Expands base forms into scoreable continuations: each form in its listed
/// capitalization plus (when enabled) its lowercased variant, pairs adjacent,
/// duplicates dropped, every string carrying exactly one leading space.
std::vector<std::string> expand_verbalizations(const VerbalizationSet& set);

struct TaskPrompt {
  int id = 0;
  TaskMode mode = TaskMode::ExplicitWord;
  std::string question;       // contains [JOB] at least once
  std::string answer_prefix;  // empty for the bare-answer prompt
  CategoryMap<std::vector<std::string>> continuations;
};

struct DebiasPrompt {
  std::optional<int> id;  // nullopt = no debiasing prompt (baseline)
  Abstraction abstraction = Abstraction::None;
  std::string text;
};

struct Job {
  std::string name;
  double male_ratio = 0.0;
  double female_ratio = 0.0;
  JobGroup group = JobGroup::FemaleDominated;
};

/// Q/A scaffolding glue; kept in catalog data so the layout can change
/// without a rebuild.
struct PromptLayout {
  std::string question_marker = "Q:";
  std::string answer_marker = "A:";
  std::string line_separator = "\n";
};

struct Provenance {
  int task_id = 0;
  std::optional<int> debias_id;
  Positioning positioning = Positioning::Inline;
  std::string job;

  friend bool operator==(const Provenance&, const Provenance&) = default;
};

/// A scoring-ready prompt: the conditioning prefix plus the continuation
/// strings whose probabilities are summed per category.
struct RenderedCase {
  std::string prefix;
  CategoryMap<std::vector<std::string>> continuations;
  Provenance provenance;
};

/// Throws ValidationError unless prefix is non-empty, every category has at
/// least one continuation, each continuation begins with exactly one space,
/// and no string repeats across categories.
void validate_case(const RenderedCase& c);

struct DialogueScaffold {
  std::string opener;
  std::array<std::pair<std::string, std::string>, 3> turns;  // (question, answer)
};

/// Rejects scaffolds mentioning gender, pronouns referring to people, or any
/// occupation word (including the given job names). Word-boundary matching.
void validate_scaffold(const DialogueScaffold& scaffold,
                       const std::vector<Job>& jobs);

struct Catalog {
  PromptLayout layout;
  std::vector<TaskPrompt> tasks;                 // ascending id
  std::vector<DebiasPrompt> debias_prompts;      // ascending id, 1..6
  CategoryMap<VerbalizationSet> verbalizations;  // male, female, diverse
  std::vector<Job> jobs;
  DialogueScaffold scaffold;

  const TaskPrompt& task(int id) const;
  /// nullopt yields the empty baseline prompt.
  DebiasPrompt debias(std::optional<int> id) const;
  const Job& job(const std::string& name) const;
  std::vector<Job> jobs_in_group(JobGroup group) const;
};

/// Substitutes the job into the task template and assembles the Table-style
/// Q/A prefix. The prefix ends flush after the last printed character; the
/// continuations carry the leading space.
RenderedCase render_case(const TaskPrompt& task, const Job& job,
                         const PromptLayout& layout = {});

std::vector<Job> parse_jobs_csv(const std::string& text);
Catalog parse_catalog(const std::string& prompts_cfg_text,
                      const std::string& jobs_csv_text);

/// The shipped catalogs: 4 task prompts, 6 debiasing prompts, 3 verbalization
/// sets, 40 jobs, and the dialogue scaffold.
Catalog builtin_catalog();

}  // namespace biaslens
