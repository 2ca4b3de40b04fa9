#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "stepwise/core.hpp"

namespace stepwise::dataset {

struct LabeledSolution {
  SolutionRecord solution;
  std::vector<StepLabel> step_labels;
  std::string labeler_id;
  bool is_quality_control = false;
  bool completed = true;

  bool operator==(const LabeledSolution&) const = default;
};

// Source rating value (as its compact JSON text, e.g. "-1" or "\"positive\"")
// to label.
class RatingMap {
 public:
  // -1 -> negative, 0 -> neutral, 1 -> positive, plus the label names.
  static RatingMap defaults();
  // "-1:negative,0:neutral,1:positive"
  static RatingMap parse(std::string_view spec);

  void set(const json& source_value, StepLabel label);
  std::optional<StepLabel> lookup(const json& source_value) const;

 private:
  std::map<std::string, StepLabel> table_;
};

// Where each field lives in a source record, as JSON pointers. Step-relative
// pointers are resolved against each element of the `steps` array.
struct FieldMapping {
  std::string solution_id;          // empty: "<file stem>:<line>"
  std::string problem_id;           // empty: derived from problem text
  std::string problem_text;
  std::string ground_truth;
  std::string labeler;
  std::string is_quality_control;
  std::vector<std::string> extra_qc_flags;  // any true flag marks the record QC
  std::string generation;
  std::string phase;                // empty: use default_phase
  int default_phase = 2;
  std::string finish_reason;        // empty: every record counts as completed
  std::vector<std::string> completed_values;
  std::string steps;
  // Within a step: an array of alternatives and a pointer to the chosen
  // index. Empty completions pointer means the step object itself holds
  // text and rating.
  std::string step_completions;
  std::string step_chosen_index;
  std::string step_text;
  std::string step_rating;
  std::string step_human_text;  // used when no completion was chosen
  std::string human_rating;     // source rating value assigned to human-written steps
  std::string generator_id;

  // The public PRM800K release layout.
  static FieldMapping prm800k();
  static FieldMapping from_json(const json& j);
  json to_json() const;
};

struct Diagnostic {
  std::size_t line = 0;
  std::string message;
};

struct ImportResult {
  std::vector<LabeledSolution> records;
  std::vector<Diagnostic> diagnostics;
  std::vector<Problem> problems;  // one per distinct problem seen, in first-seen order
};

// Canonical schema: {"solution": {...}, "step_labels": [...], "labeler_id",
// "is_quality_control", "completed"}. Labels may be names or source ratings.
ImportResult import_canonical(std::istream& in, const RatingMap& ratings);
ImportResult import_mapped(std::istream& in, const FieldMapping& mapping, const RatingMap& ratings,
                           const std::string& source_name = "line");

enum class Schema { canonical, mapped };
ImportResult import_labeled(const std::filesystem::path& path, Schema schema, const RatingMap& ratings,
                            const FieldMapping& mapping = FieldMapping::prm800k());

json to_json(const LabeledSolution& s);
LabeledSolution labeled_from_json(const json& j, const RatingMap& ratings);

// One record per line, keys sorted, no trailing spaces.
void export_labeled(std::ostream& out, const std::vector<LabeledSolution>& data);

std::vector<LabeledSolution> filter_training(const std::vector<LabeledSolution>& data);

struct Counts {
  std::size_t n_step_labels = 0;
  std::size_t n_solutions = 0;
  std::size_t n_problems = 0;
  std::size_t n_end_correct = 0;
  std::size_t n_graded = 0;
  std::size_t n_correct_steps = 0;

  // nullopt when there is nothing to divide by.
  std::optional<double> pct_end_correct() const;
  std::optional<double> pct_correct_steps() const;
};

struct DatasetStats {
  Counts combined;
  std::map<int, Counts> per_phase;
  bool neutral_counts_correct = true;

  json to_json() const;
};

DatasetStats compute_stats(const std::vector<LabeledSolution>& data, bool neutral_counts_correct = true);

// Plain problem / solution JSONL.
std::vector<Problem> read_problems(const std::filesystem::path& path);
std::vector<SolutionRecord> read_solutions(const std::filesystem::path& path);
void write_problems(const std::filesystem::path& path, const std::vector<Problem>& problems);
void write_solutions(const std::filesystem::path& path, const std::vector<SolutionRecord>& solutions);
void write_diagnostics(const std::filesystem::path& path, const std::vector<Diagnostic>& diagnostics);

}  // namespace stepwise::dataset
