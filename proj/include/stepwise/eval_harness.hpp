#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "stepwise/core.hpp"

namespace stepwise::eval {

enum class Method { prm, orm, majority, rm_weighted };
std::string_view to_string(Method m);
Method parse_method(std::string_view text);
std::vector<Method> parse_methods(std::string_view comma_list);

struct PoolEntry {
  std::string solution_id;
  CanonicalAnswer answer;
  bool correct = false;
  double prm_score = 0.0;
  double orm_score = 0.0;
};

struct ProblemPool {
  std::string problem_id;
  std::optional<std::string> subject;
  std::optional<int> level;
  std::vector<PoolEntry> entries;

  double pass_rate() const;
};

struct EvalPool {
  std::vector<ProblemPool> problems;

  // Smallest per-problem sample count.
  std::size_t pool_size() const;

  // JSONL, one solution per line: problem_id, solution_id, final_answer,
  // prm_score, orm_score, and either correct or ground_truth; optional
  // subject and level.
  static EvalPool load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

struct CurvePoint {
  std::size_t n = 0;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  std::size_t n_subsamples = 0;
  bool exhaustive = false;

  bool operator==(const CurvePoint&) const = default;
};

struct CurveOptions {
  std::size_t m_subsamples = 100;
  std::uint64_t seed = 0;
  std::size_t threads = 1;
  // Enumerate every subset when C(pool, n) is at most this for all problems.
  std::uint64_t exhaustive_limit = 10000;
};

// Selected entry index for a subset of a problem's pool under `method`.
std::size_t select_in_subset(const ProblemPool& problem, const std::vector<std::size_t>& subset, Method method);

// Mean and standard deviation of per-draw accuracy over problems. Exhaustive
// mode reports the exact mean over all subsets and the exact standard
// deviation of the per-draw accuracy; Monte-Carlo mode draws m_subsamples
// subsets per problem from seeded per-problem streams.
CurvePoint best_of_n_accuracy(const EvalPool& pool, std::size_t n, Method method, const CurveOptions& options = {});

// Problem ids, easiest-last: ascending (pass_rate, problem_id), five
// contiguous buckets with remainders going to the lowest buckets.
std::array<std::vector<std::string>, 5> difficulty_quintiles(const EvalPool& pool);
EvalPool subset_pool(const EvalPool& pool, const std::vector<std::string>& problem_ids);

struct OodRow {
  std::string subject;
  std::vector<double> accuracy;  // one per method, in table order
  std::size_t n_problems = 0;

  bool operator==(const OodRow&) const = default;
};

struct OodTable {
  std::vector<Method> methods;
  std::vector<OodRow> rows;  // per subject (sorted), then "Aggregate"
  std::vector<std::string> warnings;

  bool operator==(const OodTable&) const = default;
};

// Best-of-pool accuracy per subject and method; problems without a subject
// fall under "unspecified".
OodTable ood_eval(const EvalPool& pool, const std::vector<Method>& methods);

struct CurveSeries {
  std::string method;
  std::string label;  // free-form series tag, e.g. a supervision kind
  std::vector<CurvePoint> points;

  bool operator==(const CurveSeries&) const = default;
};

struct Report {
  std::vector<CurveSeries> curves;
  std::vector<OodTable> tables;
  json metadata = json::object();

  bool operator==(const Report&) const = default;
};

json to_json(const Report& report);
Report report_from_json(const json& j);

// Writes curves.csv (n,method,mean,std[,label]), report.json and, when
// present, ood.csv. Returns the written paths. Throws on empty results.
std::vector<std::filesystem::path> emit_report(const Report& report, const std::filesystem::path& dir);

}  // namespace stepwise::eval
