#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "stepwise/rational.hpp"

namespace stepwise {

using json = nlohmann::json;

enum class Split { train, test, ood };

struct Problem {
  std::string id;
  std::string statement;
  std::string ground_truth_answer;
  std::optional<std::string> subject;
  std::optional<int> difficulty_level;  // 1-5; absent for OOD problems
  Split split = Split::train;
};

struct SolutionSource {
  std::string generator_id;
  int phase = 2;
  std::uint32_t generation = 0;

  bool operator==(const SolutionSource&) const = default;
};

struct SolutionRecord {
  std::string id;
  std::string problem_id;
  std::vector<std::string> steps;
  std::string final_answer;
  std::optional<bool> is_correct;
  SolutionSource source;

  bool operator==(const SolutionRecord&) const = default;
};

// Builds a record with final_answer extracted from the steps and, when a
// ground truth is given, is_correct graded against it. Throws
// std::invalid_argument on an empty step list.
SolutionRecord make_solution(std::string id, std::string problem_id, std::vector<std::string> steps,
                             SolutionSource source,
                             const std::optional<std::string>& ground_truth = std::nullopt);

enum class StepLabel { positive, neutral, negative };

std::string_view to_string(StepLabel label);
std::optional<StepLabel> parse_step_label(std::string_view text);

struct StepProb {
  double p_positive = 1.0;
  double p_neutral = 0.0;
  double p_negative = 0.0;

  bool operator==(const StepProb&) const = default;
};

// One triple per step.
using StepProbabilities = std::vector<StepProb>;

inline constexpr double kProbabilityTolerance = 1e-9;

// True when every entry is finite, non-negative and sums to 1 within tol.
bool is_valid(const StepProb& p, double tol = kProbabilityTolerance);

// Throws std::invalid_argument naming the offending step.
void validate(const StepProbabilities& probs, std::size_t expected_steps);

struct CanonicalAnswer {
  enum class Kind { exact_rational, normalized_string };

  Kind kind = Kind::normalized_string;
  Rational rational;
  std::string text;

  bool operator==(const CanonicalAnswer& o) const;
  // Total order used for grouping; rationals sort before strings.
  bool operator<(const CanonicalAnswer& o) const;

  std::string render() const;
};

std::string extract_final_answer(const std::vector<std::string>& steps);
CanonicalAnswer canonicalize(std::string_view answer);
bool grade_answer(std::string_view candidate, std::string_view ground_truth);

std::string trim(std::string_view s);

// Canonical JSON forms. Field names follow the record definitions above.
json to_json(const Problem& p);
json to_json(const SolutionRecord& s);
Problem problem_from_json(const json& j);
SolutionRecord solution_from_json(const json& j);

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

}  // namespace stepwise
