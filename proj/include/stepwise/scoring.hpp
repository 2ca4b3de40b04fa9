#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "stepwise/core.hpp"

namespace stepwise::scoring {

enum class NeutralPolicy { as_positive, as_negative };
enum class Reduction { product, minimum };

struct ScoringConfig {
  NeutralPolicy neutral_policy = NeutralPolicy::as_positive;
  Reduction reduction = Reduction::product;

  bool operator==(const ScoringConfig&) const = default;
};

// "pos"/"neg" and "product"/"min", matching --neutral / --reduction.
NeutralPolicy parse_neutral_policy(std::string_view text);
Reduction parse_reduction(std::string_view text);
std::string_view to_string(NeutralPolicy p);
std::string_view to_string(Reduction r);

class ScoredSolution {
 public:
  // Rejects non-finite or out-of-range scores.
  ScoredSolution(std::string solution_id, double score, std::vector<double> per_step_scores = {});

  const std::string& solution_id() const { return solution_id_; }
  double score() const { return score_; }
  const std::vector<double>& per_step_scores() const { return per_step_scores_; }

 private:
  std::string solution_id_;
  double score_;
  std::vector<double> per_step_scores_;
};

class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

double step_score(const StepProb& p, const ScoringConfig& cfg);
double reduce(std::span<const double> step_scores, Reduction reduction);
ScoredSolution solution_score(std::string solution_id, const StepProbabilities& steps, const ScoringConfig& cfg);
double orm_score(double final_prediction);

// Highest score; ties go to the lexicographically smallest id.
std::string best_of_n(std::span<const ScoredSolution> candidates);

struct VoteCandidate {
  std::string_view solution_id;
  const CanonicalAnswer* answer = nullptr;
  double weight = 1.0;
};

struct VoteResult {
  CanonicalAnswer answer;
  double weight = 0.0;
  std::size_t count = 0;
};

// Groups by canonical answer and picks the group with the largest summed
// weight. Ties fall to the larger group, then to the group holding the
// lexicographically smallest solution id. Sums are taken in id order so the
// result does not depend on candidate order.
VoteResult weighted_vote(std::span<const VoteCandidate> candidates);

CanonicalAnswer majority_vote(std::span<const SolutionRecord> candidates);
CanonicalAnswer rm_weighted_vote(std::span<const SolutionRecord> candidates, std::span<const double> scores);

}  // namespace stepwise::scoring
