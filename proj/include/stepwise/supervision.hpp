#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/reward_models.hpp"

namespace stepwise::supervision {

enum class Verdict { correct, incorrect };

enum class SupervisionKind { process_oracle, outcome_oracle, outcome_final_answer };
std::string_view to_string(SupervisionKind kind);
SupervisionKind parse_supervision_kind(std::string_view text);

struct OracleConfig {
  double negative_threshold = 0.20;
  const rm::ProcessScorer* oracle = nullptr;

  // Throws unless the threshold is strictly inside (0,1) and an oracle is set.
  void validate() const;
};

class OracleError : public std::runtime_error {
 public:
  OracleError(const std::string& solution_id, std::size_t step, const std::string& what)
      : std::runtime_error("oracle failed on " + solution_id + " step " + std::to_string(step) + ": " + what),
        step_(step) {}
  std::size_t step() const { return step_; }

 private:
  std::size_t step_;
};

// A step is incorrect iff its negative probability is strictly above the
// threshold; neutral mass never counts.
std::vector<Verdict> verdicts_from_probabilities(const StepProbabilities& probs, double negative_threshold);

std::vector<Verdict> oracle_step_verdicts(const Problem& problem, const SolutionRecord& solution,
                                          const OracleConfig& cfg);

// Positive up to the first incorrect step, which is emitted as negative and
// ends the sequence.
std::vector<StepLabel> process_labels_from_verdicts(const std::vector<Verdict>& verdicts);

std::vector<StepLabel> synth_process_labels(const Problem& problem, const SolutionRecord& solution,
                                            const OracleConfig& cfg);
bool synth_outcome_label(const Problem& problem, const SolutionRecord& solution, const OracleConfig& cfg);

// Grades the final answer only. Throws std::invalid_argument when the problem
// has no ground truth.
bool final_answer_outcome_label(const SolutionRecord& solution, const Problem& problem);

}  // namespace stepwise::supervision
