#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/features.hpp"
#include "stepwise/rational.hpp"
#include "stepwise/reward_models.hpp"

namespace stepwise::synth {

struct ChainOp {
  rm::ArithmeticOp op = rm::ArithmeticOp::add;
  std::int64_t operand = 0;
};

// A start value and a list of operations whose exact running values are the
// ground-truth trace.
struct ChainProblem {
  std::string id;
  std::int64_t start_value = 0;
  std::vector<ChainOp> ops;
  std::vector<Rational> trace;  // value after each op
  Split split = Split::train;

  std::string statement() const;
  Rational answer() const { return trace.back(); }
  Problem to_problem() const;
  // Recomputes the trace and checks exact division; throws on violation.
  void validate() const;
};

struct LengthRange {
  std::size_t min = 3;
  std::size_t max = 12;
};

std::vector<ChainProblem> generate_problems(std::size_t count, LengthRange lengths, std::uint64_t seed,
                                            const std::string& id_prefix = "chain", Split split = Split::train);

struct NoisySolverConfig {
  double step_error_rate = 0.0;         // per-step perturbation probability
  double compensating_error_rate = 0.0;  // per-solution probability of a perturb-then-cancel pair
  std::uint64_t seed = 0;

  void validate() const;
};

// One step per op, each "<previous> <op> <operand> = <value>". Perturbed
// values are off by a small nonzero delta and never coincide with the ground
// truth, so uncompensated errors always reach the final answer.
SolutionRecord solve_noisy(const ChainProblem& problem, const NoisySolverConfig& cfg,
                           const std::string& solution_id = "", std::uint32_t generation = 0);

// n solutions with per-sample seeds derived from cfg.seed and the problem id.
std::vector<SolutionRecord> sample_solutions(const ChainProblem& problem, const NoisySolverConfig& cfg, std::size_t n,
                                             std::size_t first_index = 0);

struct StepLabelResult {
  std::vector<StepLabel> labels;
  std::vector<std::string> diagnostics;
};

// Step i is negative iff its stated value differs from op i applied to the
// stated value of step i-1 (the start value for the first step).
StepLabelResult label_steps(const SolutionRecord& solution, const ChainProblem& problem);

double pass_rate(const ChainProblem& problem, const NoisySolverConfig& cfg, std::size_t n_samples, std::uint64_t seed);

// Programmatic process scorer: (1,0,0) for steps label_steps calls positive,
// (0,0,1) otherwise.
class ChainOracle final : public rm::ProcessScorer {
 public:
  explicit ChainOracle(const std::vector<ChainProblem>& problems);
  void add(const ChainProblem& problem);
  StepProbabilities score(const Problem& problem, const SolutionRecord& solution) const override;

 private:
  std::map<std::string, ChainProblem> problems_;
};

}  // namespace stepwise::synth
