#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stepwise/active_learning.hpp"
#include "stepwise/eval_harness.hpp"
#include "stepwise/micro_model.hpp"
#include "stepwise/scoring.hpp"
#include "stepwise/supervision.hpp"
#include "stepwise/synthetic_task.hpp"

namespace stepwise::experiment {

struct ExperimentConfig {
  std::size_t train_problems = 500;
  std::size_t test_problems = 100;
  synth::LengthRange lengths;
  double step_error_rate = 0.15;
  double compensating_error_rate = 0.05;
  // Training samples per problem; each size is a prefix of the next.
  std::vector<std::size_t> dataset_sizes = {1, 2, 5, 10, 20, 50, 100, 200};
  std::size_t test_pool_size = 100;
  std::vector<std::size_t> best_of = {1, 2, 5, 10, 20, 50, 100};
  std::size_t m_subsamples = 100;
  std::size_t feature_dim = 1u << 16;
  double negative_threshold = 0.20;
  scoring::ScoringConfig scoring;
  std::vector<supervision::SupervisionKind> kinds = {supervision::SupervisionKind::process_oracle,
                                                     supervision::SupervisionKind::outcome_oracle,
                                                     supervision::SupervisionKind::outcome_final_answer};
  std::uint64_t seed = 7;
  std::size_t threads = 1;

  void validate() const;
  json to_json() const;
  // Overlays the keys present in `j` onto `base`.
  static ExperimentConfig from_json(const json& j, ExperimentConfig base);
  static ExperimentConfig from_json(const json& j);
};

// Problems, samples and the oracle for one seed.
struct SyntheticWorld {
  std::vector<synth::ChainProblem> train;
  std::vector<synth::ChainProblem> test;
  std::vector<Problem> train_problems;
  std::vector<Problem> test_problems;
  rm::StatementIndex statements;

  static SyntheticWorld build(const ExperimentConfig& cfg);
  synth::NoisySolverConfig solver(const ExperimentConfig& cfg) const;
  // Samples [first, first + n) for every training problem, in problem order.
  std::vector<SolutionRecord> train_samples(const ExperimentConfig& cfg, std::size_t first, std::size_t n) const;
};

// Trains the micro model for one supervision kind on `samples`.
rm::MicroModel train_for_kind(supervision::SupervisionKind kind, const SyntheticWorld& world,
                              const std::vector<SolutionRecord>& samples, const ExperimentConfig& cfg);

eval::Method method_for(supervision::SupervisionKind kind);

// Test pool with prm_score from `process_model` and orm_score from
// `outcome_model` (either may be empty, leaving that score at 0).
eval::EvalPool score_test_pool(const SyntheticWorld& world, const ExperimentConfig& cfg,
                               const rm::MicroModel& process_model, const rm::MicroModel& outcome_model);

// Best-of-N accuracy per kind at one dataset size.
std::map<supervision::SupervisionKind, eval::CurveSeries> run_at_size(const SyntheticWorld& world,
                                                                      const ExperimentConfig& cfg,
                                                                      std::size_t samples_per_problem);

// Full grid: one curve per kind x dataset size, a majority-vote baseline,
// and per-kind accuracy-vs-size summaries in the metadata. With a
// checkpoint_dir, finished cells are stored and reused on the next call.
eval::Report run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint_dir = {});

struct ActiveLearningConfig {
  ExperimentConfig base;
  std::size_t selector_samples = 1;  // uniform samples per problem for the selector PRM
  std::size_t pool_per_problem = 50;
  std::vector<std::size_t> selected_per_problem = {4};
  std::size_t eval_n = 20;

  void validate() const;
  json to_json() const;
};

struct ActiveLearningPoint {
  std::size_t selected_per_problem = 0;
  std::size_t dataset_size = 0;  // labeled solutions, selector data included
  double mixed_accuracy = 0.0;
  double uniform_accuracy = 0.0;
};

struct ActiveLearningResult {
  std::vector<ActiveLearningPoint> points;
  std::optional<active::EfficiencyEstimate> efficiency;  // when at least two sizes

  json to_json() const;
};

ActiveLearningResult run_active_learning(const ActiveLearningConfig& cfg);

}  // namespace stepwise::experiment
