#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/dataset_io.hpp"
#include "stepwise/micro_model.hpp"
#include "stepwise/reward_models.hpp"
#include "stepwise/scoring.hpp"

namespace stepwise::active {

struct PoolCandidate {
  std::string solution_id;
  std::string problem_id;
  double score = 0.0;
  bool is_correct = false;
};

enum class Scope { per_problem, global };
enum class SelectionMode { uniform, topk_per_problem, topk_global, mixed_80_20 };

std::string_view to_string(SelectionMode mode);
SelectionMode parse_selection_mode(std::string_view text);

struct SelectionPolicy {
  SelectionMode mode = SelectionMode::mixed_80_20;
  std::size_t k_or_n = 1;
  double wrong_answer_fraction = 0.80;
  std::size_t pool_size_per_problem = 1000;
  std::uint64_t seed = 0;  // uniform mode only

  void validate() const;
  json to_json() const;
};

struct Selected {
  std::string solution_id;
  std::string reason;
};

// Score descending, then solution id ascending.
bool more_convincing(const PoolCandidate& a, const PoolCandidate& b);

// Highest-scoring wrong-answer candidates: k per problem or k overall.
std::vector<std::string> surface_convincing_wrong(std::span<const PoolCandidate> pool, std::size_t k, Scope scope);

// round(fraction * n) (half up) most convincing wrong answers, then the most
// convincing of everything left until n are chosen.
std::vector<Selected> select_mixed(std::span<const PoolCandidate> pool, std::size_t n, const SelectionPolicy& policy);

// Applies `policy` to a multi-problem pool; per-problem modes select k_or_n
// from each problem.
std::vector<Selected> select(std::span<const PoolCandidate> pool, const SelectionPolicy& policy);

std::size_t round_half_up(double x);

struct EfficiencySeries {
  std::string label;
  std::vector<std::pair<double, double>> points;  // (dataset size, performance)

  void validate() const;
};

struct EfficiencyEstimate {
  double factor = 1.0;  // data multiplier b needs to match a
  double pooled_slope = 0.0;
  double intercept_a = 0.0;
  double intercept_b = 0.0;
  double slope_a = 0.0;
  double slope_b = 0.0;
};

class EfficiencyError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Fits performance = intercept_s + slope * log10(size) with one slope shared
// by both series and returns the horizontal shift between the lines.
EfficiencyEstimate estimate_data_efficiency(const EfficiencySeries& a, const EfficiencySeries& b);

struct GenerationLoopConfig {
  std::size_t n_generations = 1;
  SelectionPolicy policy;  // k_or_n = samples selected per problem per generation
  std::uint64_t seed = 0;
  scoring::ScoringConfig scoring;
  std::filesystem::path checkpoint_dir;  // empty: no checkpoints
  std::filesystem::path audit_path;      // empty: no audit trail
};

struct GenerationHooks {
  // Candidate solutions for a generation; each must carry is_correct.
  std::function<std::vector<SolutionRecord>(std::size_t generation)> sample_pool;
  // Selector for the current model; nullopt before the first retrain.
  std::function<std::unique_ptr<rm::ProcessScorer>(const std::optional<rm::MicroModel>&)> scorer_factory;
  std::function<dataset::LabeledSolution(const SolutionRecord&)> label;
  std::function<rm::MicroModel(const std::vector<dataset::LabeledSolution>&)> train;
  // Called at each stage boundary ("sample", "select", "label", "train").
  std::function<void(std::size_t generation, std::string_view stage)> on_stage;
};

struct GenerationResult {
  std::size_t generation = 0;
  rm::MicroModel model;
  std::vector<std::string> selected;
  std::size_t dataset_size = 0;
};

struct GenerationLoopResult {
  std::vector<GenerationResult> generations;
  std::vector<dataset::LabeledSolution> dataset;
};

class GenerationError : public std::runtime_error {
 public:
  GenerationError(std::size_t generation, const std::string& what)
      : std::runtime_error("generation " + std::to_string(generation) + " aborted: " + what), generation_(generation) {}
  std::size_t generation() const { return generation_; }

 private:
  std::size_t generation_;
};

// sample -> rank with the current selector -> select -> label -> retrain on
// everything labeled so far. With a checkpoint_dir, completed generations are
// persisted and a later call resumes after the last one.
GenerationLoopResult generation_loop(const GenerationLoopConfig& config, const std::vector<Problem>& problems,
                                     const GenerationHooks& hooks);

}  // namespace stepwise::active
