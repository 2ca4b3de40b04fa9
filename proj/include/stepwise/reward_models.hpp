#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "stepwise/core.hpp"
#include "stepwise/dataset_io.hpp"
#include "stepwise/features.hpp"
#include "stepwise/micro_model.hpp"

namespace stepwise::rm {

class ProcessScorer {
 public:
  virtual ~ProcessScorer() = default;
  // One valid triple per step.
  virtual StepProbabilities score(const Problem& problem, const SolutionRecord& solution) const = 0;
};

class OutcomeScorer {
 public:
  virtual ~OutcomeScorer() = default;
  // Probability in [0,1] that the solution is correct.
  virtual double score(const Problem& problem, const SolutionRecord& solution) const = 0;
};

// Fixture scores keyed by solution id.
class TabularProcessScorer final : public ProcessScorer {
 public:
  explicit TabularProcessScorer(std::map<std::string, StepProbabilities> table);
  // JSONL of {"solution_id", "steps": [{"p_positive", "p_neutral", "p_negative"}]}.
  static TabularProcessScorer load(const std::filesystem::path& path);

  StepProbabilities score(const Problem& problem, const SolutionRecord& solution) const override;

 private:
  std::map<std::string, StepProbabilities> table_;
};

class TabularOutcomeScorer final : public OutcomeScorer {
 public:
  explicit TabularOutcomeScorer(std::map<std::string, double> table);
  double score(const Problem& problem, const SolutionRecord& solution) const override;

 private:
  std::map<std::string, double> table_;
};

class MicroProcessScorer final : public ProcessScorer {
 public:
  explicit MicroProcessScorer(MicroModel model);
  StepProbabilities score(const Problem& problem, const SolutionRecord& solution) const override;
  const MicroModel& model() const { return model_; }

 private:
  MicroModel model_;
  Featurizer featurizer_;
};

// Solution score is the positive-class probability at the final step.
class MicroOutcomeScorer final : public OutcomeScorer {
 public:
  explicit MicroOutcomeScorer(MicroModel model);
  double score(const Problem& problem, const SolutionRecord& solution) const override;
  const MicroModel& model() const { return model_; }

 private:
  MicroModel model_;
  Featurizer featurizer_;
};

StepProb to_step_prob(const ClassProbs& p);

// problem_id -> statement; unknown ids featurize with an empty statement.
using StatementIndex = std::unordered_map<std::string, std::string>;
StatementIndex index_statements(const std::vector<Problem>& problems);

// Called with (solution id, step index) for every label the PRM trainer reads.
using LabelReadObserver = std::function<void(const std::string&, std::size_t)>;

// Step examples up to and including the first negative label.
std::vector<Example> prm_examples(const std::vector<dataset::LabeledSolution>& data, const StatementIndex& statements,
                                  const Featurizer& featurizer, const LabelReadObserver& observer = {});

// Every step carries the solution label: class 0 when correct, 2 otherwise.
std::vector<Example> orm_examples(const std::vector<std::pair<SolutionRecord, bool>>& data,
                                  const StatementIndex& statements, const Featurizer& featurizer);

// Default hyperparameters for each model kind: two epochs for PRMs, one for
// ORMs.
Hyperparams default_prm_hyperparams();
Hyperparams default_orm_hyperparams();

MicroModel train_prm(const std::vector<dataset::LabeledSolution>& data, const StatementIndex& statements,
                     const Hyperparams& hp = default_prm_hyperparams(), MicroModel init = {},
                     TrainReport* report = nullptr, const LabelReadObserver& observer = {});

MicroModel train_orm(const std::vector<std::pair<SolutionRecord, bool>>& data, const StatementIndex& statements,
                     const Hyperparams& hp = default_orm_hyperparams(), MicroModel init = {},
                     TrainReport* report = nullptr);

}  // namespace stepwise::rm
