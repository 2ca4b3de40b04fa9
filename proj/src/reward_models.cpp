#include "stepwise/reward_models.hpp"

#include <fstream>
#include <stdexcept>

namespace stepwise::rm {

namespace {

std::string_view statement_for(const StatementIndex& statements, const std::string& problem_id) {
  auto it = statements.find(problem_id);
  return it == statements.end() ? std::string_view{} : std::string_view(it->second);
}

int class_of(StepLabel label) { return static_cast<int>(label); }

}  // namespace

TabularProcessScorer::TabularProcessScorer(std::map<std::string, StepProbabilities> table)
    : table_(std::move(table)) {
  for (const auto& [id, probs] : table_) {
    for (const auto& p : probs) {
      if (!is_valid(p)) throw std::invalid_argument("invalid probability triple in fixture for " + id);
    }
  }
}

TabularProcessScorer TabularProcessScorer::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::map<std::string, StepProbabilities> table;
  std::string line;
  while (std::getline(in, line)) {
    if (trim(line).empty()) continue;
    const json j = json::parse(line);
    StepProbabilities probs;
    for (const json& s : j.at("steps")) {
      probs.push_back({s.at("p_positive").get<double>(), s.at("p_neutral").get<double>(),
                       s.at("p_negative").get<double>()});
    }
    table[j.at("solution_id").get<std::string>()] = std::move(probs);
  }
  return TabularProcessScorer(std::move(table));
}

StepProbabilities TabularProcessScorer::score(const Problem&, const SolutionRecord& solution) const {
  auto it = table_.find(solution.id);
  if (it == table_.end()) throw std::out_of_range("no fixture scores for solution " + solution.id);
  validate(it->second, solution.steps.size());
  return it->second;
}

TabularOutcomeScorer::TabularOutcomeScorer(std::map<std::string, double> table) : table_(std::move(table)) {}

double TabularOutcomeScorer::score(const Problem&, const SolutionRecord& solution) const {
  auto it = table_.find(solution.id);
  if (it == table_.end()) throw std::out_of_range("no fixture score for solution " + solution.id);
  return it->second;
}

StepProb to_step_prob(const ClassProbs& p) { return {p[0], p[1], p[2]}; }

MicroProcessScorer::MicroProcessScorer(MicroModel model)
    : model_(std::move(model)), featurizer_(model_.feature_dim()) {}

StepProbabilities MicroProcessScorer::score(const Problem& problem, const SolutionRecord& solution) const {
  StepProbabilities out;
  for (const auto& x : featurizer_.featurize(problem.statement, solution.steps)) {
    out.push_back(to_step_prob(model_.predict(x)));
  }
  return out;
}

MicroOutcomeScorer::MicroOutcomeScorer(MicroModel model)
    : model_(std::move(model)), featurizer_(model_.feature_dim()) {}

double MicroOutcomeScorer::score(const Problem& problem, const SolutionRecord& solution) const {
  const auto features = featurizer_.featurize(problem.statement, solution.steps);
  if (features.empty()) throw std::invalid_argument("solution " + solution.id + " has no steps");
  return model_.predict(features.back())[0];
}

StatementIndex index_statements(const std::vector<Problem>& problems) {
  StatementIndex out;
  for (const auto& p : problems) out[p.id] = p.statement;
  return out;
}

std::vector<Example> prm_examples(const std::vector<dataset::LabeledSolution>& data, const StatementIndex& statements,
                                  const Featurizer& featurizer, const LabelReadObserver& observer) {
  std::vector<Example> out;
  for (const auto& record : data) {
    const auto& steps = record.solution.steps;
    if (record.step_labels.size() > steps.size()) {
      throw TrainingError("more labels than steps in " + record.solution.id);
    }
    const auto features = featurizer.featurize(statement_for(statements, record.solution.problem_id), steps);
    for (std::size_t i = 0; i < record.step_labels.size(); ++i) {
      if (observer) observer(record.solution.id, i);
      const StepLabel label = record.step_labels[i];
      out.push_back({features[i], class_of(label)});
      if (label == StepLabel::negative) break;
    }
  }
  return out;
}

std::vector<Example> orm_examples(const std::vector<std::pair<SolutionRecord, bool>>& data,
                                  const StatementIndex& statements, const Featurizer& featurizer) {
  std::vector<Example> out;
  for (const auto& [solution, correct] : data) {
    for (auto& x : featurizer.featurize(statement_for(statements, solution.problem_id), solution.steps)) {
      out.push_back({std::move(x), correct ? 0 : 2});
    }
  }
  return out;
}

Hyperparams default_prm_hyperparams() {
  Hyperparams hp;
  hp.epochs = 2;
  return hp;
}

Hyperparams default_orm_hyperparams() {
  Hyperparams hp;
  hp.epochs = 1;
  return hp;
}

MicroModel train_prm(const std::vector<dataset::LabeledSolution>& data, const StatementIndex& statements,
                     const Hyperparams& hp, MicroModel init, TrainReport* report, const LabelReadObserver& observer) {
  const Featurizer featurizer(hp.feature_dim);
  const auto examples = prm_examples(data, statements, featurizer, observer);
  if (examples.empty()) throw TrainingError("no labeled steps to train on");
  return train_classifier(examples, hp, LossKind::softmax, std::move(init), report);
}

MicroModel train_orm(const std::vector<std::pair<SolutionRecord, bool>>& data, const StatementIndex& statements,
                     const Hyperparams& hp, MicroModel init, TrainReport* report) {
  const Featurizer featurizer(hp.feature_dim);
  const auto examples = orm_examples(data, statements, featurizer);
  if (examples.empty()) throw TrainingError("no labeled steps to train on");
  return train_classifier(examples, hp, LossKind::positive_binary, std::move(init), report);
}

}  // namespace stepwise::rm
