#include "stepwise/supervision.hpp"

#include <algorithm>

namespace stepwise::supervision {

std::string_view to_string(SupervisionKind kind) {
  switch (kind) {
    case SupervisionKind::process_oracle: return "process_oracle";
    case SupervisionKind::outcome_oracle: return "outcome_oracle";
    case SupervisionKind::outcome_final_answer: return "outcome_final_answer";
  }
  return "process_oracle";
}

SupervisionKind parse_supervision_kind(std::string_view text) {
  for (SupervisionKind k : {SupervisionKind::process_oracle, SupervisionKind::outcome_oracle,
                            SupervisionKind::outcome_final_answer}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown supervision kind '" + std::string(text) + "'");
}

void OracleConfig::validate() const {
  if (!(negative_threshold > 0.0 && negative_threshold < 1.0)) {
    throw std::invalid_argument("negative_threshold must lie strictly between 0 and 1");
  }
  if (oracle == nullptr) throw std::invalid_argument("oracle scorer not set");
}

std::vector<Verdict> verdicts_from_probabilities(const StepProbabilities& probs, double negative_threshold) {
  std::vector<Verdict> out;
  out.reserve(probs.size());
  for (const auto& p : probs) out.push_back(p.p_negative > negative_threshold ? Verdict::incorrect : Verdict::correct);
  return out;
}

std::vector<Verdict> oracle_step_verdicts(const Problem& problem, const SolutionRecord& solution,
                                          const OracleConfig& cfg) {
  cfg.validate();
  if (solution.steps.empty()) throw std::invalid_argument("solution " + solution.id + " has no steps");
  StepProbabilities probs;
  try {
    probs = cfg.oracle->score(problem, solution);
  } catch (const std::exception& e) {
    throw OracleError(solution.id, 0, e.what());
  }
  if (probs.size() != solution.steps.size()) {
    throw OracleError(solution.id, std::min(probs.size(), solution.steps.size()), "wrong number of step triples");
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!is_valid(probs[i])) throw OracleError(solution.id, i, "invalid probability triple");
  }
  return verdicts_from_probabilities(probs, cfg.negative_threshold);
}

std::vector<StepLabel> process_labels_from_verdicts(const std::vector<Verdict>& verdicts) {
  std::vector<StepLabel> out;
  for (Verdict v : verdicts) {
    if (v == Verdict::incorrect) {
      out.push_back(StepLabel::negative);
      break;
    }
    out.push_back(StepLabel::positive);
  }
  return out;
}

std::vector<StepLabel> synth_process_labels(const Problem& problem, const SolutionRecord& solution,
                                            const OracleConfig& cfg) {
  return process_labels_from_verdicts(oracle_step_verdicts(problem, solution, cfg));
}

bool synth_outcome_label(const Problem& problem, const SolutionRecord& solution, const OracleConfig& cfg) {
  const auto verdicts = oracle_step_verdicts(problem, solution, cfg);
  return std::all_of(verdicts.begin(), verdicts.end(), [](Verdict v) { return v == Verdict::correct; });
}

bool final_answer_outcome_label(const SolutionRecord& solution, const Problem& problem) {
  if (trim(problem.ground_truth_answer).empty()) {
    throw std::invalid_argument("problem " + problem.id + " has no ground truth answer");
  }
  return grade_answer(solution.final_answer, problem.ground_truth_answer);
}

}  // namespace stepwise::supervision
