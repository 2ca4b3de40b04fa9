#include "stepwise/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace stepwise::scoring {

NeutralPolicy parse_neutral_policy(std::string_view text) {
  if (text == "pos" || text == "as_positive" || text == "positive") return NeutralPolicy::as_positive;
  if (text == "neg" || text == "as_negative" || text == "negative") return NeutralPolicy::as_negative;
  throw std::invalid_argument("unknown neutral policy '" + std::string(text) + "'");
}

Reduction parse_reduction(std::string_view text) {
  if (text == "product") return Reduction::product;
  if (text == "min" || text == "minimum") return Reduction::minimum;
  throw std::invalid_argument("unknown reduction '" + std::string(text) + "'");
}

std::string_view to_string(NeutralPolicy p) { return p == NeutralPolicy::as_positive ? "pos" : "neg"; }
std::string_view to_string(Reduction r) { return r == Reduction::product ? "product" : "min"; }

ScoredSolution::ScoredSolution(std::string solution_id, double score, std::vector<double> per_step_scores)
    : solution_id_(std::move(solution_id)), score_(score), per_step_scores_(std::move(per_step_scores)) {
  if (!std::isfinite(score_) || score_ < 0.0 || score_ > 1.0) {
    throw std::invalid_argument("score for " + solution_id_ + " is not a finite value in [0,1]");
  }
  for (double s : per_step_scores_) {
    if (!std::isfinite(s) || s < 0.0 || s > 1.0) {
      throw std::invalid_argument("step score for " + solution_id_ + " is not a finite value in [0,1]");
    }
  }
}

double step_score(const StepProb& p, const ScoringConfig& cfg) {
  const double s = cfg.neutral_policy == NeutralPolicy::as_positive ? p.p_positive + p.p_neutral : p.p_positive;
  return std::clamp(s, 0.0, 1.0);
}

double reduce(std::span<const double> step_scores, Reduction reduction) {
  if (reduction == Reduction::product) {
    return std::accumulate(step_scores.begin(), step_scores.end(), 1.0, std::multiplies<>());
  }
  if (step_scores.empty()) throw std::invalid_argument("minimum over an empty step list");
  return *std::min_element(step_scores.begin(), step_scores.end());
}

ScoredSolution solution_score(std::string solution_id, const StepProbabilities& steps, const ScoringConfig& cfg) {
  std::vector<double> per_step;
  per_step.reserve(steps.size());
  for (const auto& p : steps) {
    if (!is_valid(p)) throw std::invalid_argument("invalid probability triple for " + solution_id);
    per_step.push_back(step_score(p, cfg));
  }
  const double score = reduce(per_step, cfg.reduction);
  return ScoredSolution(std::move(solution_id), score, std::move(per_step));
}

double orm_score(double final_prediction) {
  if (!std::isfinite(final_prediction) || final_prediction < 0.0 || final_prediction > 1.0) {
    throw std::invalid_argument("outcome prediction outside [0,1]");
  }
  return final_prediction;
}

std::string best_of_n(std::span<const ScoredSolution> candidates) {
  if (candidates.empty()) throw SelectionError("no candidates");
  const ScoredSolution* best = &candidates.front();
  for (const auto& c : candidates.subspan(1)) {
    if (c.score() > best->score() || (c.score() == best->score() && c.solution_id() < best->solution_id())) {
      best = &c;
    }
  }
  return best->solution_id();
}

VoteResult weighted_vote(std::span<const VoteCandidate> candidates) {
  if (candidates.empty()) throw SelectionError("no candidates");
  std::vector<const VoteCandidate*> order;
  order.reserve(candidates.size());
  for (const auto& c : candidates) {
    if (c.answer == nullptr) throw std::invalid_argument("vote candidate without an answer");
    if (!std::isfinite(c.weight) || c.weight < 0.0) throw std::invalid_argument("vote weight must be finite and >= 0");
    order.push_back(&c);
  }
  std::sort(order.begin(), order.end(),
            [](const VoteCandidate* a, const VoteCandidate* b) { return a->solution_id < b->solution_id; });

  struct Group {
    double weight = 0.0;
    std::size_t count = 0;
    std::size_t first = 0;  // position of smallest id in `order`
  };
  std::map<CanonicalAnswer, Group> groups;
  for (std::size_t i = 0; i < order.size(); ++i) {
    auto [it, inserted] = groups.try_emplace(*order[i]->answer);
    if (inserted) it->second.first = i;
    it->second.weight += order[i]->weight;
    ++it->second.count;
  }
  auto best = groups.begin();
  for (auto it = std::next(groups.begin()); it != groups.end(); ++it) {
    const Group& g = it->second;
    const Group& b = best->second;
    if (g.weight != b.weight) {
      if (g.weight > b.weight) best = it;
    } else if (g.count != b.count) {
      if (g.count > b.count) best = it;
    } else if (g.first < b.first) {
      best = it;
    }
  }
  return {best->first, best->second.weight, best->second.count};
}

namespace {

CanonicalAnswer vote_records(std::span<const SolutionRecord> candidates, std::span<const double> weights) {
  if (candidates.empty()) throw SelectionError("no candidates");
  std::vector<CanonicalAnswer> answers;
  answers.reserve(candidates.size());
  for (const auto& c : candidates) answers.push_back(canonicalize(c.final_answer));
  std::vector<VoteCandidate> votes;
  votes.reserve(candidates.size());
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    votes.push_back({candidates[i].id, &answers[i], weights.empty() ? 1.0 : weights[i]});
  }
  return weighted_vote(votes).answer;
}

}  // namespace

CanonicalAnswer majority_vote(std::span<const SolutionRecord> candidates) { return vote_records(candidates, {}); }

CanonicalAnswer rm_weighted_vote(std::span<const SolutionRecord> candidates, std::span<const double> scores) {
  if (scores.size() != candidates.size()) throw std::invalid_argument("one score per candidate required");
  return vote_records(candidates, scores);
}

}  // namespace stepwise::scoring
