#include "stepwise/collection.hpp"

#include <algorithm>
#include <map>
#include <unordered_map>

#include "stepwise/active_learning.hpp"
#include "stepwise/reward_models.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/supervision.hpp"

namespace stepwise::collection {

void SimulationConfig::validate() const {
  if (problems == 0) throw std::invalid_argument("problems must be positive");
  synth::NoisySolverConfig{step_error_rate, compensating_error_rate, seed}.validate();
  if (generations == 0) throw std::invalid_argument("generations must be positive");
  if (selected_per_problem == 0 || selected_per_problem > pool_per_problem) {
    throw std::invalid_argument("selected_per_problem must lie in [1, pool_per_problem]");
  }
  if (labelers + careless_labelers == 0) throw std::invalid_argument("no labelers");
  if (!(labeler_error >= 0.0 && labeler_error <= 1.0) || !(careless_error >= 0.0 && careless_error <= 1.0)) {
    throw std::invalid_argument("labeler error rates must lie in [0, 1]");
  }
  if (qc_items == 0) throw std::invalid_argument("screening needs at least one QC item");
  service.validate();
}

json SimulationConfig::to_json() const {
  return {{"problems", problems},
          {"min_length", lengths.min},
          {"max_length", lengths.max},
          {"step_error_rate", step_error_rate},
          {"compensating_error_rate", compensating_error_rate},
          {"generations", generations},
          {"pool_per_problem", pool_per_problem},
          {"selected_per_problem", selected_per_problem},
          {"labelers", labelers},
          {"labeler_error", labeler_error},
          {"careless_labelers", careless_labelers},
          {"careless_error", careless_error},
          {"qc_items", qc_items},
          {"service", service.to_json()},
          {"neutral", scoring::to_string(scoring.neutral_policy)},
          {"reduction", scoring::to_string(scoring.reduction)},
          {"feature_dim", feature_dim},
          {"seed", seed}};
}

namespace {

struct SimLabeler {
  std::string id;
  double error = 0.0;
};

// The oracle's phase-2 sequence, or with probability `error` a wrong one:
// a missed first error (rated positive throughout) or a spurious negative.
std::vector<StepLabel> simulated_ratings(const std::vector<StepLabel>& truth, std::size_t n_steps, double error,
                                         Rng& rng) {
  if (!rng.bernoulli(error)) return truth;
  if (truth.back() == StepLabel::negative) return std::vector<StepLabel>(n_steps, StepLabel::positive);
  std::vector<StepLabel> out(static_cast<std::size_t>(rng.uniform_index(n_steps)) + 1, StepLabel::positive);
  out.back() = StepLabel::negative;
  return out;
}

}  // namespace

SimulationResult simulate_collection(const SimulationConfig& cfg, const std::optional<std::filesystem::path>& data_dir) {
  cfg.validate();
  const auto problems =
      synth::generate_problems(cfg.problems, cfg.lengths, derive_seed(cfg.seed, "collection-problems"), "sim");
  const auto qc_problems =
      synth::generate_problems(cfg.qc_items, cfg.lengths, derive_seed(cfg.seed, "collection-qc"), "qc");
  const synth::NoisySolverConfig solver{cfg.step_error_rate, cfg.compensating_error_rate,
                                        derive_seed(cfg.seed, "collection-solver")};
  synth::ChainOracle oracle(problems);
  for (const auto& q : qc_problems) oracle.add(q);
  std::vector<Problem> plain;
  for (const auto& p : problems) plain.push_back(p.to_problem());
  std::unordered_map<std::string, const Problem*> by_id;
  for (const auto& p : plain) by_id[p.id] = &p;
  const rm::StatementIndex statements = rm::index_statements(plain);
  const supervision::OracleConfig ocfg{0.20, &oracle};

  std::int64_t now = 1'700'000'000'000;
  service::LabelService svc(cfg.service, data_dir, [&now] { return now; });

  std::vector<service::QcItem> qc_items;
  for (const auto& q : qc_problems) {
    const Problem problem = q.to_problem();
    auto solution = synth::sample_solutions(q, solver, 1).front();
    const auto truth = supervision::synth_process_labels(problem, solution, ocfg);
    std::set<std::size_t> gold;
    if (truth.back() == StepLabel::negative) gold.insert(truth.size() - 1);
    qc_items.push_back({"qc-item-" + q.id, problem.statement, problem.ground_truth_answer, std::move(solution), gold});
  }

  std::vector<SimLabeler> labelers;
  for (std::size_t i = 0; i < cfg.labelers; ++i) labelers.push_back({"labeler-" + std::to_string(i), cfg.labeler_error});
  for (std::size_t i = 0; i < cfg.careless_labelers; ++i) {
    labelers.push_back({"careless-" + std::to_string(i), cfg.careless_error});
  }

  SimulationResult result;
  std::optional<rm::MicroModel> selector;
  rm::Hyperparams hp = rm::default_prm_hyperparams();
  hp.feature_dim = cfg.feature_dim;
  hp.seed = derive_seed(cfg.seed, "collection-train");

  for (std::size_t g = 0; g < cfg.generations; ++g) {
    std::vector<active::PoolCandidate> candidates;
    std::unordered_map<std::string, SolutionRecord> pool;
    std::optional<rm::MicroProcessScorer> scorer;
    if (selector) scorer.emplace(*selector);
    for (const auto& p : problems) {
      for (auto& s : synth::sample_solutions(p, solver, cfg.pool_per_problem, g * cfg.pool_per_problem)) {
        double score = 1.0;
        if (scorer) score = scoring::solution_score(s.id, scorer->score(*by_id.at(p.id), s), cfg.scoring).score();
        candidates.push_back({s.id, p.id, score, s.is_correct.value_or(false)});
        pool.emplace(s.id, std::move(s));
      }
    }
    active::SelectionPolicy policy;
    policy.mode = active::SelectionMode::mixed_80_20;
    policy.k_or_n = cfg.selected_per_problem;
    policy.pool_size_per_problem = cfg.pool_per_problem;
    policy.seed = derive_seed(cfg.seed, g);
    const auto picked = active::select(candidates, policy);

    service::GenerationRequest request;
    GenerationSummary summary;
    for (const auto& sel : picked) {
      const SolutionRecord& s = pool.at(sel.solution_id);
      const Problem& problem = *by_id.at(s.problem_id);
      request.tasks.push_back({s, problem.statement, problem.ground_truth_answer});
      if (!s.is_correct.value_or(false)) ++summary.wrong_answer_selected;
    }
    if (g == 0) request.qc_items = qc_items;
    summary.generation = svc.start_generation(request);
    summary.selected = request.tasks.size();

    // Round-robin polling until every labeler comes back empty-handed.
    std::size_t idle_rounds = 0;
    while (svc.generation_open() && idle_rounds < 2) {
      bool any = false;
      bool any_allowed = false;
      for (const auto& lab : labelers) {
        now += 1000;
        std::optional<service::LabelTask> task;
        try {
          task = svc.next_task(lab.id);
        } catch (const service::ServiceError& e) {
          if (e.kind() == service::ServiceError::Kind::unauthorized) continue;
          throw;
        }
        any_allowed = true;
        if (!task) continue;
        any = true;
        Rng rng(derive_seed(derive_seed(cfg.seed, lab.id), task->task_id));
        const Problem problem{task->solution.problem_id, task->statement, task->ground_truth_answer, {}, {}, Split::train};
        const auto truth = supervision::synth_process_labels(problem, task->solution, ocfg);
        svc.submit_labels(task->task_id, lab.id, simulated_ratings(truth, task->solution.steps.size(), lab.error, rng));
      }
      if (!any_allowed) throw std::runtime_error("every simulated labeler has been removed");
      idle_rounds = any ? 0 : idle_rounds + 1;
    }
    if (svc.generation_open()) throw std::runtime_error("generation " + std::to_string(summary.generation) + " stalled");

    for (std::size_t i = 0; i < request.tasks.size(); ++i) {
      char id[48];
      std::snprintf(id, sizeof(id), "g%u-t%05zu", summary.generation, i);
      const auto task = svc.task(id);
      if (!task || task->state != service::TaskState::completed) continue;
      result.labels.push_back({task->solution, task->labels, task->labeled_by.value_or(""), false, true});
      ++summary.labeled;
    }
    result.generations.push_back(summary);
    selector = rm::train_prm(result.labels, statements, hp);
  }
  svc.write_snapshot();
  result.service_stats = svc.stats();
  for (const auto& lab : labelers) {
    if (auto p = svc.labeler(lab.id)) result.labelers.push_back(*p);
  }
  return result;
}

}  // namespace stepwise::collection
