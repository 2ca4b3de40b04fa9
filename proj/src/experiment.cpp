#include "stepwise/experiment.hpp"

#include <fstream>
#include <stdexcept>
#include <thread>
#include <unordered_map>

#include "stepwise/rng.hpp"

namespace stepwise::experiment {

using supervision::SupervisionKind;

void ExperimentConfig::validate() const {
  if (train_problems == 0 || test_problems == 0) throw std::invalid_argument("problem counts must be positive");
  if (lengths.min == 0 || lengths.min > lengths.max) throw std::invalid_argument("invalid chain length range");
  synth::NoisySolverConfig{step_error_rate, compensating_error_rate, seed}.validate();
  if (dataset_sizes.empty()) throw std::invalid_argument("dataset_sizes is empty");
  for (std::size_t i = 0; i < dataset_sizes.size(); ++i) {
    if (dataset_sizes[i] == 0) throw std::invalid_argument("dataset sizes must be positive");
    if (i > 0 && dataset_sizes[i] <= dataset_sizes[i - 1]) {
      throw std::invalid_argument("dataset_sizes must be strictly increasing");
    }
  }
  if (test_pool_size == 0) throw std::invalid_argument("test_pool_size must be positive");
  if (best_of.empty()) throw std::invalid_argument("best_of is empty");
  for (std::size_t n : best_of) {
    if (n == 0 || n > test_pool_size) {
      throw std::invalid_argument("best_of entries must lie in [1, test_pool_size]");
    }
  }
  if (m_subsamples == 0) throw std::invalid_argument("m_subsamples must be positive");
  if (kinds.empty()) throw std::invalid_argument("no supervision kinds");
  if (!(negative_threshold > 0.0 && negative_threshold < 1.0)) {
    throw std::invalid_argument("negative_threshold must lie strictly between 0 and 1");
  }
}

json ExperimentConfig::to_json() const {
  json k = json::array();
  for (auto kind : kinds) k.push_back(supervision::to_string(kind));
  return {{"train_problems", train_problems},
          {"test_problems", test_problems},
          {"min_length", lengths.min},
          {"max_length", lengths.max},
          {"step_error_rate", step_error_rate},
          {"compensating_error_rate", compensating_error_rate},
          {"dataset_sizes", dataset_sizes},
          {"test_pool_size", test_pool_size},
          {"best_of", best_of},
          {"m_subsamples", m_subsamples},
          {"feature_dim", feature_dim},
          {"negative_threshold", negative_threshold},
          {"neutral", scoring::to_string(scoring.neutral_policy)},
          {"reduction", scoring::to_string(scoring.reduction)},
          {"kinds", k},
          {"seed", seed}};
}

ExperimentConfig ExperimentConfig::from_json(const json& j, ExperimentConfig c) {
  if (j.contains("train_problems")) c.train_problems = j["train_problems"].get<std::size_t>();
  if (j.contains("test_problems")) c.test_problems = j["test_problems"].get<std::size_t>();
  if (j.contains("min_length")) c.lengths.min = j["min_length"].get<std::size_t>();
  if (j.contains("max_length")) c.lengths.max = j["max_length"].get<std::size_t>();
  if (j.contains("step_error_rate")) c.step_error_rate = j["step_error_rate"].get<double>();
  if (j.contains("compensating_error_rate")) c.compensating_error_rate = j["compensating_error_rate"].get<double>();
  if (j.contains("dataset_sizes")) c.dataset_sizes = j["dataset_sizes"].get<std::vector<std::size_t>>();
  if (j.contains("test_pool_size")) c.test_pool_size = j["test_pool_size"].get<std::size_t>();
  if (j.contains("best_of")) c.best_of = j["best_of"].get<std::vector<std::size_t>>();
  if (j.contains("m_subsamples")) c.m_subsamples = j["m_subsamples"].get<std::size_t>();
  if (j.contains("feature_dim")) c.feature_dim = j["feature_dim"].get<std::size_t>();
  if (j.contains("negative_threshold")) c.negative_threshold = j["negative_threshold"].get<double>();
  if (j.contains("neutral")) c.scoring.neutral_policy = scoring::parse_neutral_policy(j["neutral"].get<std::string>());
  if (j.contains("reduction")) c.scoring.reduction = scoring::parse_reduction(j["reduction"].get<std::string>());
  if (j.contains("kinds")) {
    c.kinds.clear();
    for (const json& k : j["kinds"]) c.kinds.push_back(supervision::parse_supervision_kind(k.get<std::string>()));
  }
  if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) { return from_json(j, ExperimentConfig{}); }

SyntheticWorld SyntheticWorld::build(const ExperimentConfig& cfg) {
  cfg.validate();
  SyntheticWorld w;
  w.train = synth::generate_problems(cfg.train_problems, cfg.lengths, derive_seed(cfg.seed, "train-problems"), "train",
                                     Split::train);
  w.test = synth::generate_problems(cfg.test_problems, cfg.lengths, derive_seed(cfg.seed, "test-problems"), "test",
                                    Split::test);
  for (const auto& p : w.train) w.train_problems.push_back(p.to_problem());
  for (const auto& p : w.test) w.test_problems.push_back(p.to_problem());
  w.statements = rm::index_statements(w.train_problems);
  for (const auto& p : w.test_problems) w.statements[p.id] = p.statement;
  return w;
}

synth::NoisySolverConfig SyntheticWorld::solver(const ExperimentConfig& cfg) const {
  return {cfg.step_error_rate, cfg.compensating_error_rate, derive_seed(cfg.seed, "solver")};
}

std::vector<SolutionRecord> SyntheticWorld::train_samples(const ExperimentConfig& cfg, std::size_t first,
                                                          std::size_t n) const {
  std::vector<SolutionRecord> out;
  out.reserve(train.size() * n);
  const auto solver_cfg = solver(cfg);
  for (const auto& p : train) {
    auto s = synth::sample_solutions(p, solver_cfg, n, first);
    std::move(s.begin(), s.end(), std::back_inserter(out));
  }
  return out;
}

namespace {

template <class Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  for (std::size_t t = 0; t < threads; ++t) {
    workers.emplace_back([&, t] {
      for (std::size_t i = t; i < count; i += threads) fn(i);
    });
  }
  for (auto& w : workers) w.join();
}

std::vector<dataset::LabeledSolution> oracle_process_data(const SyntheticWorld& world,
                                                          const std::vector<SolutionRecord>& samples,
                                                          const ExperimentConfig& cfg) {
  synth::ChainOracle oracle(world.train);
  const supervision::OracleConfig ocfg{cfg.negative_threshold, &oracle};
  std::unordered_map<std::string, const Problem*> index;
  for (const auto& p : world.train_problems) index[p.id] = &p;
  std::vector<dataset::LabeledSolution> data;
  data.reserve(samples.size());
  for (const auto& s : samples) {
    data.push_back({s, supervision::synth_process_labels(*index.at(s.problem_id), s, ocfg), "process-oracle", false, true});
  }
  return data;
}

rm::Hyperparams hyperparams_for(SupervisionKind kind, const ExperimentConfig& cfg) {
  rm::Hyperparams hp =
      kind == SupervisionKind::process_oracle ? rm::default_prm_hyperparams() : rm::default_orm_hyperparams();
  hp.feature_dim = cfg.feature_dim;
  hp.seed = derive_seed(cfg.seed, std::string("train/") + std::string(supervision::to_string(kind)));
  return hp;
}

}  // namespace

rm::MicroModel train_for_kind(SupervisionKind kind, const SyntheticWorld& world,
                              const std::vector<SolutionRecord>& samples, const ExperimentConfig& cfg) {
  const rm::Hyperparams hp = hyperparams_for(kind, cfg);
  if (kind == SupervisionKind::process_oracle) {
    return rm::train_prm(oracle_process_data(world, samples, cfg), world.statements, hp);
  }
  std::unordered_map<std::string, const Problem*> index;
  for (const auto& p : world.train_problems) index[p.id] = &p;
  std::vector<std::pair<SolutionRecord, bool>> pairs;
  pairs.reserve(samples.size());
  if (kind == SupervisionKind::outcome_oracle) {
    synth::ChainOracle oracle(world.train);
    const supervision::OracleConfig ocfg{cfg.negative_threshold, &oracle};
    for (const auto& s : samples) pairs.emplace_back(s, supervision::synth_outcome_label(*index.at(s.problem_id), s, ocfg));
  } else {
    for (const auto& s : samples) {
      pairs.emplace_back(s, supervision::final_answer_outcome_label(s, *index.at(s.problem_id)));
    }
  }
  return rm::train_orm(pairs, world.statements, hp);
}

eval::Method method_for(SupervisionKind kind) {
  return kind == SupervisionKind::process_oracle ? eval::Method::prm : eval::Method::orm;
}

eval::EvalPool score_test_pool(const SyntheticWorld& world, const ExperimentConfig& cfg,
                               const rm::MicroModel& process_model, const rm::MicroModel& outcome_model) {
  std::optional<rm::MicroProcessScorer> prm;
  std::optional<rm::MicroOutcomeScorer> orm;
  if (process_model.feature_dim() > 0) prm.emplace(process_model);
  if (outcome_model.feature_dim() > 0) orm.emplace(outcome_model);
  const auto solver_cfg = world.solver(cfg);
  eval::EvalPool pool;
  pool.problems.resize(world.test.size());
  parallel_for(world.test.size(), cfg.threads, [&](std::size_t i) {
    const Problem& problem = world.test_problems[i];
    eval::ProblemPool& out = pool.problems[i];
    out.problem_id = problem.id;
    out.subject = problem.subject;
    for (const auto& s : synth::sample_solutions(world.test[i], solver_cfg, cfg.test_pool_size)) {
      eval::PoolEntry e;
      e.solution_id = s.id;
      e.answer = canonicalize(s.final_answer);
      e.correct = s.is_correct.value_or(false);
      if (prm) e.prm_score = scoring::solution_score(s.id, prm->score(problem, s), cfg.scoring).score();
      if (orm) e.orm_score = orm->score(problem, s);
      out.entries.push_back(std::move(e));
    }
  });
  return pool;
}

namespace {

eval::CurveSeries curve_for(const eval::EvalPool& pool, eval::Method method, std::string label,
                            const ExperimentConfig& cfg) {
  eval::CurveSeries series{std::string(eval::to_string(method)), std::move(label), {}};
  eval::CurveOptions opts;
  opts.m_subsamples = cfg.m_subsamples;
  opts.seed = derive_seed(cfg.seed, "eval");
  opts.threads = cfg.threads;
  for (std::size_t n : cfg.best_of) series.points.push_back(eval::best_of_n_accuracy(pool, n, method, opts));
  return series;
}

std::string cell_label(SupervisionKind kind, std::size_t d) {
  return std::string(supervision::to_string(kind)) + "/samples=" + std::to_string(d);
}

json series_json(const eval::CurveSeries& s) {
  eval::Report r;
  r.curves.push_back(s);
  return eval::to_json(r)["curves"][0];
}

eval::CurveSeries series_from(const json& j) {
  json wrapper = {{"curves", json::array({j})}, {"tables", json::array()}};
  return eval::report_from_json(wrapper).curves.front();
}

}  // namespace

std::map<SupervisionKind, eval::CurveSeries> run_at_size(const SyntheticWorld& world, const ExperimentConfig& cfg,
                                                         std::size_t samples_per_problem) {
  const auto samples = world.train_samples(cfg, 0, samples_per_problem);
  std::map<SupervisionKind, eval::CurveSeries> out;
  for (SupervisionKind kind : cfg.kinds) {
    const rm::MicroModel model = train_for_kind(kind, world, samples, cfg);
    const bool process = kind == SupervisionKind::process_oracle;
    const eval::EvalPool pool = score_test_pool(world, cfg, process ? model : rm::MicroModel{},
                                                process ? rm::MicroModel{} : model);
    out[kind] = curve_for(pool, method_for(kind), cell_label(kind, samples_per_problem), cfg);
  }
  return out;
}

eval::Report run_experiment(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint_dir) {
  cfg.validate();
  const SyntheticWorld world = SyntheticWorld::build(cfg);

  json checkpoint = {{"config", cfg.to_json()}, {"cells", json::object()}};
  const auto cp_path = checkpoint_dir.empty() ? std::filesystem::path{} : checkpoint_dir / "experiment_checkpoint.json";
  if (!cp_path.empty() && std::filesystem::exists(cp_path)) {
    std::ifstream in(cp_path);
    json stored = json::parse(in, nullptr, false);
    if (!stored.is_discarded() && stored.value("config", json()) == checkpoint["config"]) checkpoint = stored;
  }
  auto save = [&] {
    if (cp_path.empty()) return;
    std::filesystem::create_directories(checkpoint_dir);
    const auto tmp = cp_path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::trunc);
      out << checkpoint.dump() << '\n';
    }
    std::filesystem::rename(tmp, cp_path);
  };

  eval::Report report;
  std::map<SupervisionKind, std::vector<std::pair<std::size_t, double>>> size_curves;
  const std::size_t headline_n = cfg.best_of.back();
  for (std::size_t d : cfg.dataset_sizes) {
    const std::string key = std::to_string(d);
    if (!checkpoint["cells"].contains(key)) {
      try {
        json cell = json::object();
        for (const auto& [kind, series] : run_at_size(world, cfg, d)) {
          cell[std::string(supervision::to_string(kind))] = series_json(series);
        }
        checkpoint["cells"][key] = cell;
        save();
      } catch (const std::exception& e) {
        throw std::runtime_error("experiment aborted at samples=" + key + ": " + e.what());
      }
    }
    for (SupervisionKind kind : cfg.kinds) {
      eval::CurveSeries series = series_from(checkpoint["cells"][key].at(std::string(supervision::to_string(kind))));
      size_curves[kind].emplace_back(d, series.points.back().mean_accuracy);
      report.curves.push_back(std::move(series));
    }
  }

  const eval::EvalPool baseline = score_test_pool(world, cfg, {}, {});
  report.curves.push_back(curve_for(baseline, eval::Method::majority, "baseline", cfg));

  double correct = 0.0;
  double total = 0.0;
  for (const auto& p : baseline.problems) {
    for (const auto& e : p.entries) {
      correct += e.correct ? 1.0 : 0.0;
      total += 1.0;
    }
  }
  json sizes = json::object();
  for (const auto& [kind, points] : size_curves) {
    json arr = json::array();
    for (const auto& [d, acc] : points) arr.push_back({{"samples_per_problem", d}, {"accuracy", acc}});
    sizes[std::string(supervision::to_string(kind))] = arr;
  }
  report.metadata = {{"config", cfg.to_json()},
                     {"test_pass_rate", total > 0 ? correct / total : 0.0},
                     {"size_curves_best_of", headline_n},
                     {"size_curves", sizes}};
  return report;
}

void ActiveLearningConfig::validate() const {
  base.validate();
  if (selector_samples == 0) throw std::invalid_argument("selector_samples must be positive");
  if (pool_per_problem == 0) throw std::invalid_argument("pool_per_problem must be positive");
  if (selected_per_problem.empty()) throw std::invalid_argument("selected_per_problem is empty");
  for (std::size_t k : selected_per_problem) {
    if (k == 0 || k > pool_per_problem) throw std::invalid_argument("selected_per_problem must lie in [1, pool]");
  }
  if (eval_n == 0 || eval_n > base.test_pool_size) throw std::invalid_argument("eval_n must lie in [1, test pool]");
}

json ActiveLearningConfig::to_json() const {
  return {{"base", base.to_json()},
          {"selector_samples", selector_samples},
          {"pool_per_problem", pool_per_problem},
          {"selected_per_problem", selected_per_problem},
          {"eval_n", eval_n}};
}

json ActiveLearningResult::to_json() const {
  json pts = json::array();
  for (const auto& p : points) {
    pts.push_back({{"selected_per_problem", p.selected_per_problem},
                   {"dataset_size", p.dataset_size},
                   {"mixed_accuracy", p.mixed_accuracy},
                   {"uniform_accuracy", p.uniform_accuracy}});
  }
  json j = {{"points", pts}};
  if (efficiency) {
    j["efficiency"] = {{"factor", efficiency->factor},
                       {"pooled_slope", efficiency->pooled_slope},
                       {"intercept_mixed", efficiency->intercept_a},
                       {"intercept_uniform", efficiency->intercept_b}};
  }
  return j;
}

ActiveLearningResult run_active_learning(const ActiveLearningConfig& cfg) {
  cfg.validate();
  const ExperimentConfig& base = cfg.base;
  const SyntheticWorld world = SyntheticWorld::build(base);
  synth::ChainOracle oracle(world.train);
  const supervision::OracleConfig ocfg{base.negative_threshold, &oracle};
  std::unordered_map<std::string, const Problem*> index;
  for (const auto& p : world.train_problems) index[p.id] = &p;

  const auto selector_data = oracle_process_data(world, world.train_samples(base, 0, cfg.selector_samples), base);
  const rm::Hyperparams hp = hyperparams_for(SupervisionKind::process_oracle, base);
  const rm::MicroModel selector = rm::train_prm(selector_data, world.statements, hp);
  const auto pool = world.train_samples(base, cfg.selector_samples, cfg.pool_per_problem);

  active::GenerationHooks hooks;
  hooks.sample_pool = [&](std::size_t) { return pool; };
  hooks.scorer_factory = [&](const std::optional<rm::MicroModel>&) {
    return std::unique_ptr<rm::ProcessScorer>(std::make_unique<rm::MicroProcessScorer>(selector));
  };
  hooks.label = [&](const SolutionRecord& s) {
    return dataset::LabeledSolution{s, supervision::synth_process_labels(*index.at(s.problem_id), s, ocfg),
                                    "process-oracle", false, true};
  };
  hooks.train = [&](const std::vector<dataset::LabeledSolution>& selected) {
    std::vector<dataset::LabeledSolution> all = selector_data;
    all.insert(all.end(), selected.begin(), selected.end());
    return rm::train_prm(all, world.statements, hp);
  };

  eval::CurveOptions opts;
  opts.m_subsamples = base.m_subsamples;
  opts.seed = derive_seed(base.seed, "eval");
  opts.threads = base.threads;

  ActiveLearningResult result;
  active::EfficiencySeries mixed_series{"mixed", {}};
  active::EfficiencySeries uniform_series{"uniform", {}};
  for (std::size_t k : cfg.selected_per_problem) {
    ActiveLearningPoint point;
    point.selected_per_problem = k;
    point.dataset_size = world.train.size() * (cfg.selector_samples + k);
    for (auto mode : {active::SelectionMode::mixed_80_20, active::SelectionMode::uniform}) {
      active::GenerationLoopConfig lc;
      lc.n_generations = 1;
      lc.policy.mode = mode;
      lc.policy.k_or_n = k;
      lc.policy.pool_size_per_problem = cfg.pool_per_problem;
      lc.seed = derive_seed(base.seed, "active-learning");
      lc.scoring = base.scoring;
      const auto loop = active::generation_loop(lc, world.train_problems, hooks);
      const eval::EvalPool test = score_test_pool(world, base, loop.generations.back().model, {});
      const double acc = eval::best_of_n_accuracy(test, cfg.eval_n, eval::Method::prm, opts).mean_accuracy;
      (mode == active::SelectionMode::mixed_80_20 ? point.mixed_accuracy : point.uniform_accuracy) = acc;
    }
    mixed_series.points.emplace_back(static_cast<double>(point.dataset_size), point.mixed_accuracy);
    uniform_series.points.emplace_back(static_cast<double>(point.dataset_size), point.uniform_accuracy);
    result.points.push_back(point);
  }
  if (cfg.selected_per_problem.size() >= 2) {
    try {
      result.efficiency = active::estimate_data_efficiency(mixed_series, uniform_series);
    } catch (const std::exception&) {
      result.efficiency.reset();
    }
  }
  return result;
}

}  // namespace stepwise::experiment
