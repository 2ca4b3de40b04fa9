#include "stepwise/active_learning.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <unordered_map>

#include "stepwise/rng.hpp"

namespace stepwise::active {

std::string_view to_string(SelectionMode mode) {
  switch (mode) {
    case SelectionMode::uniform: return "uniform";
    case SelectionMode::topk_per_problem: return "topk_per_problem";
    case SelectionMode::topk_global: return "topk_global";
    case SelectionMode::mixed_80_20: return "mixed_80_20";
  }
  return "uniform";
}

SelectionMode parse_selection_mode(std::string_view text) {
  for (SelectionMode m : {SelectionMode::uniform, SelectionMode::topk_per_problem, SelectionMode::topk_global,
                          SelectionMode::mixed_80_20}) {
    if (text == to_string(m)) return m;
  }
  if (text == "mixed") return SelectionMode::mixed_80_20;
  throw std::invalid_argument("unknown selection mode '" + std::string(text) + "'");
}

void SelectionPolicy::validate() const {
  if (k_or_n == 0) throw std::invalid_argument("k_or_n must be positive");
  if (!(wrong_answer_fraction >= 0.0 && wrong_answer_fraction <= 1.0)) {
    throw std::invalid_argument("wrong_answer_fraction outside [0,1]");
  }
  if (pool_size_per_problem == 0) throw std::invalid_argument("pool_size_per_problem must be positive");
  if (k_or_n > pool_size_per_problem && mode != SelectionMode::topk_global) {
    throw std::invalid_argument("k_or_n exceeds pool_size_per_problem");
  }
}

json SelectionPolicy::to_json() const {
  return {{"mode", to_string(mode)},
          {"k_or_n", k_or_n},
          {"wrong_answer_fraction", wrong_answer_fraction},
          {"pool_size_per_problem", pool_size_per_problem},
          {"seed", seed}};
}

bool more_convincing(const PoolCandidate& a, const PoolCandidate& b) {
  if (a.score != b.score) return a.score > b.score;
  return a.solution_id < b.solution_id;
}

std::size_t round_half_up(double x) {
  if (x < 0.0) throw std::invalid_argument("round_half_up of a negative value");
  return static_cast<std::size_t>(std::floor(x + 0.5));
}

namespace {

std::vector<const PoolCandidate*> ranked(std::span<const PoolCandidate> pool) {
  std::vector<const PoolCandidate*> out;
  out.reserve(pool.size());
  for (const auto& c : pool) out.push_back(&c);
  std::sort(out.begin(), out.end(), [](const PoolCandidate* a, const PoolCandidate* b) { return more_convincing(*a, *b); });
  return out;
}

// Problem ids in sorted order with their candidates.
std::map<std::string, std::vector<PoolCandidate>> by_problem(std::span<const PoolCandidate> pool) {
  std::map<std::string, std::vector<PoolCandidate>> out;
  for (const auto& c : pool) out[c.problem_id].push_back(c);
  return out;
}

std::vector<std::string> top_wrong(std::span<const PoolCandidate> pool, std::size_t k) {
  std::vector<std::string> out;
  for (const PoolCandidate* c : ranked(pool)) {
    if (out.size() == k) break;
    if (!c->is_correct) out.push_back(c->solution_id);
  }
  return out;
}

}  // namespace

std::vector<std::string> surface_convincing_wrong(std::span<const PoolCandidate> pool, std::size_t k, Scope scope) {
  if (k == 0) throw std::invalid_argument("k must be positive");
  if (scope == Scope::global) return top_wrong(pool, k);
  std::vector<std::string> out;
  for (const auto& [problem, candidates] : by_problem(pool)) {
    auto picked = top_wrong(candidates, k);
    out.insert(out.end(), picked.begin(), picked.end());
  }
  return out;
}

std::vector<Selected> select_mixed(std::span<const PoolCandidate> pool, std::size_t n, const SelectionPolicy& policy) {
  if (n > pool.size()) {
    throw std::invalid_argument("cannot select " + std::to_string(n) + " from a pool of " + std::to_string(pool.size()));
  }
  const std::size_t n_wrong = std::min(n, round_half_up(policy.wrong_answer_fraction * static_cast<double>(n)));
  const std::size_t n_rest = n - n_wrong;
  const auto order = ranked(pool);
  std::vector<bool> taken(order.size(), false);
  std::vector<Selected> out;
  out.reserve(n);
  for (std::size_t i = 0; i < order.size() && out.size() < n_wrong; ++i) {
    if (!order[i]->is_correct) {
      taken[i] = true;
      out.push_back({order[i]->solution_id, "convincing_wrong"});
    }
  }
  const std::size_t rest_quota = out.size() + n_rest;
  for (std::size_t i = 0; i < order.size() && out.size() < n; ++i) {
    if (taken[i]) continue;
    out.push_back({order[i]->solution_id, out.size() < rest_quota ? "convincing_remaining" : "backfill"});
  }
  return out;
}

std::vector<Selected> select(std::span<const PoolCandidate> pool, const SelectionPolicy& policy) {
  policy.validate();
  std::vector<Selected> out;
  if (policy.mode == SelectionMode::topk_global) {
    for (auto& id : surface_convincing_wrong(pool, policy.k_or_n, Scope::global)) out.push_back({id, "topk_global"});
    return out;
  }
  for (const auto& [problem, candidates] : by_problem(pool)) {
    switch (policy.mode) {
      case SelectionMode::uniform: {
        if (policy.k_or_n > candidates.size()) throw std::invalid_argument("pool for " + problem + " is too small");
        std::vector<std::size_t> idx(candidates.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        // Sort first so the draw does not depend on pool order.
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return candidates[a].solution_id < candidates[b].solution_id; });
        Rng rng(derive_seed(policy.seed, problem));
        for (std::size_t i = 0; i < policy.k_or_n; ++i) {
          const std::size_t j = i + rng.uniform_index(idx.size() - i);
          std::swap(idx[i], idx[j]);
          out.push_back({candidates[idx[i]].solution_id, "uniform"});
        }
        break;
      }
      case SelectionMode::topk_per_problem:
        for (auto& id : top_wrong(candidates, policy.k_or_n)) out.push_back({id, "topk_per_problem"});
        break;
      case SelectionMode::mixed_80_20: {
        auto picked = select_mixed(candidates, policy.k_or_n, policy);
        out.insert(out.end(), picked.begin(), picked.end());
        break;
      }
      case SelectionMode::topk_global: break;
    }
  }
  return out;
}

void EfficiencySeries::validate() const {
  if (points.size() < 2) throw EfficiencyError("series '" + label + "' needs at least two points");
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!(points[i].first > 0.0)) throw EfficiencyError("series '" + label + "' has a non-positive size");
    if (i > 0 && !(points[i].first > points[i - 1].first)) {
      throw EfficiencyError("series '" + label + "' sizes are not strictly increasing");
    }
  }
}

namespace {

struct SeriesMoments {
  double mean_x = 0.0;
  double mean_y = 0.0;
  double sxx = 0.0;
  double sxy = 0.0;
};

SeriesMoments moments(const EfficiencySeries& s) {
  SeriesMoments m;
  const auto n = static_cast<double>(s.points.size());
  for (const auto& [size, perf] : s.points) {
    m.mean_x += std::log10(size) / n;
    m.mean_y += perf / n;
  }
  for (const auto& [size, perf] : s.points) {
    const double dx = std::log10(size) - m.mean_x;
    m.sxx += dx * dx;
    m.sxy += dx * (perf - m.mean_y);
  }
  return m;
}

}  // namespace

EfficiencyEstimate estimate_data_efficiency(const EfficiencySeries& a, const EfficiencySeries& b) {
  a.validate();
  b.validate();
  const SeriesMoments ma = moments(a);
  const SeriesMoments mb = moments(b);
  EfficiencyEstimate e;
  e.pooled_slope = (ma.sxy + mb.sxy) / (ma.sxx + mb.sxx);
  if (!(e.pooled_slope > 0.0)) throw EfficiencyError("series not improving with data");
  e.slope_a = ma.sxy / ma.sxx;
  e.slope_b = mb.sxy / mb.sxx;
  e.intercept_a = ma.mean_y - e.pooled_slope * ma.mean_x;
  e.intercept_b = mb.mean_y - e.pooled_slope * mb.mean_x;
  e.factor = std::pow(10.0, (e.intercept_a - e.intercept_b) / e.pooled_slope);
  return e;
}

namespace {

struct Checkpoint {
  std::size_t completed = 0;
  std::vector<dataset::LabeledSolution> dataset;
  std::vector<GenerationResult> generations;
  std::size_t audit_lines = 0;
};

std::filesystem::path checkpoint_file(const std::filesystem::path& dir) { return dir / "checkpoint.json"; }

void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& cp) {
  std::filesystem::create_directories(dir);
  json j;
  j["completed"] = cp.completed;
  j["audit_lines"] = cp.audit_lines;
  j["dataset"] = json::array();
  for (const auto& s : cp.dataset) j["dataset"].push_back(dataset::to_json(s));
  j["generations"] = json::array();
  for (const auto& g : cp.generations) {
    j["generations"].push_back(
        {{"generation", g.generation}, {"model", g.model.to_json()}, {"selected", g.selected}, {"dataset_size", g.dataset_size}});
  }
  const auto tmp = checkpoint_file(dir).string() + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw std::runtime_error("cannot write checkpoint in " + dir.string());
    out << j.dump();
  }
  std::filesystem::rename(tmp, checkpoint_file(dir));
}

std::optional<Checkpoint> load_checkpoint(const std::filesystem::path& dir) {
  if (dir.empty() || !std::filesystem::exists(checkpoint_file(dir))) return std::nullopt;
  std::ifstream in(checkpoint_file(dir));
  const json j = json::parse(in);
  Checkpoint cp;
  cp.completed = j.at("completed").get<std::size_t>();
  cp.audit_lines = j.at("audit_lines").get<std::size_t>();
  const auto ratings = dataset::RatingMap::defaults();
  for (const json& s : j.at("dataset")) cp.dataset.push_back(dataset::labeled_from_json(s, ratings));
  for (const json& g : j.at("generations")) {
    cp.generations.push_back({g.at("generation").get<std::size_t>(), rm::MicroModel::from_json(g.at("model")),
                              g.at("selected").get<std::vector<std::string>>(), g.at("dataset_size").get<std::size_t>()});
  }
  return cp;
}

// Drops audit lines written after the last checkpoint.
void truncate_audit(const std::filesystem::path& path, std::size_t keep) {
  if (path.empty() || !std::filesystem::exists(path)) return;
  std::vector<std::string> lines;
  {
    std::ifstream in(path);
    std::string line;
    while (lines.size() < keep && std::getline(in, line)) lines.push_back(line);
  }
  std::ofstream out(path, std::ios::trunc);
  for (const auto& l : lines) out << l << '\n';
}

class ConstantScorer final : public rm::ProcessScorer {
 public:
  StepProbabilities score(const Problem&, const SolutionRecord& s) const override {
    return StepProbabilities(s.steps.size(), StepProb{1.0, 0.0, 0.0});
  }
};

}  // namespace

GenerationLoopResult generation_loop(const GenerationLoopConfig& config, const std::vector<Problem>& problems,
                                     const GenerationHooks& hooks) {
  config.policy.validate();
  if (!hooks.sample_pool || !hooks.label || !hooks.train) throw std::invalid_argument("generation hooks incomplete");
  std::unordered_map<std::string, const Problem*> problem_index;
  for (const auto& p : problems) problem_index[p.id] = &p;

  Checkpoint state;
  if (auto cp = load_checkpoint(config.checkpoint_dir)) state = std::move(*cp);
  if (config.checkpoint_dir.empty() && !config.audit_path.empty()) {
    std::ofstream(config.audit_path, std::ios::trunc);
  } else {
    truncate_audit(config.audit_path, state.audit_lines);
  }
  std::optional<rm::MicroModel> current;
  if (!state.generations.empty()) current = state.generations.back().model;

  auto stage = [&](std::size_t g, std::string_view name) {
    if (hooks.on_stage) hooks.on_stage(g, name);
  };

  for (std::size_t g = state.completed; g < config.n_generations; ++g) {
    std::vector<json> audit;
    GenerationResult result;
    result.generation = g;
    try {
      stage(g, "sample");
      const auto pool = hooks.sample_pool(g);
      std::unique_ptr<rm::ProcessScorer> scorer = hooks.scorer_factory ? hooks.scorer_factory(current) : nullptr;
      if (!scorer) scorer = std::make_unique<ConstantScorer>();

      std::vector<PoolCandidate> candidates;
      std::unordered_map<std::string, const SolutionRecord*> by_id;
      candidates.reserve(pool.size());
      for (const auto& s : pool) {
        auto it = problem_index.find(s.problem_id);
        if (it == problem_index.end()) throw std::runtime_error("pool solution " + s.id + " has an unknown problem");
        if (!s.is_correct) throw std::runtime_error("pool solution " + s.id + " is ungraded");
        const auto probs = scorer->score(*it->second, s);
        validate(probs, s.steps.size());
        const double score = scoring::solution_score(s.id, probs, config.scoring).score();
        candidates.push_back({s.id, s.problem_id, score, *s.is_correct});
        if (!by_id.emplace(s.id, &s).second) throw std::runtime_error("duplicate pool solution id " + s.id);
      }

      stage(g, "select");
      SelectionPolicy policy = config.policy;
      policy.seed = derive_seed(config.seed, g);
      const auto picked = select(candidates, policy);
      std::unordered_map<std::string, std::string> reasons;
      for (const auto& p : picked) reasons[p.solution_id] = p.reason;
      for (const auto& c : candidates) {
        auto it = reasons.find(c.solution_id);
        audit.push_back({{"generation", g},
                         {"solution_id", c.solution_id},
                         {"score", c.score},
                         {"grade", c.is_correct},
                         {"selected", it != reasons.end()},
                         {"reason", it != reasons.end() ? it->second : "not_selected"}});
      }

      stage(g, "label");
      for (const auto& p : picked) {
        state.dataset.push_back(hooks.label(*by_id.at(p.solution_id)));
        result.selected.push_back(p.solution_id);
      }

      stage(g, "train");
      result.model = hooks.train(state.dataset);
      result.dataset_size = state.dataset.size();
    } catch (const GenerationError&) {
      throw;
    } catch (const std::exception& e) {
      throw GenerationError(g, e.what());
    }

    if (!config.audit_path.empty()) {
      std::ofstream out(config.audit_path, std::ios::app);
      for (const auto& a : audit) out << a.dump() << '\n';
    }
    state.audit_lines += audit.size();
    current = result.model;
    state.generations.push_back(std::move(result));
    state.completed = g + 1;
    if (!config.checkpoint_dir.empty()) save_checkpoint(config.checkpoint_dir, state);
  }
  return {std::move(state.generations), std::move(state.dataset)};
}

}  // namespace stepwise::active
