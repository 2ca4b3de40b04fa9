#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "stepwise/active_learning.hpp"
#include "stepwise/reward_models.hpp"
#include "stepwise/rng.hpp"
#include "stepwise/supervision.hpp"
#include "stepwise/synthetic_task.hpp"
#include "test_util.hpp"

namespace stepwise::active {
namespace {

std::set<std::string> as_set(const std::vector<std::string>& v) { return {v.begin(), v.end()}; }
std::set<std::string> ids(const std::vector<Selected>& v) {
  std::set<std::string> out;
  for (const auto& s : v) out.insert(s.solution_id);
  return out;
}

TEST(SurfaceConvincingWrong, Examples) {
  const std::vector<PoolCandidate> pool{{"a", "p", 0.9, true}, {"b", "p", 0.8, false}, {"c", "p", 0.4, false}};
  EXPECT_EQ(surface_convincing_wrong(pool, 1, Scope::per_problem), (std::vector<std::string>{"b"}));

  const std::vector<PoolCandidate> two{{"x", "P1", 0.9, false}, {"y", "P2", 0.7, false}, {"z", "P2", 0.6, false}};
  EXPECT_EQ(as_set(surface_convincing_wrong(two, 2, Scope::global)), (std::set<std::string>{"x", "y"}));

  const std::vector<PoolCandidate> none{{"a", "p", 0.9, true}};
  EXPECT_TRUE(surface_convincing_wrong(none, 3, Scope::global).empty());
  EXPECT_THROW(surface_convincing_wrong(none, 0, Scope::global), std::invalid_argument);
}

std::vector<PoolCandidate> random_pool(Rng& rng, std::size_t n, std::size_t problems) {
  std::vector<PoolCandidate> pool;
  for (std::size_t i = 0; i < n; ++i) {
    pool.push_back({"s" + std::to_string(i), "p" + std::to_string(rng.uniform_index(problems)),
                    std::round(rng.uniform01() * 10) / 10, rng.bernoulli(0.4)});
  }
  return pool;
}

// Brute force: the global top-k is the k-subset of wrong candidates whose
// sorted score list is lexicographically largest under the id tie-break.
std::set<std::string> brute_force_global(const std::vector<PoolCandidate>& pool, std::size_t k) {
  std::vector<const PoolCandidate*> wrong;
  for (const auto& c : pool) {
    if (!c.is_correct) wrong.push_back(&c);
  }
  k = std::min(k, wrong.size());
  std::set<std::string> best;
  std::vector<std::pair<double, std::string>> best_key;
  const std::size_t n = wrong.size();
  for (std::uint32_t mask = 0; mask < (1u << n); ++mask) {
    if (static_cast<std::size_t>(__builtin_popcount(mask)) != k) continue;
    std::vector<std::pair<double, std::string>> key;
    std::set<std::string> chosen;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask & (1u << i)) {
        key.emplace_back(-wrong[i]->score, wrong[i]->solution_id);
        chosen.insert(wrong[i]->solution_id);
      }
    }
    std::sort(key.begin(), key.end());
    if (best_key.empty() || key < best_key) {
      best_key = key;
      best = chosen;
    }
  }
  return best;
}

TEST(SurfaceConvincingWrong, GlobalMatchesBruteForce) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pool = random_pool(rng, 3 + rng.uniform_index(10), 3);
    const std::size_t k = 1 + rng.uniform_index(4);
    EXPECT_EQ(as_set(surface_convincing_wrong(pool, k, Scope::global)), brute_force_global(pool, k));
  }
}

TEST(SurfaceConvincingWrong, PerProblemIsNestedInK) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const auto pool = random_pool(rng, 20, 4);
    const std::size_t k = 1 + rng.uniform_index(4);
    const auto small = as_set(surface_convincing_wrong(pool, k, Scope::per_problem));
    const auto large = as_set(surface_convincing_wrong(pool, k + 1, Scope::per_problem));
    EXPECT_TRUE(std::includes(large.begin(), large.end(), small.begin(), small.end()));
  }
}

TEST(SelectMixed, AmplePoolGivesEightyTwenty) {
  std::vector<PoolCandidate> pool;
  for (int i = 0; i < 40; ++i) pool.push_back({"s" + std::to_string(10 + i), "p", 1.0 - i * 0.01, i % 3 == 0});
  const auto picked = select_mixed(pool, 10, {});
  ASSERT_EQ(picked.size(), 10u);
  std::size_t wrong = 0;
  for (const auto& s : picked) {
    for (const auto& c : pool) wrong += c.solution_id == s.solution_id && !c.is_correct;
  }
  EXPECT_EQ(wrong, 8u);
  EXPECT_EQ(std::count_if(picked.begin(), picked.end(), [](const Selected& s) { return s.reason == "convincing_wrong"; }),
            8);
}

TEST(SelectMixed, ScarceWrongAnswersAreBackfilledByScore) {
  std::vector<PoolCandidate> pool;
  for (int i = 0; i < 20; ++i) pool.push_back({"s" + std::to_string(10 + i), "p", 1.0 - i * 0.01, i >= 3});
  for (int i = 0; i < 3; ++i) pool[17 + i].is_correct = false;
  for (int i = 0; i < 3; ++i) pool[i].is_correct = true;
  const auto picked = select_mixed(pool, 10, {});
  ASSERT_EQ(picked.size(), 10u);
  std::set<std::string> expected{"s27", "s28", "s29"};
  for (int i = 0; i < 7; ++i) expected.insert("s" + std::to_string(10 + i));
  EXPECT_EQ(ids(picked), expected);
  EXPECT_THROW(select_mixed(pool, 21, {}), std::invalid_argument);
}

// Oracle: the round(0.8 n) best wrong answers by (score desc, id asc), then
// the best of what remains, found by scanning a fully sorted copy.
std::set<std::string> mixed_oracle(std::vector<PoolCandidate> pool, std::size_t n) {
  std::sort(pool.begin(), pool.end(), [](const auto& a, const auto& b) {
    return a.score != b.score ? a.score > b.score : a.solution_id < b.solution_id;
  });
  const std::size_t n_wrong = static_cast<std::size_t>(std::floor(0.8 * n + 0.5));
  std::set<std::string> out;
  for (const auto& c : pool) {
    if (out.size() < n_wrong && !c.is_correct) out.insert(c.solution_id);
  }
  for (const auto& c : pool) {
    if (out.size() < n && !out.contains(c.solution_id)) out.insert(c.solution_id);
  }
  return out;
}

TEST(SelectMixed, MatchesSortedEnumeration) {
  Rng rng(3);
  for (int trial = 0; trial < 300; ++trial) {
    const auto pool = random_pool(rng, 20, 1);
    const std::size_t n = 1 + rng.uniform_index(20);
    const auto picked = select_mixed(pool, n, {});
    EXPECT_EQ(picked.size(), n);
    EXPECT_EQ(ids(picked), mixed_oracle(pool, n));
  }
}

TEST(SelectMixed, WrongShareWhenSupplySuffices) {
  Rng rng(4);
  for (std::size_t n = 1; n <= 20; ++n) {
    std::vector<PoolCandidate> pool;
    for (std::size_t i = 0; i < 60; ++i) pool.push_back({"s" + std::to_string(i), "p", rng.uniform01(), i >= 30});
    const auto picked = select_mixed(pool, n, {});
    std::size_t wrong = 0;
    for (const auto& s : picked) wrong += std::stoi(s.solution_id.substr(1)) < 30;
    const std::size_t floor_share = round_half_up(0.8 * n);
    EXPECT_GE(wrong, floor_share);
  }
  EXPECT_EQ(round_half_up(2.5), 3u);
  EXPECT_EQ(round_half_up(1.6), 2u);
  EXPECT_EQ(round_half_up(0.4), 0u);
}

TEST(Select, ModesAndDeterminism) {
  Rng rng(5);
  const auto pool = random_pool(rng, 60, 3);
  SelectionPolicy uniform{SelectionMode::uniform, 3, 0.8, 1000, 42};
  const auto a = select(pool, uniform);
  auto shuffled = pool;
  rng.shuffle(shuffled.begin(), shuffled.end());
  EXPECT_EQ(ids(select(shuffled, uniform)), ids(a));
  EXPECT_EQ(a.size(), 9u);
  uniform.seed = 43;
  EXPECT_NE(ids(select(pool, uniform)), ids(a));

  const SelectionPolicy topk{SelectionMode::topk_global, 4, 0.8, 1000, 0};
  EXPECT_EQ(ids(select(pool, topk)), as_set(surface_convincing_wrong(pool, 4, Scope::global)));
  EXPECT_THROW(select(pool, {SelectionMode::mixed_80_20, 0, 0.8, 1000, 0}), std::invalid_argument);
  EXPECT_THROW(select(pool, {SelectionMode::mixed_80_20, 3, 1.5, 1000, 0}), std::invalid_argument);
  EXPECT_EQ(parse_selection_mode("mixed"), SelectionMode::mixed_80_20);
}

TEST(Efficiency, ClosedFormFixture) {
  const EfficiencySeries b{"uniform", {{10, 0.60}, {100, 0.70}}};
  const EfficiencySeries a{"mixed", {{10, 0.6415}, {100, 0.7415}}};
  const auto e = estimate_data_efficiency(a, b);
  EXPECT_NEAR(e.factor, std::pow(10.0, 0.0415 / 0.10), 1e-9);
  EXPECT_NEAR(e.factor, 2.60, 0.01);
  EXPECT_NEAR(e.slope_a, 0.1, 1e-12);
  EXPECT_NEAR(e.factor * estimate_data_efficiency(b, a).factor, 1.0, 1e-9);
  EXPECT_NEAR(estimate_data_efficiency(a, a).factor, 1.0, 1e-12);
  const EfficiencySeries decade{"shift", {{1, 0.60}, {10, 0.70}}};
  EXPECT_NEAR(estimate_data_efficiency(decade, b).factor, 10.0, 1e-9);
}

TEST(Efficiency, ReciprocalOnRandomSeries) {
  Rng rng(6);
  for (int trial = 0; trial < 100; ++trial) {
    EfficiencySeries a{"a", {}}, b{"b", {}};
    for (double s : {10.0, 30.0, 100.0}) {
      a.points.emplace_back(s, 0.5 + 0.1 * std::log10(s) + 0.02 * rng.uniform01());
      b.points.emplace_back(s, 0.4 + 0.1 * std::log10(s) + 0.02 * rng.uniform01());
    }
    EXPECT_NEAR(estimate_data_efficiency(a, b).factor * estimate_data_efficiency(b, a).factor, 1.0, 1e-9);
  }
}

TEST(Efficiency, Errors) {
  const EfficiencySeries flat{"flat", {{10, 0.5}, {100, 0.5}}};
  EXPECT_THROW(estimate_data_efficiency(flat, flat), EfficiencyError);
  EXPECT_THROW(estimate_data_efficiency({"one", {{10, 0.5}}}, flat), EfficiencyError);
  EXPECT_THROW(estimate_data_efficiency({"dec", {{100, 0.5}, {10, 0.6}}}, flat), EfficiencyError);
  EXPECT_THROW(estimate_data_efficiency({"neg", {{0, 0.5}, {10, 0.6}}}, flat), EfficiencyError);
}

// Synthetic world for the generation loop.
struct LoopWorld {
  std::vector<synth::ChainProblem> chains = synth::generate_problems(30, {4, 8}, 77);
  std::vector<Problem> problems;
  rm::StatementIndex statements;
  synth::NoisySolverConfig solver{0.25, 0.05, 5};

  LoopWorld() {
    for (const auto& c : chains) problems.push_back(c.to_problem());
    statements = rm::index_statements(problems);
  }

  GenerationHooks hooks() const {
    GenerationHooks h;
    h.sample_pool = [this](std::size_t g) {
      std::vector<SolutionRecord> out;
      for (const auto& c : chains) {
        auto s = synth::sample_solutions(c, solver, 16, g * 16);
        out.insert(out.end(), s.begin(), s.end());
      }
      return out;
    };
    h.scorer_factory = [](const std::optional<rm::MicroModel>& m) -> std::unique_ptr<rm::ProcessScorer> {
      if (!m) return nullptr;
      return std::make_unique<rm::MicroProcessScorer>(*m);
    };
    h.label = [this](const SolutionRecord& s) {
      dataset::LabeledSolution l;
      l.solution = s;
      const auto& chain = *std::find_if(chains.begin(), chains.end(), [&](const auto& c) { return c.id == s.problem_id; });
      std::vector<supervision::Verdict> v;
      for (StepLabel x : synth::label_steps(s, chain).labels) {
        v.push_back(x == StepLabel::negative ? supervision::Verdict::incorrect : supervision::Verdict::correct);
      }
      l.step_labels = supervision::process_labels_from_verdicts(v);
      return l;
    };
    h.train = [this](const std::vector<dataset::LabeledSolution>& data) {
      rm::Hyperparams hp;
      hp.feature_dim = 1u << 12;
      return rm::train_prm(data, statements, hp);
    };
    return h;
  }
};

TEST(GenerationLoop, MixedPolicyAuditShowsWrongAnswerShare) {
  testing::TempDir dir;
  LoopWorld world;
  GenerationLoopConfig cfg;
  cfg.n_generations = 3;
  cfg.policy = {SelectionMode::mixed_80_20, 5, 0.8, 1000, 0};
  cfg.audit_path = dir / "audit.jsonl";
  const auto result = generation_loop(cfg, world.problems, world.hooks());
  ASSERT_EQ(result.generations.size(), 3u);
  EXPECT_EQ(result.dataset.size(), 3u * 30 * 5);

  std::map<std::size_t, std::pair<std::size_t, std::size_t>> share;  // generation -> (wrong, selected)
  std::ifstream in(cfg.audit_path);
  std::string line;
  std::size_t lines = 0;
  while (std::getline(in, line)) {
    ++lines;
    const json j = json::parse(line);
    if (!j["selected"].get<bool>()) continue;
    auto& [wrong, total] = share[j["generation"].get<std::size_t>()];
    ++total;
    wrong += !j["grade"].get<bool>();
  }
  EXPECT_EQ(lines, 3u * 30 * 16);
  for (const auto& [g, counts] : share) {
    EXPECT_EQ(counts.second, 150u);
    EXPECT_GE(static_cast<double>(counts.first) / counts.second, 0.8) << "generation " << g;
  }
}

TEST(GenerationLoop, UniformSingleGenerationIsPlainTraining) {
  LoopWorld world;
  GenerationLoopConfig cfg;
  cfg.policy = {SelectionMode::uniform, 4, 0.8, 1000, 0};
  cfg.seed = 9;
  const auto hooks = world.hooks();
  const auto result = generation_loop(cfg, world.problems, hooks);
  SelectionPolicy direct = cfg.policy;
  direct.seed = derive_seed(cfg.seed, 0);
  std::vector<PoolCandidate> candidates;
  std::map<std::string, SolutionRecord> by_id;
  for (const auto& s : hooks.sample_pool(0)) {
    candidates.push_back({s.id, s.problem_id, 1.0, *s.is_correct});
    by_id[s.id] = s;
  }
  std::vector<dataset::LabeledSolution> data;
  for (const auto& sel : select(candidates, direct)) data.push_back(hooks.label(by_id.at(sel.solution_id)));
  EXPECT_EQ(result.dataset, data);
  EXPECT_EQ(result.generations[0].model, hooks.train(data));
}

TEST(GenerationLoop, ResumeAfterFailureMatchesUninterruptedRun) {
  LoopWorld world;
  GenerationLoopConfig cfg;
  cfg.n_generations = 3;
  cfg.policy = {SelectionMode::mixed_80_20, 3, 0.8, 1000, 0};
  const auto uninterrupted = generation_loop(cfg, world.problems, world.hooks());

  testing::TempDir dir;
  cfg.checkpoint_dir = dir / "ckpt";
  cfg.audit_path = dir / "audit.jsonl";
  auto failing = world.hooks();
  failing.on_stage = [](std::size_t g, std::string_view stage) {
    if (g == 1 && stage == "train") throw std::runtime_error("induced failure");
  };
  try {
    generation_loop(cfg, world.problems, failing);
    FAIL() << "expected the induced failure";
  } catch (const GenerationError& e) {
    EXPECT_EQ(e.generation(), 1u);
  }
  const auto resumed = generation_loop(cfg, world.problems, world.hooks());
  ASSERT_EQ(resumed.generations.size(), 3u);
  for (std::size_t g = 0; g < 3; ++g) {
    EXPECT_EQ(resumed.generations[g].model, uninterrupted.generations[g].model);
    EXPECT_EQ(resumed.generations[g].selected, uninterrupted.generations[g].selected);
  }
  std::ifstream in(cfg.audit_path);
  EXPECT_EQ(std::count(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>(), '\n'), 3 * 30 * 16);
}

}  // namespace
}  // namespace stepwise::active
