#include <gtest/gtest.h>

#include <sstream>

#include "stepwise/dataset_io.hpp"
#include "test_util.hpp"

namespace stepwise::dataset {
namespace {

using testing::solution;

LabeledSolution labeled(const std::string& id, const std::string& problem, std::vector<std::string> steps,
                        std::vector<StepLabel> labels, std::optional<std::string> truth = std::nullopt) {
  LabeledSolution s;
  s.solution = solution(id, problem, std::move(steps), std::move(truth));
  s.step_labels = std::move(labels);
  s.labeler_id = "l1";
  return s;
}

std::string canonical_line(const LabeledSolution& s) { return to_json(s).dump() + "\n"; }

TEST(ImportCanonical, ThreeWellFormedLines) {
  using enum StepLabel;
  std::string text;
  text += canonical_line(labeled("a", "p", {"1 + 1 = 2"}, {positive}, "2"));
  text += canonical_line(labeled("b", "p", {"1 + 1 = 3", "3 + 1 = 4"}, {negative}, "2"));
  text += canonical_line(labeled("c", "q", {"x"}, {neutral}));
  std::istringstream in(text);
  const auto r = import_canonical(in, RatingMap::defaults());
  EXPECT_EQ(r.records.size(), 3u);
  EXPECT_TRUE(r.diagnostics.empty());
}

TEST(ImportCanonical, UnknownRatingIsDiagnosed) {
  std::string text = canonical_line(labeled("a", "p", {"s"}, {StepLabel::positive}));
  json bad = to_json(labeled("b", "p", {"s"}, {}));
  bad["step_labels"] = json::array({2});
  text += bad.dump() + "\n";
  text += "{not json\n";
  std::istringstream in(text);
  const auto r = import_canonical(in, RatingMap::defaults());
  ASSERT_EQ(r.records.size(), 1u);
  ASSERT_EQ(r.diagnostics.size(), 2u);
  EXPECT_EQ(r.diagnostics[0].line, 2u);
  EXPECT_EQ(r.diagnostics[0].message, "unknown rating 2 at line 2");
  EXPECT_EQ(r.diagnostics[1].line, 3u);
}

TEST(ImportCanonical, NumericRatingsUseMap) {
  json j = to_json(labeled("a", "p", {"s", "t"}, {}));
  j["step_labels"] = json::array({1, -1});
  std::istringstream in(j.dump() + "\n");
  const auto r = import_canonical(in, RatingMap::defaults());
  ASSERT_EQ(r.records.size(), 1u);
  EXPECT_EQ(r.records[0].step_labels, (std::vector{StepLabel::positive, StepLabel::negative}));

  std::istringstream again(j.dump() + "\n");
  const auto flipped = import_canonical(again, RatingMap::parse("1:negative,-1:positive"));
  EXPECT_EQ(flipped.records[0].step_labels, (std::vector{StepLabel::negative, StepLabel::positive}));
}

TEST(RatingMap, ParseErrors) {
  EXPECT_THROW(RatingMap::parse("1"), std::invalid_argument);
  EXPECT_THROW(RatingMap::parse("1:good"), std::invalid_argument);
  EXPECT_THROW(RatingMap::parse(""), std::invalid_argument);
}

json prm800k_line(int rating_last, const std::string& finish, bool qc) {
  json steps = json::array();
  steps.push_back({{"completions", json::array({{{"text", "2 plus 3 = 5"}, {"rating", 1}}})}, {"chosen_completion", 0},
                   {"human_completion", nullptr}});
  steps.push_back({{"completions", json::array({{{"text", "wrong"}, {"rating", -1}},
                                                {{"text", "5 times 2 = 10"}, {"rating", rating_last}}})},
                   {"chosen_completion", 1},
                   {"human_completion", nullptr}});
  steps.push_back({{"completions", nullptr}, {"chosen_completion", nullptr}, {"human_completion", "# Answer\n\n10"}});
  return {{"labeler", "lab-7"},
          {"timestamp", "2022-07-17T16:56:51"},
          {"generation", 3},
          {"is_quality_control_question", qc},
          {"is_initial_screening_question", false},
          {"question", {{"problem", "Compute (2+3)*2."}, {"ground_truth_answer", "10"}}},
          {"label", {{"steps", steps}, {"total_time", 1000}, {"finish_reason", finish}}}};
}

TEST(ImportMapped, Prm800kLayout) {
  std::string text = prm800k_line(1, "solution", false).dump() + "\n";
  text += prm800k_line(0, "give_up", false).dump() + "\n";
  text += prm800k_line(1, "solution", true).dump() + "\n";
  text += prm800k_line(5, "solution", false).dump() + "\n";
  std::istringstream in(text);
  const auto r = import_mapped(in, FieldMapping::prm800k(), RatingMap::defaults(), "phase2_train");
  ASSERT_EQ(r.records.size(), 3u);
  ASSERT_EQ(r.diagnostics.size(), 1u);
  EXPECT_EQ(r.diagnostics[0].message, "unknown rating 5 at line 4");
  ASSERT_EQ(r.problems.size(), 1u);
  EXPECT_EQ(r.problems[0].ground_truth_answer, "10");

  const auto& first = r.records[0];
  EXPECT_EQ(first.solution.steps, (std::vector<std::string>{"2 plus 3 = 5", "5 times 2 = 10", "# Answer\n\n10"}));
  EXPECT_EQ(first.step_labels, (std::vector{StepLabel::positive, StepLabel::positive, StepLabel::positive}));
  EXPECT_EQ(first.solution.id, "phase2_train:1");
  EXPECT_EQ(first.solution.source.generation, 3u);
  EXPECT_EQ(first.labeler_id, "lab-7");
  EXPECT_TRUE(first.completed);
  EXPECT_FALSE(r.records[1].completed);
  EXPECT_TRUE(r.records[2].is_quality_control);
  EXPECT_EQ(filter_training(r.records).size(), 1u);
}

TEST(FieldMapping, JsonRoundTrip) {
  const auto m = FieldMapping::prm800k();
  EXPECT_EQ(FieldMapping::from_json(m.to_json()).to_json(), m.to_json());
}

TEST(FilterTraining, DropsQcAndIncomplete) {
  auto normal = labeled("a", "p", {"s"}, {StepLabel::positive});
  auto qc = labeled("b", "p", {"s"}, {StepLabel::positive});
  qc.is_quality_control = true;
  auto incomplete = labeled("c", "p", {"s"}, {});
  incomplete.completed = false;
  const auto out = filter_training({normal, qc, incomplete});
  ASSERT_EQ(out.size(), 1u);
  EXPECT_EQ(out[0], normal);
  EXPECT_EQ(filter_training(out), out);
  EXPECT_EQ(filter_training({normal, normal}).size(), 2u);
}

TEST(ComputeStats, ForcedArithmetic) {
  using enum StepLabel;
  const auto stats = compute_stats({labeled("a", "p", {"1 + 1 = 2", "Answer: 2"}, {positive, positive}, "2"),
                                    labeled("b", "p", {"1 + 1 = 3", "Answer: 3"}, {positive, negative}, "2")});
  EXPECT_DOUBLE_EQ(*stats.combined.pct_end_correct(), 50.0);
  EXPECT_DOUBLE_EQ(*stats.combined.pct_correct_steps(), 75.0);
  EXPECT_EQ(stats.combined.n_problems, 1u);
}

TEST(ComputeStats, NeutralPolicyAndEmptyInput) {
  const auto data = std::vector{labeled("a", "p", {"s", "t"}, {StepLabel::neutral, StepLabel::positive})};
  EXPECT_DOUBLE_EQ(*compute_stats(data).combined.pct_correct_steps(), 100.0);
  EXPECT_DOUBLE_EQ(*compute_stats(data, false).combined.pct_correct_steps(), 50.0);
  const auto empty = compute_stats({});
  EXPECT_EQ(empty.combined.n_solutions, 0u);
  EXPECT_FALSE(empty.combined.pct_end_correct());
  EXPECT_TRUE(empty.to_json()["pct_end_correct"].is_null());
}

TEST(ComputeStats, CountsAreAdditive) {
  using enum StepLabel;
  std::vector<LabeledSolution> a, b;
  for (int i = 0; i < 6; ++i) {
    auto s = labeled("s" + std::to_string(i), "p" + std::to_string(i % 3), {"1 + 1 = 2", "Answer: 2"},
                     {positive, i % 2 ? negative : neutral}, i % 3 ? "2" : "5");
    s.solution.source.phase = 1 + i % 2;
    (i < 3 ? a : b).push_back(s);
  }
  auto all = a;
  all.insert(all.end(), b.begin(), b.end());
  const auto sa = compute_stats(a), sb = compute_stats(b), sall = compute_stats(all);
  EXPECT_EQ(sall.combined.n_step_labels, sa.combined.n_step_labels + sb.combined.n_step_labels);
  EXPECT_EQ(sall.combined.n_solutions, sa.combined.n_solutions + sb.combined.n_solutions);
  EXPECT_EQ(sall.combined.n_end_correct, sa.combined.n_end_correct + sb.combined.n_end_correct);
  EXPECT_EQ(sall.combined.n_correct_steps, sa.combined.n_correct_steps + sb.combined.n_correct_steps);
  EXPECT_EQ(sall.per_phase.at(1).n_solutions + sall.per_phase.at(2).n_solutions, 6u);
}

TEST(Export, RoundTripIsByteStable) {
  using enum StepLabel;
  auto qc = labeled("b", "p", {"1 + 1 = 2", "Answer: 2"}, {positive, negative}, "2");
  qc.is_quality_control = true;
  const std::vector data{labeled("a", "p", {"1 + 1 = 2"}, {positive}, "2"), qc};
  std::ostringstream first;
  export_labeled(first, data);
  std::istringstream in(first.str());
  const auto back = import_canonical(in, RatingMap::defaults());
  EXPECT_EQ(back.records, data);
  std::ostringstream second;
  export_labeled(second, back.records);
  EXPECT_EQ(first.str(), second.str());
}

TEST(Files, ProblemsAndSolutions) {
  testing::TempDir dir;
  const std::vector<Problem> problems{{"p1", "q", "2", std::nullopt, 3, Split::train}};
  write_problems(dir / "problems.jsonl", problems);
  EXPECT_EQ(read_problems(dir / "problems.jsonl")[0].difficulty_level, 3);
  const std::vector sols{solution("s1", "p1", {"Answer: 2"}, "2")};
  write_solutions(dir / "solutions.jsonl", sols);
  EXPECT_EQ(read_solutions(dir / "solutions.jsonl"), sols);
  EXPECT_THROW(read_problems(dir / "missing.jsonl"), std::runtime_error);
}

}  // namespace
}  // namespace stepwise::dataset
