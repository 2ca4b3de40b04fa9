#include <gtest/gtest.h>

#include "stepwise/core.hpp"
#include "stepwise/rng.hpp"
#include "test_util.hpp"

namespace stepwise {
namespace {

TEST(ExtractFinalAnswer, BoxedWins) {
  EXPECT_EQ(extract_final_answer({"...", "So the answer is $\\boxed{12}$."}), "12");
}

TEST(ExtractFinalAnswer, AnswerMarker) { EXPECT_EQ(extract_final_answer({"x = 3", "Answer: 3"}), "3"); }

TEST(ExtractFinalAnswer, FallsBackToWholeStep) {
  EXPECT_EQ(extract_final_answer({"We conclude 7."}), "We conclude 7.");
}

TEST(ExtractFinalAnswer, LastMatchAndPriority) {
  EXPECT_EQ(extract_final_answer({"\\boxed{1} then \\boxed{2}"}), "2");
  EXPECT_EQ(extract_final_answer({"a = 4 so b = 5"}), "5");
  EXPECT_EQ(extract_final_answer({"Answer: 9 = nine"}), "9 = nine");
  EXPECT_EQ(extract_final_answer({"\\boxed{\\frac{1}{2}} = 0.5"}), "\\frac{1}{2}");
  EXPECT_EQ(extract_final_answer({"x = 1", "  plain  "}), "plain");
}

TEST(Canonicalize, Examples) {
  const auto half = canonicalize("\\boxed{1/2}");
  EXPECT_EQ(half.kind, CanonicalAnswer::Kind::exact_rational);
  EXPECT_EQ(half.rational, Rational(1, 2));
  EXPECT_EQ(canonicalize("0.5"), half);
  const auto sym = canonicalize("x+1");
  EXPECT_EQ(sym.kind, CanonicalAnswer::Kind::normalized_string);
  EXPECT_EQ(sym.text, "x+1");
}

TEST(Canonicalize, StripsWrappersAndCollapsesWhitespace) {
  EXPECT_EQ(canonicalize(" $12$ "), canonicalize("12"));
  EXPECT_EQ(canonicalize("-6/4").rational, Rational(-3, 2));
  EXPECT_EQ(canonicalize("a   +\tb").text, "a + b");
}

TEST(Canonicalize, Idempotent) {
  for (const char* s : {"1/2", "0.125", "  \\boxed{7} ", "x + 1", "$-3$", "12/8", "hello   world", "1e5"}) {
    const auto c = canonicalize(s);
    EXPECT_EQ(canonicalize(c.render()), c) << s;
  }
}

TEST(GradeAnswer, Examples) {
  EXPECT_TRUE(grade_answer("1/2", "0.5"));
  EXPECT_TRUE(grade_answer("12", "12"));
  EXPECT_FALSE(grade_answer("1+x", "x+1"));
}

TEST(GradeAnswer, SymmetricAndReflexive) {
  const std::vector<std::string> answers = {"1/2", "0.5", "3", "x", "3.0", "$3$", "\\boxed{x}", "2/4", "-1"};
  for (const auto& a : answers) {
    EXPECT_TRUE(grade_answer(a, a)) << a;
    for (const auto& b : answers) EXPECT_EQ(grade_answer(a, b), grade_answer(b, a)) << a << " vs " << b;
  }
}

TEST(Rational, LowestTermsAndArithmetic) {
  EXPECT_EQ(Rational(6, -4).num(), -3);
  EXPECT_EQ(Rational(6, -4).den(), 2);
  EXPECT_EQ(Rational(1, 3) + Rational(1, 6), Rational(1, 2));
  EXPECT_EQ(Rational(3) / Rational(4), Rational(3, 4));
  EXPECT_THROW(Rational(1, 0), std::exception);
  EXPECT_THROW(Rational(1) / Rational(0), std::exception);
  EXPECT_FALSE(Rational::parse("1/0"));
  EXPECT_FALSE(Rational::parse("abc"));
  EXPECT_EQ(*Rational::parse("-.25"), Rational(-1, 4));
}

TEST(Rational, OverflowThrows) {
  const Rational big(std::numeric_limits<std::int64_t>::max());
  EXPECT_THROW(big * Rational(2), std::overflow_error);
}

TEST(MakeSolution, GradesAgainstTruth) {
  const auto s = testing::solution("s", "p", {"2 + 2 = 4", "Answer: 4"}, "4");
  EXPECT_EQ(s.final_answer, "4");
  ASSERT_TRUE(s.is_correct.has_value());
  EXPECT_TRUE(*s.is_correct);
  EXPECT_THROW(testing::solution("e", "p", {}), std::invalid_argument);
}

TEST(Validate, ProbabilityTriples) {
  EXPECT_NO_THROW(validate({{0.7, 0.2, 0.1}}, 1));
  EXPECT_THROW(validate({{0.7, 0.2, 0.2}}, 1), std::invalid_argument);
  EXPECT_THROW(validate({{1.0, 0.0, 0.0}}, 2), std::invalid_argument);
  EXPECT_THROW(validate({{-0.1, 0.6, 0.5}}, 1), std::invalid_argument);
}

TEST(Json, ProblemAndSolutionRoundTrip) {
  Problem p{"p1", "what?", "3", "algebra", 2, Split::test};
  const Problem back = problem_from_json(to_json(p));
  EXPECT_EQ(back.id, p.id);
  EXPECT_EQ(back.subject, p.subject);
  EXPECT_EQ(back.difficulty_level, p.difficulty_level);
  EXPECT_EQ(back.split, p.split);

  const auto s = make_solution("s1", "p1", {"1 + 2 = 3"}, {"gen", 1, 4}, std::string("3"));
  EXPECT_EQ(solution_from_json(to_json(s)), s);

  json tampered = to_json(s);
  tampered["final_answer"] = "4";
  EXPECT_THROW(solution_from_json(tampered), std::invalid_argument);
}

TEST(Rng, DeterministicAndUnbiasedRange) {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next(), b.next());
  Rng r(1);
  std::array<int, 7> counts{};
  for (int i = 0; i < 70000; ++i) ++counts[r.uniform_index(7)];
  for (int c : counts) EXPECT_NEAR(c, 10000, 500);
  EXPECT_NE(derive_seed(1, "a"), derive_seed(1, "b"));
  EXPECT_NE(derive_seed(1, 2), derive_seed(2, 1));
}

}  // namespace
}  // namespace stepwise
