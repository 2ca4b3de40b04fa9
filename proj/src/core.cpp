#include "stepwise/core.hpp"

#include <cctype>
#include <cmath>
#include <stdexcept>

namespace stepwise {

namespace {

constexpr std::string_view kBoxed = "\\boxed{";

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

// Content of the brace group opening at `open` (index of '{'), or nullopt if
// unbalanced.
std::optional<std::pair<std::size_t, std::size_t>> brace_group(std::string_view s, std::size_t open) {
  int depth = 0;
  for (std::size_t i = open; i < s.size(); ++i) {
    if (s[i] == '{') {
      ++depth;
    } else if (s[i] == '}') {
      if (--depth == 0) return std::make_pair(open + 1, i);
    }
  }
  return std::nullopt;
}

std::optional<std::string> last_boxed(std::string_view s) {
  std::size_t pos = s.rfind(kBoxed);
  while (pos != std::string_view::npos) {
    if (auto g = brace_group(s, pos + kBoxed.size() - 1)) {
      return std::string(s.substr(g->first, g->second - g->first));
    }
    if (pos == 0) break;
    pos = s.rfind(kBoxed, pos - 1);
  }
  return std::nullopt;
}

std::string strip_wrappers(std::string_view input) {
  std::string s;
  for (char c : input) {
    if (c != '$') s.push_back(c);
  }
  while (true) {
    s = trim(s);
    if (s.rfind(kBoxed, 0) != 0) break;
    auto g = brace_group(s, kBoxed.size() - 1);
    if (!g || g->second != s.size() - 1) break;
    s = s.substr(g->first, g->second - g->first);
  }
  return s;
}

std::string collapse_whitespace(std::string_view s) {
  std::string out;
  bool pending_space = false;
  for (char c : s) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

// \frac{a}{b} and \dfrac{a}{b} with integer a, b.
std::optional<Rational> parse_latex_fraction(std::string_view s) {
  for (std::string_view prefix : {std::string_view("\\frac{"), std::string_view("\\dfrac{")}) {
    if (s.rfind(prefix, 0) != 0) continue;
    auto num = brace_group(s, prefix.size() - 1);
    if (!num || num->second + 1 >= s.size() || s[num->second + 1] != '{') return std::nullopt;
    auto den = brace_group(s, num->second + 1);
    if (!den || den->second != s.size() - 1) return std::nullopt;
    const std::string text = trim(s.substr(num->first, num->second - num->first)) + "/" +
                             trim(s.substr(den->first, den->second - den->first));
    return Rational::parse(text);
  }
  return std::nullopt;
}

}  // namespace

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && is_space(s[b])) ++b;
  while (e > b && is_space(s[e - 1])) --e;
  return std::string(s.substr(b, e - b));
}

SolutionRecord make_solution(std::string id, std::string problem_id, std::vector<std::string> steps,
                             SolutionSource source, const std::optional<std::string>& ground_truth) {
  if (steps.empty()) throw std::invalid_argument("solution " + id + " has no steps");
  SolutionRecord s;
  s.id = std::move(id);
  s.problem_id = std::move(problem_id);
  s.steps = std::move(steps);
  s.final_answer = extract_final_answer(s.steps);
  if (ground_truth) s.is_correct = grade_answer(s.final_answer, *ground_truth);
  s.source = std::move(source);
  return s;
}

std::string_view to_string(StepLabel label) {
  switch (label) {
    case StepLabel::positive: return "positive";
    case StepLabel::neutral: return "neutral";
    case StepLabel::negative: return "negative";
  }
  return "negative";
}

std::optional<StepLabel> parse_step_label(std::string_view text) {
  if (text == "positive") return StepLabel::positive;
  if (text == "neutral") return StepLabel::neutral;
  if (text == "negative") return StepLabel::negative;
  return std::nullopt;
}

bool is_valid(const StepProb& p, double tol) {
  for (double v : {p.p_positive, p.p_neutral, p.p_negative}) {
    if (!std::isfinite(v) || v < 0.0) return false;
  }
  return std::abs(p.p_positive + p.p_neutral + p.p_negative - 1.0) <= tol;
}

void validate(const StepProbabilities& probs, std::size_t expected_steps) {
  if (probs.size() != expected_steps) {
    throw std::invalid_argument("expected " + std::to_string(expected_steps) + " step triples, got " +
                                std::to_string(probs.size()));
  }
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (!is_valid(probs[i])) throw std::invalid_argument("invalid probability triple at step " + std::to_string(i));
  }
}

bool CanonicalAnswer::operator==(const CanonicalAnswer& o) const {
  if (kind != o.kind) return false;
  return kind == Kind::exact_rational ? rational == o.rational : text == o.text;
}

bool CanonicalAnswer::operator<(const CanonicalAnswer& o) const {
  if (kind != o.kind) return kind == Kind::exact_rational;
  return kind == Kind::exact_rational ? rational < o.rational : text < o.text;
}

std::string CanonicalAnswer::render() const {
  return kind == Kind::exact_rational ? rational.str() : text;
}

std::string extract_final_answer(const std::vector<std::string>& steps) {
  if (steps.empty()) return {};
  const std::string_view last = steps.back();
  if (auto boxed = last_boxed(last)) return trim(*boxed);
  for (std::string_view marker : {std::string_view("Answer:"), std::string_view("=")}) {
    const auto pos = last.rfind(marker);
    if (pos == std::string_view::npos) continue;
    std::string after = trim(last.substr(pos + marker.size()));
    if (!after.empty()) return after;
  }
  return trim(last);
}

CanonicalAnswer canonicalize(std::string_view answer) {
  const std::string stripped = strip_wrappers(answer);
  CanonicalAnswer out;
  std::optional<Rational> value = Rational::parse(stripped);
  if (!value) value = parse_latex_fraction(stripped);
  if (value) {
    out.kind = CanonicalAnswer::Kind::exact_rational;
    out.rational = *value;
    return out;
  }
  out.kind = CanonicalAnswer::Kind::normalized_string;
  out.text = collapse_whitespace(stripped);
  return out;
}

bool grade_answer(std::string_view candidate, std::string_view ground_truth) {
  return canonicalize(candidate) == canonicalize(ground_truth);
}

std::string_view to_string(Split split) {
  switch (split) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::ood: return "ood";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::train;
  if (text == "test") return Split::test;
  if (text == "ood") return Split::ood;
  throw std::invalid_argument("unknown split '" + std::string(text) + "'");
}

json to_json(const Problem& p) {
  json j = {{"id", p.id},
            {"statement", p.statement},
            {"ground_truth_answer", p.ground_truth_answer},
            {"split", to_string(p.split)}};
  if (p.subject) j["subject"] = *p.subject;
  if (p.difficulty_level) j["difficulty_level"] = *p.difficulty_level;
  return j;
}

json to_json(const SolutionRecord& s) {
  json j = {{"id", s.id},
            {"problem_id", s.problem_id},
            {"steps", s.steps},
            {"final_answer", s.final_answer},
            {"source",
             {{"generator_id", s.source.generator_id},
              {"phase", s.source.phase},
              {"generation", s.source.generation}}}};
  if (s.is_correct) j["is_correct"] = *s.is_correct;
  return j;
}

Problem problem_from_json(const json& j) {
  Problem p;
  p.id = j.at("id").get<std::string>();
  p.statement = j.value("statement", "");
  p.ground_truth_answer = j.value("ground_truth_answer", "");
  p.split = parse_split(j.value("split", "train"));
  if (j.contains("subject") && !j["subject"].is_null()) p.subject = j["subject"].get<std::string>();
  if (j.contains("difficulty_level") && !j["difficulty_level"].is_null()) {
    const int level = j["difficulty_level"].get<int>();
    if (level < 1 || level > 5) throw std::invalid_argument("difficulty_level out of range for " + p.id);
    p.difficulty_level = level;
  }
  if (p.id.empty()) throw std::invalid_argument("problem id is empty");
  if (p.split != Split::ood && trim(p.ground_truth_answer).empty()) {
    throw std::invalid_argument("problem " + p.id + " has no ground truth answer");
  }
  return p;
}

SolutionRecord solution_from_json(const json& j) {
  SolutionSource source;
  if (j.contains("source")) {
    const json& src = j["source"];
    source.generator_id = src.value("generator_id", "");
    source.phase = src.value("phase", 2);
    source.generation = src.value("generation", 0u);
  }
  SolutionRecord s = make_solution(j.at("id").get<std::string>(), j.at("problem_id").get<std::string>(),
                                   j.at("steps").get<std::vector<std::string>>(), std::move(source));
  if (j.contains("final_answer") && j["final_answer"].get<std::string>() != s.final_answer) {
    throw std::invalid_argument("solution " + s.id + ": final_answer does not match its last step");
  }
  if (j.contains("is_correct") && !j["is_correct"].is_null()) s.is_correct = j["is_correct"].get<bool>();
  return s;
}

}  // namespace stepwise
