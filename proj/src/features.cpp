#include "stepwise/features.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <stdexcept>

#include "stepwise/core.hpp"
#include "stepwise/rng.hpp"

namespace stepwise::rm {

namespace {

constexpr std::uint64_t kStepSalt = 0x5354455000000001ULL;
constexpr std::uint64_t kProblemSalt = 0x50524f4200000002ULL;

void merge_duplicates(SparseVector& v) {
  std::sort(v.begin(), v.end(), [](const SparseEntry& a, const SparseEntry& b) { return a.index < b.index; });
  std::size_t w = 0;
  for (std::size_t r = 0; r < v.size(); ++r) {
    if (w > 0 && v[w - 1].index == v[r].index) {
      v[w - 1].value += v[r].value;
    } else {
      v[w++] = v[r];
    }
  }
  v.resize(w);
}

}  // namespace

std::string_view op_word(ArithmeticOp op) {
  switch (op) {
    case ArithmeticOp::add: return "plus";
    case ArithmeticOp::sub: return "minus";
    case ArithmeticOp::mul: return "times";
    case ArithmeticOp::div: return "divided by";
  }
  return "plus";
}

Rational apply(ArithmeticOp op, const Rational& lhs, const Rational& rhs) {
  switch (op) {
    case ArithmeticOp::add: return lhs + rhs;
    case ArithmeticOp::sub: return lhs - rhs;
    case ArithmeticOp::mul: return lhs * rhs;
    case ArithmeticOp::div: return lhs / rhs;
  }
  return lhs;
}

std::optional<ArithmeticClaim> parse_arithmetic_claim(std::string_view text) {
  const auto eq = text.rfind(" = ");
  if (eq == std::string_view::npos) return std::nullopt;
  const std::string_view left = text.substr(0, eq);
  auto result = Rational::parse(trim(text.substr(eq + 3)));
  if (!result) return std::nullopt;
  for (ArithmeticOp op : {ArithmeticOp::add, ArithmeticOp::sub, ArithmeticOp::mul, ArithmeticOp::div}) {
    const std::string needle = " " + std::string(op_word(op)) + " ";
    const auto pos = left.find(needle);
    if (pos == std::string_view::npos) continue;
    auto lhs = Rational::parse(trim(left.substr(0, pos)));
    auto rhs = Rational::parse(trim(left.substr(pos + needle.size())));
    if (!lhs || !rhs) return std::nullopt;
    return ArithmeticClaim{*lhs, op, *rhs, *result};
  }
  return std::nullopt;
}

std::string format_arithmetic_claim(const ArithmeticClaim& claim) {
  return claim.lhs.str() + " " + std::string(op_word(claim.op)) + " " + claim.rhs.str() + " = " + claim.result.str();
}

Featurizer::Featurizer(std::size_t feature_dim, int ngram) : dim_(feature_dim), ngram_(ngram) {
  if (dim_ <= kNumDenseSlots) throw std::invalid_argument("feature_dim too small for the dense slots");
  if (ngram_ < 1) throw std::invalid_argument("ngram must be >= 1");
}

void Featurizer::add_ngrams(std::string_view text, std::uint64_t salt, SparseVector& out) const {
  std::string lowered(text);
  for (char& c : lowered) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  const auto n = static_cast<std::size_t>(ngram_);
  if (lowered.size() < n) {
    if (lowered.empty()) return;
    lowered.append(n - lowered.size(), ' ');
  }
  const std::size_t count = lowered.size() - n + 1;
  const double value = 1.0 / std::sqrt(static_cast<double>(count));
  const std::uint64_t buckets = dim_ - kNumDenseSlots;
  const std::size_t before = out.size();
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t h = splitmix64(fnv1a64(std::string_view(lowered).substr(i, n)) ^ salt);
    out.push_back({static_cast<std::uint32_t>(kNumDenseSlots + h % buckets), value});
  }
  SparseVector tail(out.begin() + static_cast<std::ptrdiff_t>(before), out.end());
  merge_duplicates(tail);
  out.resize(before);
  out.insert(out.end(), tail.begin(), tail.end());
}

std::vector<SparseVector> Featurizer::featurize(std::string_view problem_statement,
                                                const std::vector<std::string>& steps) const {
  SparseVector problem_part;
  add_ngrams(problem_statement, kProblemSalt, problem_part);

  std::vector<SparseVector> out;
  out.reserve(steps.size());
  std::optional<Rational> previous_value;
  for (std::size_t i = 0; i < steps.size(); ++i) {
    SparseVector v;
    v.push_back({kSlotStepIndex, static_cast<double>(i) / 10.0});
    v.push_back({kSlotStepLength, static_cast<double>(steps[i].size()) / 100.0});
    if (i + 1 == steps.size()) v.push_back({kSlotIsLast, 1.0});
    if (i == 0) v.push_back({kSlotIsFirst, 1.0});
    const auto claim = parse_arithmetic_claim(steps[i]);
    if (claim) {
      v.push_back({kSlotParsed, 1.0});
      bool consistent = false;
      try {
        consistent = apply(claim->op, claim->lhs, claim->rhs) == claim->result;
      } catch (const std::exception&) {
        consistent = false;
      }
      v.push_back({consistent ? kSlotConsistent : kSlotInconsistent, 1.0});
      if (previous_value) v.push_back({*previous_value == claim->lhs ? kSlotChainMatch : kSlotChainMismatch, 1.0});
      if (!claim->result.is_integer()) v.push_back({kSlotNonInteger, 1.0});
      previous_value = claim->result;
    } else {
      previous_value.reset();
    }
    SparseVector hashed;
    add_ngrams(steps[i], kStepSalt, hashed);
    hashed.insert(hashed.end(), problem_part.begin(), problem_part.end());
    merge_duplicates(hashed);
    v.insert(v.end(), hashed.begin(), hashed.end());
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace stepwise::rm
