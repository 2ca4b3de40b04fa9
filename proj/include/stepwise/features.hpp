#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "stepwise/micro_model.hpp"
#include "stepwise/rational.hpp"

namespace stepwise::rm {

enum class ArithmeticOp { add, sub, mul, div };

// A step of the form "<lhs> <op> <rhs> = <result>", with op spelled
// plus / minus / times / divided by.
struct ArithmeticClaim {
  Rational lhs;
  ArithmeticOp op = ArithmeticOp::add;
  Rational rhs;
  Rational result;
};

std::optional<ArithmeticClaim> parse_arithmetic_claim(std::string_view text);
std::string format_arithmetic_claim(const ArithmeticClaim& claim);
std::string_view op_word(ArithmeticOp op);
// Throws std::domain_error on division by zero.
Rational apply(ArithmeticOp op, const Rational& lhs, const Rational& rhs);

// Fixed slots at the bottom of the feature space; hashed n-grams fill the rest.
enum DenseSlot : std::uint32_t {
  kSlotStepIndex = 0,
  kSlotStepLength,
  kSlotIsLast,
  kSlotIsFirst,
  kSlotParsed,
  kSlotConsistent,
  kSlotInconsistent,
  kSlotChainMatch,
  kSlotChainMismatch,
  kSlotNonInteger,
  kNumDenseSlots = 16,
};

class Featurizer {
 public:
  explicit Featurizer(std::size_t feature_dim = 1u << 16, int ngram = 3);

  std::size_t feature_dim() const { return dim_; }

  // Features for every step of one solution; the problem-statement n-grams
  // are computed once and shared across steps.
  std::vector<SparseVector> featurize(std::string_view problem_statement, const std::vector<std::string>& steps) const;

 private:
  void add_ngrams(std::string_view text, std::uint64_t salt, SparseVector& out) const;

  std::size_t dim_;
  int ngram_;
};

}  // namespace stepwise::rm
