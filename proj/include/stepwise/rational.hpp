#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

namespace stepwise {

// Exact rational with 64-bit numerator/denominator, always in lowest terms
// with a positive denominator. Arithmetic throws std::overflow_error rather
// than wrapping.
class Rational {
 public:
  constexpr Rational() = default;
  Rational(std::int64_t value) : num_(value) {}  // NOLINT(implicit)
  Rational(std::int64_t num, std::int64_t den);

  std::int64_t num() const { return num_; }
  std::int64_t den() const { return den_; }
  bool is_integer() const { return den_ == 1; }

  Rational operator+(const Rational& o) const;
  Rational operator-(const Rational& o) const;
  Rational operator*(const Rational& o) const;
  Rational operator/(const Rational& o) const;
  Rational operator-() const;

  bool operator==(const Rational& o) const = default;
  bool operator<(const Rational& o) const;

  double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

  // "n" for integers, "n/d" otherwise.
  std::string str() const;

  // Accepts [+-]digits, [+-]digits.digits, [+-].digits and a/b with integer
  // a, b (b != 0). Returns nullopt on anything else or on overflow.
  static std::optional<Rational> parse(std::string_view text);

 private:
  std::int64_t num_ = 0;
  std::int64_t den_ = 1;
};

}  // namespace stepwise
