#include "stepwise/rational.hpp"

#include <cctype>
#include <numeric>
#include <stdexcept>

namespace stepwise {

namespace {

std::int64_t checked_mul(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_mul_overflow(a, b, &out)) throw std::overflow_error("rational overflow");
  return out;
}

std::int64_t checked_add(std::int64_t a, std::int64_t b) {
  std::int64_t out = 0;
  if (__builtin_add_overflow(a, b, &out)) throw std::overflow_error("rational overflow");
  return out;
}

std::optional<std::int64_t> parse_digits(std::string_view s) {
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  for (char c : s) {
    if (!std::isdigit(static_cast<unsigned char>(c))) return std::nullopt;
    if (__builtin_mul_overflow(v, 10, &v) || __builtin_add_overflow(v, c - '0', &v)) {
      return std::nullopt;
    }
  }
  return v;
}

std::optional<Rational> parse_decimal(std::string_view s) {
  bool negative = false;
  if (!s.empty() && (s.front() == '+' || s.front() == '-')) {
    negative = s.front() == '-';
    s.remove_prefix(1);
  }
  if (s.empty()) return std::nullopt;
  const auto dot = s.find('.');
  std::string_view int_part = s.substr(0, dot);
  std::string_view frac_part = dot == std::string_view::npos ? std::string_view{} : s.substr(dot + 1);
  if (dot != std::string_view::npos && frac_part.empty()) return std::nullopt;
  if (int_part.empty() && frac_part.empty()) return std::nullopt;
  std::int64_t whole = 0;
  if (!int_part.empty()) {
    auto v = parse_digits(int_part);
    if (!v) return std::nullopt;
    whole = *v;
  }
  std::int64_t frac = 0;
  std::int64_t scale = 1;
  if (!frac_part.empty()) {
    // Trailing zeros carry no value and would only risk overflow.
    while (frac_part.size() > 1 && frac_part.back() == '0') frac_part.remove_suffix(1);
    auto v = parse_digits(frac_part);
    if (!v || frac_part.size() > 18) return std::nullopt;
    frac = *v;
    for (std::size_t i = 0; i < frac_part.size(); ++i) scale *= 10;
  }
  try {
    Rational r(checked_add(checked_mul(whole, scale), frac), scale);
    return negative ? -r : r;
  } catch (const std::overflow_error&) {
    return std::nullopt;
  }
}

}  // namespace

Rational::Rational(std::int64_t num, std::int64_t den) {
  if (den == 0) throw std::domain_error("rational with zero denominator");
  if (den < 0) {
    num = checked_mul(num, -1);
    den = checked_mul(den, -1);
  }
  const std::int64_t g = std::gcd(num, den);
  num_ = num / g;
  den_ = den / g;
}

Rational Rational::operator+(const Rational& o) const {
  const std::int64_t g = std::gcd(den_, o.den_);
  const std::int64_t lhs = checked_mul(num_, o.den_ / g);
  const std::int64_t rhs = checked_mul(o.num_, den_ / g);
  return Rational(checked_add(lhs, rhs), checked_mul(den_ / g, o.den_));
}

Rational Rational::operator-(const Rational& o) const { return *this + (-o); }

Rational Rational::operator*(const Rational& o) const {
  const std::int64_t g1 = std::gcd(num_, o.den_);
  const std::int64_t g2 = std::gcd(o.num_, den_);
  return Rational(checked_mul(num_ / g1, o.num_ / g2), checked_mul(den_ / g2, o.den_ / g1));
}

Rational Rational::operator/(const Rational& o) const {
  if (o.num_ == 0) throw std::domain_error("division by zero");
  return *this * Rational(o.den_, o.num_);
}

Rational Rational::operator-() const { return Rational(checked_mul(num_, -1), den_); }

bool Rational::operator<(const Rational& o) const {
  return static_cast<__int128>(num_) * o.den_ < static_cast<__int128>(o.num_) * den_;
}

std::string Rational::str() const {
  if (den_ == 1) return std::to_string(num_);
  return std::to_string(num_) + "/" + std::to_string(den_);
}

std::optional<Rational> Rational::parse(std::string_view text) {
  const auto slash = text.find('/');
  if (slash == std::string_view::npos) return parse_decimal(text);
  if (text.find('/', slash + 1) != std::string_view::npos) return std::nullopt;
  auto a = parse_decimal(text.substr(0, slash));
  auto b = parse_decimal(text.substr(slash + 1));
  if (!a || !b || !a->is_integer() || !b->is_integer() || b->num() == 0) return std::nullopt;
  try {
    return Rational(a->num(), b->num());
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace stepwise
