#pragma once

// Exact rational evaluation of the transition formulas, independent of the
// floating-point implementations under test.

#include <cstdint>
#include <numeric>

namespace dractrl::testing {

struct Rational {
  __int128 num = 0;
  __int128 den = 1;

  Rational() = default;
  Rational(__int128 n, __int128 d) : num(n), den(d) { normalize(); }

  void normalize() {
    if (den < 0) {
      num = -num;
      den = -den;
    }
    __int128 a = num < 0 ? -num : num, b = den;
    while (b != 0) {
      const __int128 t = a % b;
      a = b;
      b = t;
    }
    if (a > 1) {
      num /= a;
      den /= a;
    }
  }
  double to_double() const { return static_cast<double>(num) / static_cast<double>(den); }
};

inline Rational operator+(Rational a, Rational b) { return {a.num * b.den + b.num * a.den, a.den * b.den}; }
inline Rational operator-(Rational a, Rational b) { return {a.num * b.den - b.num * a.den, a.den * b.den}; }
inline Rational operator*(Rational a, Rational b) { return {a.num * b.num, a.den * b.den}; }

inline Rational rational_smoothstep(Rational s) { return s * s * (Rational(3, 1) - Rational(2, 1) * s); }

inline Rational rational_loss_weight(int k, int K) {
  Rational total(0, 1);
  for (int i = 1; i <= 4; ++i) {
    const Rational b = rational_smoothstep(Rational(4 * k + i, 4 * K + 1));
    total = total + b * b;
  }
  return total * Rational(1, 4);
}

}  // namespace dractrl::testing
