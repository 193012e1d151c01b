#pragma once

#include <cmath>
#include <limits>

namespace gsbl {

// Digamma for x > 0. Recurrence psi(x) = psi(x + 1) - 1/x lifts the argument
// to >= 10, then the asymptotic series is truncated after the x^-10 term
// (truncation error below 3e-14 there).
inline double digamma(double x) {
  if (!(x > 0.0)) return std::numeric_limits<double>::quiet_NaN();
  double shift = 0.0;
  while (x < 10.0) {
    shift -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  const double series =
      inv2 * (1.0 / 12.0 -
              inv2 * (1.0 / 120.0 -
                      inv2 * (1.0 / 252.0 - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0)))));
  return shift + std::log(x) - 0.5 * inv - series;
}

// Entropy of Gamma(shape, rate).
inline double gamma_entropy(double shape, double rate) {
  return shape - std::log(rate) + std::lgamma(shape) + (1.0 - shape) * digamma(shape);
}

// E_q[ln p(x)] for prior p = Gamma(a, b) and q = Gamma(shape, rate).
inline double gamma_cross_term(double a, double b, double shape, double rate) {
  const double mean = shape / rate;
  const double log_mean = digamma(shape) - std::log(rate);
  return a * std::log(b) - std::lgamma(a) + (a - 1.0) * log_mean - b * mean;
}

}  // namespace gsbl
