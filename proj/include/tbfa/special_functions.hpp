#pragma once

#include <cmath>

#include "tbfa/common.hpp"

namespace tbfa {

// psi(x) = d/dx ln Gamma(x).  Recurrence shifts the argument above 8, then a
// Bernoulli-number asymptotic series; absolute error stays below ~1e-13.
inline double digamma(double x) {
  require(x > 0.0, "digamma: argument must be positive");
  double acc = 0.0;
  while (x < 8.0) {
    acc -= 1.0 / x;
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  // ln x - 1/(2x) - sum B_{2k}/(2k x^{2k})
  double series = -1.0 / 12.0;
  double p = inv2;
  double out = std::log(x) - 0.5 * inv + series * p;
  p *= inv2; out += (1.0 / 120.0) * p;
  p *= inv2; out += (-1.0 / 252.0) * p;
  p *= inv2; out += (1.0 / 240.0) * p;
  p *= inv2; out += (-1.0 / 132.0) * p;
  p *= inv2; out += (691.0 / 32760.0) * p;
  p *= inv2; out += (-1.0 / 12.0) * p;
  return out + acc;
}

// psi'(x); same shift-then-series scheme, absolute error below ~1e-12.
inline double trigamma(double x) {
  require(x > 0.0, "trigamma: argument must be positive");
  double acc = 0.0;
  while (x < 8.0) {
    acc += 1.0 / (x * x);
    x += 1.0;
  }
  const double inv = 1.0 / x;
  const double inv2 = inv * inv;
  double out = inv + 0.5 * inv2;
  double p = inv * inv2;
  out += (1.0 / 6.0) * p;
  p *= inv2; out += (-1.0 / 30.0) * p;
  p *= inv2; out += (1.0 / 42.0) * p;
  p *= inv2; out += (-1.0 / 30.0) * p;
  p *= inv2; out += (5.0 / 66.0) * p;
  p *= inv2; out += (-691.0 / 2730.0) * p;
  p *= inv2; out += (7.0 / 6.0) * p;
  return out + acc;
}

}  // namespace tbfa
