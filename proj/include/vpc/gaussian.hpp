#pragma once

#include <cmath>

#include "vpc/common.hpp"

namespace vpc {

inline double gaussian_log_pdf(double x, double mean, double stddev) {
  double z = (x - mean) / stddev;
  return -0.5 * z * z - std::log(stddev) - 0.5 * kLogTwoPi;
}

// Standard normal CDF via erfc, stable in both tails.
inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z * M_SQRT1_2);
}

// P(a <= X <= b) for X ~ N(mean, stddev^2), with extended-real endpoints.
// Same-sign tails go through erfc to avoid cancellation of erf values near 1.
inline double gaussian_interval_mass(double a, double b, double mean, double stddev) {
  if (a > b) throw ArgumentError("gaussian_interval_mass: a > b");
  if (a == b) return 0.0;
  double za = (a == kNegInf) ? kNegInf : (a - mean) / stddev;
  double zb = (b == kInf) ? kInf : (b - mean) / stddev;
  double m;
  if (za >= 0.0) {
    // both in the upper tail
    double ca = std::erfc(za * M_SQRT1_2);
    double cb = (zb == kInf) ? 0.0 : std::erfc(zb * M_SQRT1_2);
    m = 0.5 * (ca - cb);
  } else if (zb <= 0.0) {
    double cb = std::erfc(-zb * M_SQRT1_2);
    double ca = (za == kNegInf) ? 0.0 : std::erfc(-za * M_SQRT1_2);
    m = 0.5 * (cb - ca);
  } else {
    double ea = (za == kNegInf) ? -1.0 : std::erf(za * M_SQRT1_2);
    double eb = (zb == kInf) ? 1.0 : std::erf(zb * M_SQRT1_2);
    m = 0.5 * (eb - ea);
  }
  if (m < 0.0) m = 0.0;
  if (m > 1.0) m = 1.0;
  return m;
}

}  // namespace vpc
