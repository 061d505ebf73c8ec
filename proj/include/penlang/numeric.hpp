#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace penlang {

/// log(exp(a) + exp(b)) without overflow; -inf inputs behave as zeros.
inline double log_sum_exp(double a, double b) {
  const double m = std::max(a, b);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

/// log sum_i exp(v_i); returns -inf for an empty or all-(-inf) input.
inline double log_sum_exp(const std::vector<double>& v) {
  double m = -std::numeric_limits<double>::infinity();
  for (double x : v) m = std::max(m, x);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

}  // namespace penlang
