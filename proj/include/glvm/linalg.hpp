#pragma once

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include "glvm/errors.hpp"

namespace glvm {

using Vector = std::vector<double>;

/// Sequential dot product; the summation order is part of the contract
/// because several reductions are asserted bit-exact against each other.
inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw MisuseError("dot: dimension mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

/// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) throw MisuseError("axpy: dimension mismatch");
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline bool all_finite(std::span<const double> a) {
  for (double v : a)
    if (!std::isfinite(v)) return false;
  return true;
}

}  // namespace glvm
