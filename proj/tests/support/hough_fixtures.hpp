#pragma once

#include <random>

#include "glvm/hough.hpp"

namespace glvm::testing {

inline VoteTable random_table(int rows, int cols, std::size_t entries, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 2.0);
  VoteTable t(rows, cols, entries);
  for (double& v : t.data) v = u(rng);
  return t;
}

inline LhtModel random_lht(int zp, int zn, std::size_t cp, std::size_t cn, std::mt19937_64& rng) {
  std::normal_distribution<double> n(0.0, 1.0);
  LhtModel m{zp, zn, cp, cn, {}};
  m.w.resize(m.dim());
  for (double& v : m.w) v = n(rng);
  return m;
}

}  // namespace glvm::testing
