#pragma once

// Planted two-stage GLVM classification data used by the trainer tests and
// the acceptance suite.

#include <random>
#include <string>

#include "glvm/scoring.hpp"
#include "support/random_glvm.hpp"

namespace glvm::testing {

struct SyntheticGlvm {
  RandomInstance inst;
  FeatureOracle<RandomPayload> oracle;
  Dataset<RandomPayload> data;
  Vector planted;
};

/// n examples, d = 20: stage 1 holds a positive (4 choices) and a negative
/// (3 choices, child of the positive); stage 2 a positive and a negative with
/// 3 and 2 choices. Labels are the sign of the planted model's score, with
/// `flip` of them inverted.
inline SyntheticGlvm synthetic_glvm(std::uint64_t seed, int n = 100, double flip = 0.1) {
  std::mt19937_64 rng(seed);
  RandomInstance inst;
  inst.factorized = true;
  const int a = inst.spec.add_positive(0, 4);
  inst.spec.add_negative(0, 3, a);
  const int c = inst.spec.add_positive(1, 3);
  inst.spec.add_negative(1, 2, c);
  const std::vector<std::size_t> sizes{6, 5, 5, 4};
  inst.layout = BlockLayout::contiguous(sizes);
  auto oracle = random_oracle(inst);
  Vector planted = random_weights(rng, inst.layout.total_dim());
  Dataset<RandomPayload> data;
  std::bernoulli_distribution noisy(flip);
  for (int i = 0; i < n; ++i) {
    Example<RandomPayload> ex{"e" + std::to_string(i), random_payload(rng, inst, false), 1};
    const double s = score_canonical(Model(planted, inst.layout), ex.payload, oracle).score;
    ex.label = s >= 0 ? 1 : -1;
    if (noisy(rng)) ex.label = -ex.label;
    data.push_back(std::move(ex));
  }
  return {inst, oracle, std::move(data), std::move(planted)};
}

}  // namespace glvm::testing
