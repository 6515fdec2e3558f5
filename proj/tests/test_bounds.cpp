#include <gtest/gtest.h>

#include <random>

#include "glvm/bounds.hpp"
#include "support/random_glvm.hpp"

using namespace glvm;
using glvm::testing::RandomOptions;
using glvm::testing::RandomPayload;

namespace {

struct Case {
  glvm::testing::RandomInstance inst;
  FeatureOracle<RandomPayload> oracle;
  Example<RandomPayload> example;
};

Case random_case(std::mt19937_64& rng, const RandomOptions& opts, bool factorized) {
  auto inst = glvm::testing::random_instance(rng, opts, factorized);
  auto o = glvm::testing::random_oracle(inst);
  Example<RandomPayload> ex{"x", glvm::testing::random_payload(rng, inst, opts.integer_values), 1};
  return {inst, o, ex};
}

AnchorPlan plan_for(const Case& c, const Model& anchor) {
  Dataset<RandomPayload> data{c.example};
  return build_plan(anchor, data, c.oracle, PlanScope::both);
}

// min over all negatives of the anchor score with positives held at `pos`
Saddle exhaustive_given(const Model& m, const Case& c, const LatentAssignment& given, Polarity free_pol) {
  const auto& spec = c.inst.spec;
  const auto ids = spec.of(free_pol);
  LatentAssignment z = given;
  for (int id : ids) z[id] = 0;
  Saddle best{free_pol == Polarity::negative ? 1e300 : -1e300, {}};
  do {
    const double s = dot(m.w, c.oracle(c.example.payload, z));
    if (free_pol == Polarity::negative ? s < best.score : s > best.score) best = {s, z};
  } while (next_assignment(z, ids, spec));
  return best;
}

}  // namespace

TEST(FixNegatives, SingletonDomainIsTheSoleChoice) {
  std::mt19937_64 rng(1);
  LatentSpec spec;
  spec.add_positive(0, 3);
  spec.add_negative(0, 1);
  glvm::testing::RandomInstance inst{spec, BlockLayout::contiguous(std::vector<std::size_t>{2, 2}), true};
  auto o = glvm::testing::random_oracle(inst);
  auto x = glvm::testing::random_payload(rng, inst, false);
  Model anchor(glvm::testing::random_weights(rng, 4), inst.layout);
  for (int p = 0; p < 3; ++p) {
    LatentAssignment given(2);
    given[0] = p;
    auto z = fix_negatives(anchor, x, o, given);
    EXPECT_EQ(z[0], p);
    EXPECT_EQ(z[1], 0);
  }
}

TEST(FixNegatives, ZeroAnchorTakesFirstIndex) {
  std::mt19937_64 rng(2);
  RandomOptions opts;
  opts.force_negative = true;
  for (int trial = 0; trial < 30; ++trial) {
    auto c = random_case(rng, opts, trial % 2 == 0);
    LatentAssignment given(c.inst.spec.size());
    for (int id : c.inst.spec.of(Polarity::positive)) given[id] = c.inst.spec.variable(id).domain - 1;
    auto z = fix_negatives(Model(c.inst.layout), c.example.payload, c.oracle, given);
    for (int id : c.inst.spec.of(Polarity::negative)) EXPECT_EQ(z[id], 0);
  }
}

TEST(FixNegatives, SingleStageMatchesExhaustiveArgmin) {
  std::mt19937_64 rng(3);
  RandomOptions opts;
  opts.max_stages = 1;
  opts.force_negative = true;
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_case(rng, opts, trial % 2 == 0);
    Model anchor(glvm::testing::random_weights(rng, c.inst.layout.total_dim()), c.inst.layout);
    LatentAssignment given(c.inst.spec.size());
    for (int id : c.inst.spec.of(Polarity::positive))
      given[id] = std::uniform_int_distribution<int>(0, c.inst.spec.variable(id).domain - 1)(rng);
    auto z = fix_negatives(anchor, c.example.payload, c.oracle, given);
    auto ref = exhaustive_given(anchor, c, given, Polarity::negative);
    EXPECT_EQ(z, ref.assignment);
  }
}

TEST(FixNegatives, RequiresAllPositivesAssigned) {
  std::mt19937_64 rng(4);
  RandomOptions opts;
  opts.force_negative = true;
  auto c = random_case(rng, opts, true);
  EXPECT_THROW(fix_negatives(Model(c.inst.layout), c.example.payload, c.oracle, LatentAssignment(c.inst.spec.size())),
               MisuseError);
}

TEST(FixPositives, SingletonAndZeroAnchor) {
  std::mt19937_64 rng(5);
  LatentSpec spec;
  spec.add_positive(0, 1);
  spec.add_negative(0, 4);
  glvm::testing::RandomInstance inst{spec, BlockLayout::contiguous(std::vector<std::size_t>{2, 2}), true};
  auto o = glvm::testing::random_oracle(inst);
  auto x = glvm::testing::random_payload(rng, inst, false);
  LatentAssignment given(2);
  given[1] = 3;
  EXPECT_EQ(fix_positives(Model(glvm::testing::random_weights(rng, 4), inst.layout), x, o, given)[0], 0);

  LatentSpec wide;
  wide.add_positive(0, 5);
  wide.add_negative(0, 2);
  glvm::testing::RandomInstance inst2{wide, BlockLayout::contiguous(std::vector<std::size_t>{2, 2}), false};
  auto o2 = glvm::testing::random_oracle(inst2);
  auto x2 = glvm::testing::random_payload(rng, inst2, false);
  LatentAssignment g2(2);
  g2[1] = 1;
  EXPECT_EQ(fix_positives(Model(inst2.layout), x2, o2, g2)[0], 0);
}

TEST(FixPositives, SingleStageMatchesMaxMinArgmax) {
  // With K = 1 the anchor's positive move is the maximizer of min over negatives.
  std::mt19937_64 rng(6);
  RandomOptions opts;
  opts.max_stages = 1;
  opts.force_negative = true;
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_case(rng, opts, trial % 2 == 0);
    Model anchor(glvm::testing::random_weights(rng, c.inst.layout.total_dim()), c.inst.layout);
    LatentAssignment given(c.inst.spec.size());
    for (int id : c.inst.spec.of(Polarity::negative))
      given[id] = std::uniform_int_distribution<int>(0, c.inst.spec.variable(id).domain - 1)(rng);
    auto z = fix_positives(anchor, c.example.payload, c.oracle, given);
    const auto saddle = brute_force_saddle(anchor, c.example.payload, c.oracle);
    for (int id : c.inst.spec.of(Polarity::positive)) EXPECT_EQ(z[id], saddle.assignment[id]);
  }
}

TEST(Bounds, TouchAtTheAnchor) {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    RandomOptions opts;
    opts.integer_values = trial % 3 == 0;
    auto c = random_case(rng, opts, trial % 2 == 0);
    Model anchor(glvm::testing::random_weights(rng, c.inst.layout.total_dim(), opts.integer_values), c.inst.layout);
    const auto plan = plan_for(c, anchor);
    const double s = brute_force_saddle(anchor, c.example.payload, c.oracle).score;
    EXPECT_NEAR(upper_bound_score(anchor, c.example, c.oracle, plan), s, 1e-9);
    EXPECT_NEAR(lower_bound_score(anchor, c.example, c.oracle, plan), s, 1e-9);
  }
}

TEST(Bounds, SandwichForRandomWeights) {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    auto c = random_case(rng, {}, trial % 2 == 0);
    const auto d = c.inst.layout.total_dim();
    Model anchor(glvm::testing::random_weights(rng, d), c.inst.layout);
    const auto plan = plan_for(c, anchor);
    for (int k = 0; k < 5; ++k) {
      Model m(glvm::testing::random_weights(rng, d), c.inst.layout);
      const double s = brute_force_saddle(m, c.example.payload, c.oracle).score;
      EXPECT_GE(upper_bound_score(m, c.example, c.oracle, plan), s - 1e-9);
      EXPECT_LE(lower_bound_score(m, c.example, c.oracle, plan), s + 1e-9);
    }
  }
}

TEST(Bounds, EmptyNegativesUpperEqualsLvm) {
  std::mt19937_64 rng(9);
  LatentSpec spec;
  spec.add_positive(0, 4);
  spec.add_positive(0, 3, 0);
  glvm::testing::RandomInstance inst{spec, BlockLayout::contiguous(std::vector<std::size_t>{2, 3}), true};
  auto o = glvm::testing::random_oracle(inst);
  Example<RandomPayload> ex{"a", glvm::testing::random_payload(rng, inst, false), -1};
  Model anchor(glvm::testing::random_weights(rng, 5), inst.layout);
  const auto plan = build_plan(anchor, Dataset<RandomPayload>{ex}, o, PlanScope::both);
  for (int k = 0; k < 20; ++k) {
    Model m(glvm::testing::random_weights(rng, 5), inst.layout);
    EXPECT_NEAR(upper_bound_score(m, ex, o, plan), score_lvm(m, ex.payload, o).score, 1e-12);
    // nothing to minimize: the lower bound is the linear value at the anchor's positives
    const auto zp = score_lvm(anchor, ex.payload, o).assignment;
    EXPECT_NEAR(lower_bound_score(m, ex, o, plan), dot(m.w, o(ex.payload, zp)), 1e-12);
  }
}

TEST(Bounds, ConvexUpperConcaveLower) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    auto c = random_case(rng, {}, trial % 2 == 0);
    const auto d = c.inst.layout.total_dim();
    const auto plan = plan_for(c, Model(glvm::testing::random_weights(rng, d), c.inst.layout));
    auto up = [&](const Vector& w) { return upper_bound_score(Model(w, c.inst.layout), c.example, c.oracle, plan); };
    auto lo = [&](const Vector& w) { return lower_bound_score(Model(w, c.inst.layout), c.example, c.oracle, plan); };
    Vector w1 = glvm::testing::random_weights(rng, d), w2 = glvm::testing::random_weights(rng, d), mix(d);
    const double l = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    for (std::size_t i = 0; i < d; ++i) mix[i] = l * w1[i] + (1 - l) * w2[i];
    EXPECT_LE(up(mix), l * up(w1) + (1 - l) * up(w2) + 1e-9);
    EXPECT_GE(lo(mix), l * lo(w1) + (1 - l) * lo(w2) - 1e-9);
  }
}

TEST(Bounds, StoredFixingsAreReproducible) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    auto c = random_case(rng, {}, trial % 2 == 0);
    Model anchor(glvm::testing::random_weights(rng, c.inst.layout.total_dim()), c.inst.layout);
    const auto plan = plan_for(c, anchor);
    for (const auto& cand : plan.at("x").upper) {
      EXPECT_EQ(fix_negatives(anchor, c.example.payload, c.oracle, cand.assignment), cand.assignment);
      EXPECT_EQ(*plan.fixed_negatives("x", cand.assignment, c.inst.spec), cand.assignment);
    }
    for (const auto& cand : plan.at("x").lower)
      EXPECT_EQ(fix_positives(anchor, c.example.payload, c.oracle, cand.assignment), cand.assignment);
  }
}

TEST(Bounds, PlanLayoutMismatch) {
  std::mt19937_64 rng(12);
  auto c = random_case(rng, {}, true);
  const auto plan = plan_for(c, Model(c.inst.layout));
  std::vector<std::size_t> other(c.inst.spec.size(), 1);
  other[0] += 1;
  const BlockLayout foreign = BlockLayout::contiguous(other);
  EXPECT_THROW(upper_bound_score(Model(foreign), c.example, c.oracle, plan), MisuseError);
  EXPECT_THROW(plan.at("missing"), MisuseError);
}
