#pragma once

// Random GLVM instances for oracle-equivalence and property tests.

#include <cstdint>
#include <random>
#include <vector>

#include "glvm/latent.hpp"

namespace glvm::testing {

struct RandomPayload {
  // factorized: table[v][parent choice][choice] -> block
  std::vector<std::vector<std::vector<Vector>>> table;
  // dense: table[v][joint index of the full assignment] -> block
  std::vector<std::vector<Vector>> dense;
};

struct RandomInstance {
  LatentSpec spec;
  BlockLayout layout;
  bool factorized = true;
};

struct RandomOptions {
  int max_stages = 3;
  int max_per_quantifier = 2;
  int max_domain = 5;
  int max_block = 3;
  double max_assignments = 1e4;
  bool integer_values = false;  // small integers: exact arithmetic, many ties
  bool allow_parents = true;
  bool force_negative = false;
};

inline RandomInstance random_instance(std::mt19937_64& rng, const RandomOptions& o, bool factorized) {
  for (;;) {
    RandomInstance inst;
    inst.factorized = factorized;
    std::uniform_int_distribution<int> stages(1, o.max_stages), count(0, o.max_per_quantifier),
        dom(1, o.max_domain), blk(1, o.max_block);
    const int k = stages(rng);
    std::vector<std::size_t> sizes;
    for (int s = 0; s < k; ++s) {
      for (Polarity pol : {Polarity::positive, Polarity::negative}) {
        int c = count(rng);
        if (s == 0 && pol == Polarity::positive && c == 0) c = 1;
        if (s == 0 && pol == Polarity::negative && o.force_negative && c == 0) c = 1;
        for (int i = 0; i < c; ++i) {
          int parent = -1;
          const int n = static_cast<int>(inst.spec.size());
          if (o.allow_parents && n > 0 && std::bernoulli_distribution(0.6)(rng)) {
            int cand = std::uniform_int_distribution<int>(0, n - 1)(rng);
            parent = cand;  // quantifier order holds: earlier insertion never later quantifier
          }
          inst.spec.add(s, pol, dom(rng), parent);
          sizes.push_back(static_cast<std::size_t>(blk(rng)));
        }
      }
    }
    if (inst.spec.assignment_count() > o.max_assignments) continue;
    inst.layout = BlockLayout::contiguous(sizes);
    return inst;
  }
}

inline double draw(std::mt19937_64& rng, bool integer) {
  if (integer) return static_cast<double>(std::uniform_int_distribution<int>(-2, 2)(rng));
  return std::normal_distribution<double>(0.0, 1.0)(rng);
}

inline RandomPayload random_payload(std::mt19937_64& rng, const RandomInstance& inst, bool integer) {
  RandomPayload p;
  const auto& spec = inst.spec;
  if (inst.factorized) {
    for (const auto& v : spec.variables()) {
      const int ps = v.parent >= 0 ? spec.variable(v.parent).domain : 1;
      const std::size_t bs = inst.layout.block_of(v.id).size;
      std::vector<std::vector<Vector>> t(ps, std::vector<Vector>(v.domain, Vector(bs)));
      for (auto& row : t)
        for (auto& b : row)
          for (double& x : b) x = draw(rng, integer);
      p.table.push_back(std::move(t));
    }
  } else {
    const auto n = static_cast<std::size_t>(spec.assignment_count());
    for (const auto& v : spec.variables()) {
      std::vector<Vector> t(n, Vector(inst.layout.block_of(v.id).size));
      for (auto& b : t)
        for (double& x : b) x = draw(rng, integer);
      p.dense.push_back(std::move(t));
    }
  }
  return p;
}

inline FeatureOracle<RandomPayload> random_oracle(const RandomInstance& inst) {
  const LatentSpec spec = inst.spec;
  const BlockLayout layout = inst.layout;
  const bool fact = inst.factorized;
  auto fn = [spec, layout, fact](const RandomPayload& x, const LatentAssignment& z) {
    Vector phi(layout.total_dim(), 0.0);
    if (fact) {
      for (const auto& v : spec.variables()) {
        if (!z.assigned(v.id)) continue;
        if (v.parent >= 0 && !z.assigned(v.parent)) continue;
        const Vector& b = x.table[v.id][v.parent >= 0 ? z[v.parent] : 0][z[v.id]];
        const Block& blk = layout.block_of(v.id);
        std::copy(b.begin(), b.end(), phi.begin() + static_cast<std::ptrdiff_t>(blk.offset));
      }
    } else {
      std::size_t idx = 0;
      for (const auto& v : spec.variables()) {
        if (!z.assigned(v.id)) return phi;
        idx = idx * static_cast<std::size_t>(v.domain) + static_cast<std::size_t>(z[v.id]);
      }
      for (const auto& v : spec.variables()) {
        const Vector& b = x.dense[v.id][idx];
        const Block& blk = layout.block_of(v.id);
        std::copy(b.begin(), b.end(), phi.begin() + static_cast<std::ptrdiff_t>(blk.offset));
      }
    }
    return phi;
  };
  return FeatureOracle<RandomPayload>(inst.spec, inst.layout, fn, fact);
}

inline Vector random_weights(std::mt19937_64& rng, std::size_t d, bool integer = false) {
  Vector w(d);
  for (double& x : w) x = draw(rng, integer);
  return w;
}

/// Pooled max over all positives of min over all negatives (and the reverse).
template <class P>
double pooled_maxmin(const Vector& w, const P& x, const FeatureOracle<P>& o, bool max_first) {
  const auto& spec = o.spec();
  const auto pos = spec.of(Polarity::positive), neg = spec.of(Polarity::negative);
  const auto& outer = max_first ? pos : neg;
  const auto& inner = max_first ? neg : pos;
  LatentAssignment z(spec.size(), 0);
  double best = max_first ? -1e300 : 1e300;
  do {
    double in = max_first ? 1e300 : -1e300;
    for (int id : inner) z[id] = 0;
    do {
      const double s = dot(w, o(x, z));
      in = max_first ? std::min(in, s) : std::max(in, s);
    } while (next_assignment(z, inner, spec));
    best = max_first ? std::max(best, in) : std::min(best, in);
  } while (next_assignment(z, outer, spec));
  return best;
}

}  // namespace glvm::testing
