#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "glvm/scoring.hpp"

namespace glvm {

/// Negative variables fixed by the anchor model, given the positive ones.
///
/// Stage k negatives are the anchor's optimal reply to the positives of
/// stages <= k (later positives left free), so the fixed values never
/// anticipate moves made after them. For a single stage this is the joint
/// argmin over all negatives.
template <class P>
LatentAssignment fix_negatives(const Model& anchor, const P& x, const FeatureOracle<P>& o,
                               const LatentAssignment& given_pos, const InferenceOptions& opts = {}) {
  const LatentSpec& spec = o.spec();
  given_pos.check_against(spec, false);
  LatentAssignment z(spec.size());
  for (const auto& v : spec.variables()) {
    if (v.polarity != Polarity::positive) continue;
    if (!given_pos.assigned(v.id)) throw MisuseError("fix_negatives: positive variable left unassigned");
    z[v.id] = given_pos[v.id];
  }
  for (int k = 0; k < spec.num_stages(); ++k) {
    LatentAssignment fixed = z;
    bool any = false;
    for (const auto& v : spec.variables()) {
      if (v.polarity == Polarity::positive && v.stage > k) fixed[v.id] = LatentAssignment::kUnassigned;
      if (v.polarity == Polarity::negative && v.stage == k) any = true;
    }
    if (!any) continue;
    const Saddle s = solve_restricted(anchor, x, o, fixed, opts);
    for (const auto& v : spec.variables())
      if (v.polarity == Polarity::negative && v.stage == k) z[v.id] = s.assignment[v.id];
  }
  return z;
}

/// Positive variables fixed by the anchor model, mirror image of fix_negatives:
/// stage k positives are the anchor's optimal move after the negatives of
/// stages < k.
template <class P>
LatentAssignment fix_positives(const Model& anchor, const P& x, const FeatureOracle<P>& o,
                               const LatentAssignment& given_neg, const InferenceOptions& opts = {}) {
  const LatentSpec& spec = o.spec();
  given_neg.check_against(spec, false);
  LatentAssignment z(spec.size());
  for (const auto& v : spec.variables()) {
    if (v.polarity != Polarity::negative) continue;
    if (!given_neg.assigned(v.id)) throw MisuseError("fix_positives: negative variable left unassigned");
    z[v.id] = given_neg[v.id];
  }
  for (int k = 0; k < spec.num_stages(); ++k) {
    LatentAssignment fixed = z;
    bool any = false;
    for (const auto& v : spec.variables()) {
      if (v.polarity == Polarity::negative && v.stage >= k) fixed[v.id] = LatentAssignment::kUnassigned;
      if (v.polarity == Polarity::positive && v.stage == k) any = true;
    }
    if (!any) continue;
    const Saddle s = solve_restricted(anchor, x, o, fixed, opts);
    for (const auto& v : spec.variables())
      if (v.polarity == Polarity::positive && v.stage == k) z[v.id] = s.assignment[v.id];
  }
  return z;
}

struct PlanCandidate {
  LatentAssignment assignment;
  Vector features;
};

/// Materialized bound pieces for one example. `upper` holds one candidate per
/// positive assignment with negatives fixed; `lower` one per negative
/// assignment with positives fixed.
struct ExamplePlan {
  std::vector<PlanCandidate> upper;
  std::vector<PlanCandidate> lower;
};

enum class PlanScope {
  both,     // upper and lower pieces for every example
  by_label  // upper for y = -1, lower for y = +1 (what the training bound needs)
};

class AnchorPlan {
 public:
  AnchorPlan() = default;
  AnchorPlan(Model anchor, int iteration) : anchor_(std::move(anchor)), iteration_(iteration) {}

  const Model& anchor() const { return anchor_; }
  int iteration() const { return iteration_; }

  const ExamplePlan& at(const std::string& id) const {
    auto it = plans_.find(id);
    if (it == plans_.end()) throw MisuseError("AnchorPlan: no plan for example '" + id + "'");
    return it->second;
  }
  bool contains(const std::string& id) const { return plans_.count(id) != 0; }
  void insert(const std::string& id, ExamplePlan p) { plans_[id] = std::move(p); }

  /// Fixed negatives stored for a positive context, if that context was planned.
  const LatentAssignment* fixed_negatives(const std::string& id, const LatentAssignment& pos,
                                          const LatentSpec& spec) const {
    for (const auto& c : at(id).upper) {
      bool same = true;
      for (const auto& v : spec.variables())
        if (v.polarity == Polarity::positive && c.assignment[v.id] != pos[v.id]) same = false;
      if (same) return &c.assignment;
    }
    return nullptr;
  }

 private:
  Model anchor_;
  int iteration_ = 0;
  std::map<std::string, ExamplePlan> plans_;
};

template <class P>
ExamplePlan plan_example(const Model& anchor, const P& x, const FeatureOracle<P>& o, bool upper, bool lower,
                         const InferenceOptions& opts = {}) {
  const LatentSpec& spec = o.spec();
  ExamplePlan plan;
  auto sweep = [&](Polarity free_pol, std::vector<PlanCandidate>& out) {
    const auto ids = spec.of(free_pol);
    if (spec.assignment_count(ids) > opts.budget) throw ResourceError("plan: too many latent contexts");
    LatentAssignment given(spec.size());
    for (int id : ids) given[id] = 0;
    do {
      LatentAssignment full = free_pol == Polarity::positive ? fix_negatives(anchor, x, o, given, opts)
                                                             : fix_positives(anchor, x, o, given, opts);
      Vector phi = o(x, full);
      out.push_back({std::move(full), std::move(phi)});
    } while (next_assignment(given, ids, spec));
  };
  if (upper) sweep(Polarity::positive, plan.upper);
  if (lower) sweep(Polarity::negative, plan.lower);
  return plan;
}

template <class P>
AnchorPlan build_plan(const Model& anchor, const Dataset<P>& data, const FeatureOracle<P>& o, PlanScope scope,
                      int iteration = 0, const InferenceOptions& opts = {}) {
  detail::check_model(anchor, o);
  AnchorPlan plan(anchor, iteration);
  for (const auto& ex : data) {
    check_label(ex.label);
    const bool up = scope == PlanScope::both || ex.label < 0;
    const bool lo = scope == PlanScope::both || ex.label > 0;
    plan.insert(ex.id, plan_example(anchor, ex.payload, o, up, lo, opts));
  }
  return plan;
}

struct BoundScore {
  double score = 0.0;
  std::size_t candidate = 0;  // index of the active piece (first on ties)
};

inline BoundScore upper_bound_piece(const Vector& w, const ExamplePlan& p) {
  if (p.upper.empty()) throw MisuseError("upper bound requested but not planned");
  BoundScore b{-detail::kInf, 0};
  for (std::size_t i = 0; i < p.upper.size(); ++i) {
    const double s = dot(w, p.upper[i].features);
    if (s > b.score) b = {s, i};
  }
  return b;
}

inline BoundScore lower_bound_piece(const Vector& w, const ExamplePlan& p) {
  if (p.lower.empty()) throw MisuseError("lower bound requested but not planned");
  BoundScore b{detail::kInf, 0};
  for (std::size_t i = 0; i < p.lower.size(); ++i) {
    const double s = dot(w, p.lower[i].features);
    if (s < b.score) b = {s, i};
  }
  return b;
}

/// Convex upper bound: max over positive assignments with anchor-fixed negatives.
template <class P>
double upper_bound_score(const Model& m, const Example<P>& ex, const FeatureOracle<P>& o, const AnchorPlan& plan) {
  detail::check_model(m, o);
  if (!(plan.anchor().layout == m.layout)) throw MisuseError("plan layout differs from model layout");
  return upper_bound_piece(m.w, plan.at(ex.id)).score;
}

/// Concave lower bound: min over negative assignments with anchor-fixed positives.
template <class P>
double lower_bound_score(const Model& m, const Example<P>& ex, const FeatureOracle<P>& o, const AnchorPlan& plan) {
  detail::check_model(m, o);
  if (!(plan.anchor().layout == m.layout)) throw MisuseError("plan layout differs from model layout");
  return lower_bound_piece(m.w, plan.at(ex.id)).score;
}

}  // namespace glvm
