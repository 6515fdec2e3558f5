#pragma once

#include <cstddef>
#include <limits>
#include <vector>

#include "glvm/latent.hpp"

namespace glvm {

struct InferenceOptions {
  /// Upper bound on stage-local evaluations (leaves for dense oracles,
  /// sum of |dom(v)| * |dom(parent)| for factorized ones).
  double budget = 1e6;
  bool operator==(const InferenceOptions&) const = default;
};

struct Saddle {
  double score = 0.0;
  LatentAssignment assignment;
};

struct SimpleScore {
  double score = 0.0;
  LatentAssignment argmax_pos;  // negatives unassigned
  LatentAssignment argmax_neg;  // positives unassigned
};

namespace detail {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

template <class P>
void check_model(const Model& m, const FeatureOracle<P>& o) {
  if (!(m.layout == o.layout())) throw MisuseError("model layout differs from oracle layout");
}

template <class P>
double linear_score(const Vector& w, const P& x, const FeatureOracle<P>& o, const LatentAssignment& z) {
  Vector phi = o(x, z);
  return dot(w, phi);
}

/// Alpha-beta search over the free variables in quantifier order.
template <class P>
class DenseGame {
 public:
  DenseGame(const Vector& w, const P& x, const FeatureOracle<P>& o, LatentAssignment fixed)
      : w_(w), x_(x), o_(o), z_(std::move(fixed)) {
    for (int id : o.spec().order())
      if (!z_.assigned(id)) free_.push_back(id);
  }

  double cost() const { return o_.spec().assignment_count(free_); }

  Saddle solve() {
    Saddle s;
    s.score = search(0, -kInf, kInf, s.assignment);
    return s;
  }

 private:
  double search(std::size_t depth, double alpha, double beta, LatentAssignment& pv) {
    if (depth == free_.size()) {
      pv = z_;
      return linear_score(w_, x_, o_, z_);
    }
    const LatentVariable& v = o_.spec().variable(free_[depth]);
    const bool maxing = v.maximizes();
    double best = maxing ? -kInf : kInf;
    LatentAssignment child;
    for (int d = 0; d < v.domain; ++d) {
      z_[v.id] = d;
      double val = search(depth + 1, alpha, beta, child);
      if (maxing ? val > best : val < best) {
        best = val;
        pv = child;
      }
      if (maxing) alpha = std::max(alpha, best);
      else beta = std::min(beta, best);
      if (alpha >= beta) break;
    }
    z_[v.id] = LatentAssignment::kUnassigned;
    return best;
  }

  const Vector& w_;
  const P& x_;
  const FeatureOracle<P>& o_;
  LatentAssignment z_;
  std::vector<int> free_;
};

/// Child-then-parent dynamic programming over the dependency forest.
/// Exact for factorized oracles because, given its parent, every subtree is
/// separable from the rest and each variable is quantified after its parent.
template <class P>
class TreeGame {
 public:
  TreeGame(const Vector& w, const P& x, const FeatureOracle<P>& o, LatentAssignment fixed)
      : w_(w), x_(x), o_(o), fixed_(std::move(fixed)), spec_(o.spec()) {}

  double cost() const {
    double c = 0.0;
    for (const auto& v : spec_.variables()) c += static_cast<double>(dom_size(v.id)) * parent_span(v.id);
    return c;
  }

  Saddle solve() {
    const auto order = spec_.order();
    const auto children = spec_.children();
    const std::size_t n = spec_.size();
    value_.assign(n, {});
    arg_.assign(n, {});
    for (std::size_t k = order.size(); k-- > 0;) {
      const int id = order[k];
      const LatentVariable& v = spec_.variable(id);
      const int pspan = parent_span(id);
      value_[id].assign(static_cast<std::size_t>(pspan), 0.0);
      arg_[id].assign(static_cast<std::size_t>(pspan), LatentAssignment::kUnassigned);
      for (int p = 0; p < pspan; ++p) {
        if (v.parent >= 0 && fixed_.assigned(v.parent) && p != fixed_[v.parent]) continue;
        double best = v.maximizes() ? -kInf : kInf;
        int arg = LatentAssignment::kUnassigned;
        for (int d : domain(id)) {
          double val = term(id, d, v.parent >= 0 ? p : LatentAssignment::kUnassigned);
          for (int c : children[id]) val += value_[c][static_cast<std::size_t>(d)];
          if (v.maximizes() ? val > best : val < best) {
            best = val;
            arg = d;
          }
        }
        value_[id][p] = best;
        arg_[id][p] = arg;
      }
    }
    Saddle s;
    s.assignment = LatentAssignment(n);
    for (int id : order) {
      const int parent = spec_.variable(id).parent;
      s.assignment[id] = arg_[id][parent >= 0 ? s.assignment[parent] : 0];
    }
    s.score = linear_score(w_, x_, o_, s.assignment);
    return s;
  }

 private:
  int dom_size(int id) const { return fixed_.assigned(id) ? 1 : spec_.variable(id).domain; }
  int parent_span(int id) const {
    const int p = spec_.variable(id).parent;
    return p >= 0 ? spec_.variable(p).domain : 1;
  }
  std::vector<int> domain(int id) const {
    if (fixed_.assigned(id)) return {fixed_[id]};
    std::vector<int> d(static_cast<std::size_t>(spec_.variable(id).domain));
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = static_cast<int>(i);
    return d;
  }
  double term(int id, int choice, int parent_choice) const {
    LatentAssignment z(spec_.size());
    z[id] = choice;
    const int parent = spec_.variable(id).parent;
    if (parent >= 0) z[parent] = parent_choice;
    const Vector phi = o_(x_, z);
    const Block& b = o_.layout().block_of(id);
    return dot(std::span<const double>(w_).subspan(b.offset, b.size),
               std::span<const double>(phi).subspan(b.offset, b.size));
  }

  const Vector& w_;
  const P& x_;
  const FeatureOracle<P>& o_;
  LatentAssignment fixed_;
  const LatentSpec& spec_;
  std::vector<std::vector<double>> value_;
  std::vector<std::vector<int>> arg_;
};

template <class P>
Saddle brute_force_recurse(const Vector& w, const P& x, const FeatureOracle<P>& o, const std::vector<int>& order,
                           std::size_t depth, LatentAssignment& z) {
  if (depth == order.size()) return {linear_score(w, x, o, z), z};
  const LatentVariable& v = o.spec().variable(order[depth]);
  Saddle best;
  best.score = v.maximizes() ? -kInf : kInf;
  for (int d = 0; d < v.domain; ++d) {
    z[v.id] = d;
    Saddle s = brute_force_recurse(w, x, o, order, depth + 1, z);
    if (v.maximizes() ? s.score > best.score : s.score < best.score) best = std::move(s);
  }
  z[v.id] = LatentAssignment::kUnassigned;
  return best;
}

/// max (or min) of w.phi over the listed variables, others left unassigned.
template <class P>
Saddle enumerate_extreme(const Vector& w, const P& x, const FeatureOracle<P>& o, const std::vector<int>& ids,
                         bool maximize) {
  LatentAssignment z(o.spec().size());
  for (int id : ids) z[id] = 0;
  Saddle best;
  best.score = maximize ? -kInf : kInf;
  do {
    double s = linear_score(w, x, o, z);
    if (maximize ? s > best.score : s < best.score) best = {s, z};
  } while (next_assignment(z, ids, o.spec()));
  return best;
}

}  // namespace detail

/// Interleaved max-min value of w.phi with some variables held fixed.
/// Uses tree dynamic programming for factorized oracles and alpha-beta
/// game-tree search otherwise. Ties go to the smallest index at every level.
template <class P>
Saddle solve_restricted(const Model& m, const P& x, const FeatureOracle<P>& o, const LatentAssignment& fixed,
                        const InferenceOptions& opts = {}) {
  detail::check_model(m, o);
  fixed.check_against(o.spec(), false);
  if (o.factorized()) {
    detail::TreeGame<P> game(m.w, x, o, fixed);
    if (game.cost() > opts.budget)
      throw ResourceError("structured inference budget exceeded", static_cast<std::size_t>(game.cost()));
    return game.solve();
  }
  detail::DenseGame<P> game(m.w, x, o, fixed);
  if (game.cost() > opts.budget)
    throw ResourceError("game-tree inference budget exceeded", static_cast<std::size_t>(game.cost()));
  return game.solve();
}

/// max_{z1+} min_{z1-} ... max_{zK+} min_{zK-} w.phi(x, z)
template <class P>
Saddle score_canonical(const Model& m, const P& x, const FeatureOracle<P>& o, const InferenceOptions& opts = {}) {
  return solve_restricted(m, x, o, LatentAssignment(o.spec().size()), opts);
}

/// Plain recursion over every variable; the independent reference for score_canonical.
template <class P>
Saddle brute_force_saddle(const Model& m, const P& x, const FeatureOracle<P>& o, double max_assignments = 1e4) {
  detail::check_model(m, o);
  if (o.spec().assignment_count() > max_assignments)
    throw ResourceError("brute force: too many assignments", static_cast<std::size_t>(o.spec().assignment_count()));
  LatentAssignment z(o.spec().size());
  return detail::brute_force_recurse(m.w, x, o, o.spec().order(), 0, z);
}

/// max_z w.phi(x, z) for a spec with only positive variables in one stage.
template <class P>
Saddle score_lvm(const Model& m, const P& x, const FeatureOracle<P>& o, const InferenceOptions& opts = {}) {
  detail::check_model(m, o);
  if (o.spec().has(Polarity::negative)) throw MisuseError("score_lvm: spec has negative latent variables");
  if (o.spec().num_stages() > 1) throw MisuseError("score_lvm: spec has more than one stage");
  if (o.spec().assignment_count() > opts.budget)
    throw ResourceError("score_lvm: budget exceeded", static_cast<std::size_t>(o.spec().assignment_count()));
  return detail::enumerate_extreme(m.w, x, o, o.spec().of(Polarity::positive), true);
}

/// max_{z+} w.phi(x, z+) + min_{z-} w.phi(x, z-).
///
/// Negative-variable blocks carry their sign, phi(x, z-) = -phi^-(x, z-), so the
/// second term is -max_{z-} w.phi^-(x, z-).
template <class P>
SimpleScore score_simple(const Model& m, const P& x, const FeatureOracle<P>& o, const InferenceOptions& opts = {}) {
  detail::check_model(m, o);
  const LatentSpec& spec = o.spec();
  if (spec.num_stages() > 1) throw MisuseError("score_simple: spec has more than one stage");
  for (const auto& v : spec.variables())
    if (v.parent >= 0 && spec.variable(v.parent).polarity != v.polarity)
      throw MisuseError("score_simple: positive/negative cross-dependency; use score_canonical");
  const auto pos = spec.of(Polarity::positive);
  const auto neg = spec.of(Polarity::negative);
  if (spec.assignment_count(pos) + spec.assignment_count(neg) > opts.budget)
    throw ResourceError("score_simple: budget exceeded");
  SimpleScore r;
  Saddle p = detail::enumerate_extreme(m.w, x, o, pos, true);
  Saddle n = detail::enumerate_extreme(m.w, x, o, neg, false);
  r.score = p.score + n.score;
  r.argmax_pos = std::move(p.assignment);
  r.argmax_neg = std::move(n.assignment);
  return r;
}

/// max_h w.phi(x, +1, h) - max_h w.phi(x, -1, h): the binary latent structural
/// SVM score written as a two-oracle difference.
template <class P>
double score_lssvm_binary(const Model& m, const P& x, const FeatureOracle<P>& oracle_pos,
                          const FeatureOracle<P>& oracle_neg, const InferenceOptions& opts = {}) {
  if (!(oracle_pos.layout() == oracle_neg.layout()))
    throw MisuseError("score_lssvm_binary: oracles disagree on the block layout");
  return score_lvm(m, x, oracle_pos, opts).score - score_lvm(m, x, oracle_neg, opts).score;
}

}  // namespace glvm
