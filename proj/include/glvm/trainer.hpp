#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "glvm/bounds.hpp"
#include "glvm/hinge_solver.hpp"

namespace glvm {

struct TrainConfig {
  double C = 1.0;
  double margin = 1.0;
  int max_outer_iters = 20;
  int min_outer_iters = 1;
  double outer_tol = 1e-4;  // stop on relative objective decrease below this
  InnerConfig inner;
  std::uint64_t seed = 0;
  InferenceOptions inference;

  void validate() const {
    if (!(C > 0)) throw MisuseError("TrainConfig: C must be positive");
    if (margin < 0) throw MisuseError("TrainConfig: margin must be non-negative");
    if (outer_tol < 0 || inner.tol <= 0) throw MisuseError("TrainConfig: tolerances must be positive");
    if (max_outer_iters < 1 || min_outer_iters < 0) throw MisuseError("TrainConfig: bad iteration limits");
  }
  bool operator==(const TrainConfig&) const = default;
};

struct TraceRecord {
  int iteration = 0;
  double objective = 0.0;       // O(w_t)
  double bound_anchor = 0.0;    // B_t(w_{t-1}); equals O(w_{t-1})
  double bound_solution = 0.0;  // B_t(w_t)
  double seconds = 0.0;
  std::size_t hard_examples = 0;
  int inner_epochs = 0;
  double inner_gap = 0.0;
};

struct TrainTrace {
  std::vector<TraceRecord> records;
  std::vector<std::string> warnings;

  /// Index of the first record whose objective exceeds its predecessor's by more than tol, or -1.
  int first_increase(double tol = 1e-7) const {
    for (std::size_t i = 1; i < records.size(); ++i)
      if (records[i].objective > records[i - 1].objective + tol) return static_cast<int>(i);
    return -1;
  }
  bool monotone(double tol = 1e-7) const { return first_increase(tol) < 0; }

  void write_csv(std::ostream& os) const {
    os.precision(17);
    os << "iteration,objective,bound_anchor,bound_solution,seconds,hard_examples,inner_epochs,inner_gap\n";
    for (const auto& r : records)
      os << r.iteration << ',' << r.objective << ',' << r.bound_anchor << ',' << r.bound_solution << ','
         << r.seconds << ',' << r.hard_examples << ',' << r.inner_epochs << ',' << r.inner_gap << '\n';
  }
};

/// Alternate bound construction and bound minimization until the objective
/// stops decreasing.
///
/// Problem must provide
///   double objective(const Vector&) const;
///   Bound relabel(const Vector& anchor, int iteration) const;
/// and Bound
///   double value(const Vector&) const;
///   Vector minimize(const Vector& anchor, const TrainConfig&, TraceRecord&) const;
template <class Problem>
std::pair<Vector, TrainTrace> train_with(const Problem& problem, Vector init, const TrainConfig& cfg) {
  cfg.validate();
  using clock = std::chrono::steady_clock;
  TrainTrace trace;
  Vector w = std::move(init);
  double obj = problem.objective(w);
  if (!std::isfinite(obj)) throw NumericError("train: non-finite initial objective");
  trace.records.push_back({0, obj, obj, obj, 0.0, 0, 0, 0.0});

  for (int t = 1; t <= cfg.max_outer_iters; ++t) {
    const auto start = clock::now();
    TraceRecord rec;
    rec.iteration = t;
    const auto bound = problem.relabel(w, t);
    rec.bound_anchor = bound.value(w);
    Vector next = bound.minimize(w, cfg, rec);
    rec.bound_solution = bound.value(next);
    const double next_obj = problem.objective(next);
    if (!std::isfinite(next_obj)) throw NumericError("train: non-finite objective at iteration " + std::to_string(t));
    rec.objective = next_obj;
    rec.seconds = std::chrono::duration<double>(clock::now() - start).count();
    trace.records.push_back(rec);
    if (next_obj > obj + 1e-7)
      throw InvariantViolation("train: objective increased from " + std::to_string(obj) + " to " +
                               std::to_string(next_obj) + " at iteration " + std::to_string(t));
    const double decrease = obj - next_obj;
    w = std::move(next);
    const double prev = obj;
    obj = next_obj;
    if (t >= cfg.min_outer_iters && decrease <= cfg.outer_tol * std::max(1.0, std::abs(prev))) break;
  }
  return {std::move(w), std::move(trace)};
}

/// SVM objective 1/2 |w|^2 + C sum_i max(0, margin - y_i S(x_i)) with the canonical score.
template <class P>
double svm_objective(const Model& m, const Dataset<P>& data, const FeatureOracle<P>& o, const TrainConfig& cfg) {
  if (data.empty()) throw MisuseError("svm_objective: empty dataset");
  double loss = 0.0;
  for (const auto& ex : data) {
    check_label(ex.label);
    const double s = score_canonical(m, ex.payload, o, cfg.inference).score;
    loss += std::max(0.0, cfg.margin - ex.label * s);
  }
  return 0.5 * squared_norm(m.w) + cfg.C * loss;
}

/// The training bound as an explicit hinge problem: background examples
/// contribute max(0, m + upper), foreground ones max(0, m - lower).
template <class P>
PieceListProblem bound_pieces(const Dataset<P>& data, const AnchorPlan& plan, const TrainConfig& cfg) {
  if (data.empty()) throw MisuseError("bound: empty dataset");
  std::vector<std::vector<AffinePiece>> terms;
  const std::size_t dim = plan.anchor().w.size();
  for (const auto& ex : data) {
    check_label(ex.label);
    const ExamplePlan& ep = plan.at(ex.id);
    std::vector<AffinePiece> pieces;
    if (ex.label < 0) {
      if (ep.upper.empty()) throw MisuseError("bound: background example without upper-bound plan");
      for (const auto& c : ep.upper) pieces.push_back({cfg.margin, c.features});
    } else {
      if (ep.lower.empty()) throw MisuseError("bound: foreground example without lower-bound plan");
      for (const auto& c : ep.lower) {
        AffinePiece piece{cfg.margin, c.features};
        for (double& v : piece.slope) v = -v;
        pieces.push_back(std::move(piece));
      }
    }
    terms.push_back(std::move(pieces));
  }
  return PieceListProblem(dim, std::move(terms));
}

template <class P>
double bound_objective(const Model& m, const Dataset<P>& data, const AnchorPlan& plan, const TrainConfig& cfg) {
  if (!(plan.anchor().layout == m.layout)) throw MisuseError("bound_objective: layout mismatch");
  if (data.empty()) throw MisuseError("bound_objective: empty dataset");
  double loss = 0.0;
  for (const auto& ex : data) {
    check_label(ex.label);
    const ExamplePlan& ep = plan.at(ex.id);
    if (ex.label < 0) loss += std::max(0.0, cfg.margin + upper_bound_piece(m.w, ep).score);
    else loss += std::max(0.0, cfg.margin - lower_bound_piece(m.w, ep).score);
  }
  return 0.5 * squared_norm(m.w) + cfg.C * loss;
}

/// w + C * sum of signed active features over margin-violating terms.
/// Hinges exactly at zero count as inactive.
template <class P>
Vector bound_subgradient(const Model& m, const Dataset<P>& data, const AnchorPlan& plan, const TrainConfig& cfg) {
  if (!(plan.anchor().layout == m.layout)) throw MisuseError("bound_subgradient: layout mismatch");
  if (data.empty()) throw MisuseError("bound_subgradient: empty dataset");
  Vector g = m.w;
  for (const auto& ex : data) {
    check_label(ex.label);
    const ExamplePlan& ep = plan.at(ex.id);
    if (ex.label < 0) {
      const BoundScore b = upper_bound_piece(m.w, ep);
      if (cfg.margin + b.score > 0) axpy(cfg.C, ep.upper[b.candidate].features, g);
    } else {
      const BoundScore b = lower_bound_piece(m.w, ep);
      if (cfg.margin - b.score > 0) axpy(-cfg.C, ep.lower[b.candidate].features, g);
    }
  }
  return g;
}

/// Bound B_t anchored at a model, solved as a hinge problem.
template <class P>
class PlanBound {
 public:
  PlanBound(const Dataset<P>& data, AnchorPlan plan, const TrainConfig& cfg)
      : data_(&data), plan_(std::move(plan)), pieces_(bound_pieces(data, plan_, cfg)), cfg_(cfg) {}

  double value(const Vector& w) const { return hinge_objective(pieces_, w, cfg_.C); }

  Vector minimize(const Vector& anchor, const TrainConfig& cfg, TraceRecord& rec) const {
    InnerResult r = solve_hinge(pieces_, cfg.C, cfg.inner, cfg.seed + static_cast<std::uint64_t>(plan_.iteration()),
                                anchor);
    if (!all_finite(r.w)) throw NumericError("minimize_bound: non-finite weights");
    rec.inner_epochs = r.epochs;
    rec.inner_gap = r.gap;
    // never return something worse than the anchor: keeps B_t non-increasing
    if (value(r.w) > value(anchor)) r.w = anchor;
    hinge_subgradient(pieces_, r.w, cfg.C, &rec.hard_examples);
    return r.w;
  }

  const AnchorPlan& plan() const { return plan_; }
  const PieceListProblem& pieces() const { return pieces_; }

 private:
  const Dataset<P>* data_;
  AnchorPlan plan_;
  PieceListProblem pieces_;
  TrainConfig cfg_;
};

/// Generic GLVM training problem over an explicit feature oracle.
template <class P>
class GlvmProblem {
 public:
  GlvmProblem(const Dataset<P>& data, const FeatureOracle<P>& o, TrainConfig cfg)
      : data_(data), o_(o), cfg_(std::move(cfg)) {}

  double objective(const Vector& w) const { return svm_objective(Model(w, o_.layout()), data_, o_, cfg_); }

  PlanBound<P> relabel(const Vector& anchor, int iteration) const {
    return PlanBound<P>(data_, build_plan(Model(anchor, o_.layout()), data_, o_, PlanScope::by_label, iteration,
                                          cfg_.inference),
                        cfg_);
  }

 private:
  const Dataset<P>& data_;
  const FeatureOracle<P>& o_;
  TrainConfig cfg_;
};

/// One bound-minimization step from an anchor: returns w with B_t(w) <= B_t(anchor).
template <class P>
Model minimize_bound(const Model& anchor, const Dataset<P>& data, const FeatureOracle<P>& o, const TrainConfig& cfg) {
  cfg.validate();
  GlvmProblem<P> problem(data, o, cfg);
  TraceRecord rec;
  auto bound = problem.relabel(anchor.w, 0);
  return Model(bound.minimize(anchor.w, cfg, rec), anchor.layout);
}

template <class P>
std::pair<Model, TrainTrace> train(const Dataset<P>& data, const FeatureOracle<P>& o, const Model& init,
                                   const TrainConfig& cfg) {
  detail::check_model(init, o);
  if (data.empty()) throw MisuseError("train: empty dataset");
  GlvmProblem<P> problem(data, o, cfg);
  auto [w, trace] = train_with(problem, init.w, cfg);
  return {Model(std::move(w), o.layout()), std::move(trace)};
}

}  // namespace glvm
