#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "glvm/errors.hpp"
#include "glvm/linalg.hpp"

namespace glvm {

/// A sum of hinge terms h_i(w) = max(0, max_k c_ik + g_ik . w).
///
/// This is the shape every convex training bound takes once latent
/// variables are fixed: background terms max(0, m + max_k g_k . w) and
/// foreground terms max(0, m - min_k g_k . w) are both maxima of affine pieces.
class HingeProblem {
 public:
  virtual ~HingeProblem() = default;
  virtual std::size_t dim() const = 0;
  virtual std::size_t size() const = 0;
  /// Most violated piece of term i at w (first one on ties). Returns false,
  /// leaving the outputs untouched, when no piece is strictly positive.
  virtual bool active_piece(std::size_t i, std::span<const double> w, double& offset, Vector& slope) const = 0;
};

struct AffinePiece {
  double offset = 0.0;
  Vector slope;
};

/// Hinge problem with every piece listed explicitly.
class PieceListProblem : public HingeProblem {
 public:
  PieceListProblem(std::size_t dim, std::vector<std::vector<AffinePiece>> terms)
      : dim_(dim), terms_(std::move(terms)) {
    for (const auto& t : terms_)
      for (const auto& p : t)
        if (p.slope.size() != dim_) throw MisuseError("PieceListProblem: slope dimension mismatch");
  }

  std::size_t dim() const override { return dim_; }
  std::size_t size() const override { return terms_.size(); }
  const std::vector<AffinePiece>& pieces(std::size_t i) const { return terms_[i]; }

  bool active_piece(std::size_t i, std::span<const double> w, double& offset, Vector& slope) const override {
    double best = 0.0;
    const AffinePiece* arg = nullptr;
    for (const auto& p : terms_[i]) {
      const double v = p.offset + dot(p.slope, w);
      if (v > best) {
        best = v;
        arg = &p;
      }
    }
    if (!arg) return false;
    offset = arg->offset;
    slope = arg->slope;
    return true;
  }

 private:
  std::size_t dim_;
  std::vector<std::vector<AffinePiece>> terms_;
};

/// 1/2 |w|^2 + C sum_i h_i(w)
inline double hinge_objective(const HingeProblem& p, std::span<const double> w, double C) {
  double loss = 0.0, off = 0.0;
  Vector g;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (p.active_piece(i, w, off, g)) loss += off + dot(g, w);
  return 0.5 * squared_norm(w) + C * loss;
}

inline Vector hinge_subgradient(const HingeProblem& p, std::span<const double> w, double C,
                                std::size_t* active = nullptr) {
  Vector grad(w.begin(), w.end());
  double off = 0.0;
  Vector g;
  std::size_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (!p.active_piece(i, w, off, g)) continue;
    axpy(C, g, grad);
    ++n;
  }
  if (active) *active = n;
  return grad;
}

enum class InnerSolver {
  dual_coordinate,  // block-coordinate pairwise Frank-Wolfe on the dual, duality-gap stop
  subgradient       // shuffled stochastic subgradient, eta_k = eta0 / (1 + lambda k)
};

struct InnerConfig {
  InnerSolver solver = InnerSolver::dual_coordinate;
  int max_epochs = 2000;
  double tol = 1e-8;  // duality gap relative to max(1, objective)
  int cache_passes = 5;
  double eta0 = 0.1;
  double lambda = 0.01;
  bool operator==(const InnerConfig&) const = default;
};

struct InnerResult {
  Vector w;
  double objective = 0.0;
  double gap = 0.0;  // NaN for the subgradient solver
  int epochs = 0;
};

/// Block-coordinate pairwise Frank-Wolfe on the dual
///   max_a  C sum_ij a_ij c_ij - 1/2 |C sum_ij a_ij g_ij|^2,  a_i in the simplex
/// with primal w = -C sum_ij a_ij g_ij. Atom j of block i is a piece of hinge
/// i; the zero piece is the implicit corner carrying the remaining mass.
/// Each epoch makes one pass calling the piece oracle and `cache_passes`
/// cheap passes over the atoms seen so far.
/// Dual variables of solve_hinge_dual: held pieces with their mass per term,
/// plus the mass left on the zero corner.
struct DualState {
  struct Atom {
    double offset;
    Vector slope;
    double alpha;
  };
  std::vector<std::vector<Atom>> atoms;
  std::vector<double> zero_mass;
};

/// With `warm`, starts from its dual point and stores the final one back.
/// Terms are matched by index, and every held atom must still be a piece of
/// its term; terms beyond the stored ones start at the zero corner.
inline InnerResult solve_hinge_dual(const HingeProblem& p, double C, const InnerConfig& cfg, std::uint64_t seed,
                                    DualState* warm = nullptr) {
  using Atom = DualState::Atom;
  const std::size_t n = p.size(), d = p.dim();
  DualState local;
  DualState& st = warm ? *warm : local;
  if (st.atoms.size() > n) throw MisuseError("solve_hinge_dual: warm start has more terms than the problem");
  st.atoms.resize(n);
  st.zero_mass.resize(n, 1.0);
  auto& atoms = st.atoms;
  auto& zero_mass = st.zero_mass;
  InnerResult r;
  r.w.assign(d, 0.0);
  double l = 0.0;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  Vector slope, dw(d);
  double off = 0.0;

  auto recompute = [&]() {
    std::fill(r.w.begin(), r.w.end(), 0.0);
    l = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (const auto& a : atoms[i]) {
        axpy(-C * a.alpha, a.slope, r.w);
        l += C * a.alpha * a.offset;
      }
  };
  auto full_gap = [&]() {
    double loss = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (p.active_piece(i, r.w, off, slope)) loss += off + dot(slope, r.w);
    const double wn = squared_norm(r.w);
    r.objective = 0.5 * wn + C * loss;
    return wn + C * loss - l;  // primal - dual
  };
  auto score = [&](const Atom& a) { return C * (a.offset + dot(a.slope, r.w)); };

  // Move mass from the worst held atom to atom `s` (-1: the zero corner).
  auto pairwise = [&](std::size_t i, long s) {
    auto& as = atoms[i];
    const double s_score = s < 0 ? 0.0 : score(as[static_cast<std::size_t>(s)]);
    long v = -2;
    double v_score = 0.0;
    if (zero_mass[i] > 0.0) v = -1, v_score = 0.0;
    for (std::size_t j = 0; j < as.size(); ++j) {
      if (as[j].alpha <= 0.0) continue;
      const double sc = score(as[j]);
      if (v == -2 || sc < v_score) v = static_cast<long>(j), v_score = sc;
    }
    if (v == -2 || v == s) return;
    const double delta = s_score - v_score;
    if (!(delta > 0.0)) return;
    std::fill(dw.begin(), dw.end(), 0.0);
    double dc = 0.0;
    if (s >= 0) axpy(-C, as[static_cast<std::size_t>(s)].slope, dw), dc += as[static_cast<std::size_t>(s)].offset;
    if (v >= 0) axpy(C, as[static_cast<std::size_t>(v)].slope, dw), dc -= as[static_cast<std::size_t>(v)].offset;
    const double held = v < 0 ? zero_mass[i] : as[static_cast<std::size_t>(v)].alpha;
    const double dn = squared_norm(dw);
    const double gamma = dn > 0.0 ? std::min(delta / dn, held) : held;
    if (!(gamma > 0.0)) return;
    axpy(gamma, dw, r.w);
    l += gamma * C * dc;
    if (s < 0) zero_mass[i] += gamma;
    else as[static_cast<std::size_t>(s)].alpha += gamma;
    if (v < 0) zero_mass[i] = gamma == held ? 0.0 : zero_mass[i] - gamma;
    else {
      Atom& a = as[static_cast<std::size_t>(v)];
      a.alpha = gamma == held ? 0.0 : a.alpha - gamma;
    }
  };

  for (r.epochs = 0; r.epochs < cfg.max_epochs; ++r.epochs) {
    recompute();
    r.gap = full_gap();
    if (!std::isfinite(r.gap)) throw NumericError("dual solver: non-finite duality gap");
    if (r.gap <= cfg.tol * std::max(1.0, std::abs(r.objective))) break;
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      long s = -1;
      if (p.active_piece(i, r.w, off, slope)) {
        auto& as = atoms[i];
        for (std::size_t j = 0; j < as.size() && s < 0; ++j)
          if (as[j].offset == off && as[j].slope == slope) s = static_cast<long>(j);
        if (s < 0) {
          as.push_back({off, slope, 0.0});
          s = static_cast<long>(as.size() - 1);
        }
      }
      pairwise(i, s);
    }
    for (int pass = 0; pass < cfg.cache_passes; ++pass) {
      for (std::size_t i : order) {
        long s = -1;
        double best = 0.0;
        for (std::size_t j = 0; j < atoms[i].size(); ++j) {
          const double sc = score(atoms[i][j]);
          if (sc > best) best = sc, s = static_cast<long>(j);
        }
        pairwise(i, s);
      }
    }
    for (auto& as : atoms)
      as.erase(std::remove_if(as.begin(), as.end(), [](const Atom& a) { return a.alpha <= 0.0; }), as.end());
  }
  if (r.epochs == cfg.max_epochs) {
    recompute();
    r.gap = full_gap();
  }
  return r;
}

/// Stochastic subgradient descent with a deterministic per-epoch shuffle.
/// Returns the best iterate seen (by full objective) at epoch boundaries.
inline InnerResult solve_hinge_subgradient(const HingeProblem& p, double C, const InnerConfig& cfg,
                                           std::uint64_t seed, std::span<const double> start) {
  const std::size_t n = p.size(), d = p.dim();
  Vector w(start.begin(), start.end());
  InnerResult r;
  r.w = w;
  r.objective = hinge_objective(p, w, C);
  r.gap = std::nan("");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  Vector slope;
  double off = 0.0;
  std::uint64_t k = 0;
  const double scale = n > 0 ? static_cast<double>(n) : 1.0;
  for (int e = 0; e < cfg.max_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t i : order) {
      const double eta = cfg.eta0 / (1.0 + cfg.lambda * static_cast<double>(k++));
      // per-example share of the objective: |w|^2 / (2n) + C h_i(w)
      const bool active = p.active_piece(i, w, off, slope);
      for (std::size_t j = 0; j < d; ++j) w[j] -= eta * (w[j] / scale);
      if (active) axpy(-eta * C, slope, w);
    }
    if (!all_finite(w)) throw NumericError("subgradient solver: non-finite weights");
    const double obj = hinge_objective(p, w, C);
    if (obj < r.objective) {
      r.objective = obj;
      r.w = w;
    }
    r.epochs = e + 1;
  }
  return r;
}

inline InnerResult solve_hinge(const HingeProblem& p, double C, const InnerConfig& cfg, std::uint64_t seed,
                               std::span<const double> start, DualState* warm = nullptr) {
  if (cfg.solver == InnerSolver::subgradient) return solve_hinge_subgradient(p, C, cfg, seed, start);
  return solve_hinge_dual(p, C, cfg, seed, warm);
}

}  // namespace glvm
