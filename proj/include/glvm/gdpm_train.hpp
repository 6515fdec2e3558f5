#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "glvm/gdpm.hpp"
#include "glvm/parallel.hpp"
#include "glvm/trainer.hpp"

namespace glvm {

/// One training term source: a positive box (with its valid root set) or a
/// background image, every root placement of which is a separate term.
struct GdpmExample {
  std::string id;
  std::shared_ptr<const FeaturePyramid> pyramid;
  int label = -1;
  std::vector<Placement> roots;  // valid roots of the box; unused for backgrounds
};

/// Builds examples from annotated images: one per positive box, one per
/// background image. Positive images' other regions are not used.
inline std::vector<GdpmExample> make_examples(const std::vector<AnnotatedImage>& images, const GdpmModel& shape,
                                              const PyramidConfig& pcfg, double tau) {
  std::vector<GdpmExample> out;
  for (const auto& im : images) {
    check_label(im.label);
    auto pyr = std::make_shared<const FeaturePyramid>(build_pyramid(im.image, pcfg));
    if (im.label < 0) {
      out.push_back({im.id, pyr, -1, {}});
      continue;
    }
    if (im.boxes.empty()) throw MisuseError("make_examples: positive image " + im.id + " has no box");
    for (std::size_t b = 0; b < im.boxes.size(); ++b) {
      const std::string id = im.boxes.size() == 1 ? im.id : im.id + "#" + std::to_string(b);
      out.push_back({id, pyr, 1, valid_roots(shape, *pyr, im.boxes[b], tau)});
    }
  }
  return out;
}

struct GdpmConfig {
  TrainConfig train;
  double overlap = 0.7;
  std::size_t cache_capacity = 1'000'000;
  int max_mining_rounds = 25;
  int threads = 1;
};

/// Full latent assignment of one component at one root.
struct GdpmLatent {
  Placement root;
  int component = 0;
  std::vector<PartPlacement> positive;
  std::vector<PartPlacement> negative;
  auto operator<=>(const GdpmLatent&) const = default;
};

/// Relabeling result anchored at a model. Foregrounds keep the anchor's
/// (root, component, positive parts); backgrounds keep the negative parts
/// where the anchor puts them, for every root placement and component.
class GdpmPlan {
 public:
  GdpmPlan(GdpmModel anchor, const std::vector<GdpmExample>& data, int iteration, int threads = 1,
           std::vector<std::string>* warnings = nullptr)
      : anchor_(std::move(anchor)), iteration_(iteration), fixed_(data.size()), negatives_(data.size()) {
    anchor_.validate();
    const bool any_negative = std::any_of(anchor_.components.begin(), anchor_.components.end(),
                                          [](const MixtureComponent& c) { return !c.negative.empty(); });
    parallel_for(data.size(), threads, [&](std::size_t i) {
      const auto& ex = data[i];
      check_label(ex.label);
      if (ex.label < 0) {
        if (!any_negative) return;
        const ImageScorer sc(anchor_, *ex.pyramid);
        for (const auto& p : all_roots(anchor_, *ex.pyramid)) {
          std::vector<std::vector<PartPlacement>> per_component;
          for (int c = 0; c < static_cast<int>(anchor_.components.size()); ++c) {
            std::vector<PartPlacement> at;
            for (int j = 0; j < static_cast<int>(anchor_.components[static_cast<std::size_t>(c)].negative.size()); ++j)
              at.push_back(sc.best(c, Polarity::negative, j, p).at);
            per_component.push_back(std::move(at));
          }
          negatives_[i].push_back(std::move(per_component));
        }
        return;
      }
      if (ex.roots.empty()) return;
      auto [s, det] = gdpm_score_at(anchor_, *ex.pyramid, ex.roots);
      fixed_[i] = GdpmLatent{det.root, det.component, det.positive, det.negative};
    });
    for (std::size_t i = 0; i < data.size(); ++i)
      if (data[i].label > 0 && data[i].roots.empty() && warnings)
        warnings->push_back("relabel: positive " + data[i].id + " has no valid root placement; skipped");
  }

  const GdpmModel& anchor() const { return anchor_; }
  int iteration() const { return iteration_; }
  /// Anchor-chosen foreground latent; empty for backgrounds and skipped positives.
  const std::optional<GdpmLatent>& fixed(std::size_t i) const { return fixed_.at(i); }
  /// Anchor's negative part placements on background i at root placement t
  /// (index into all_roots), component c.
  const std::vector<PartPlacement>& negatives(std::size_t i, std::size_t t, int c) const {
    static const std::vector<PartPlacement> none;
    const auto& ex = negatives_.at(i);
    return ex.empty() ? none : ex.at(t).at(static_cast<std::size_t>(c));
  }

 private:
  GdpmModel anchor_;
  int iteration_;
  std::vector<std::optional<GdpmLatent>> fixed_;
  std::vector<std::vector<std::vector<std::vector<PartPlacement>>>> negatives_;  // [example][placement][component]
};

/// Bound scores of one example under a plan at the current weights:
/// Ŝ for a foreground (single term), Š per root placement for a background.
class ExampleBound {
 public:
  ExampleBound(const GdpmModel& current, const GdpmPlan& plan, const GdpmExample& ex, std::size_t index)
      : ex_(ex), plan_(plan), index_(index), fixed_(plan.fixed(index)), cur_(current, *ex.pyramid) {
    if (ex.label < 0) roots_ = all_roots(current, *ex.pyramid);
  }

  /// 0 for skipped positives.
  std::size_t terms() const { return ex_.label < 0 ? roots_.size() : (fixed_ ? 1 : 0); }

  double score(std::size_t t, GdpmLatent* z = nullptr) const {
    const auto& m = cur_.model();
    if (ex_.label > 0) {
      const GdpmLatent& f = *fixed_;
      double s = cur_.root(f.component, f.root);
      for (int j = 0; j < static_cast<int>(f.positive.size()); ++j)
        s += cur_.part_at(f.component, Polarity::positive, j, f.root, f.positive[static_cast<std::size_t>(j)]);
      const int nneg = static_cast<int>(m.components[static_cast<std::size_t>(f.component)].negative.size());
      if (z) *z = f;
      for (int j = 0; j < nneg; ++j) {
        const auto b = cur_.best(f.component, Polarity::negative, j, f.root);
        s -= b.value;
        if (z) z->negative[static_cast<std::size_t>(j)] = b.at;
      }
      return s;
    }
    const Placement& p = roots_.at(t);
    double best = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(m.components.size()); ++c) {
      const auto& comp = m.components[static_cast<std::size_t>(c)];
      GdpmLatent cand{p, c, {}, {}};
      double s = cur_.root(c, p);
      for (int j = 0; j < static_cast<int>(comp.positive.size()); ++j) {
        const auto b = cur_.best(c, Polarity::positive, j, p);
        s += b.value;
        cand.positive.push_back(b.at);
      }
      const auto& neg = plan_.negatives(index_, t, c);
      for (int j = 0; j < static_cast<int>(comp.negative.size()); ++j) {
        const PartPlacement at = neg[static_cast<std::size_t>(j)];
        s -= cur_.part_at(c, Polarity::negative, j, p, at);
        cand.negative.push_back(at);
      }
      if (s > best) {
        best = s;
        if (z) *z = std::move(cand);
      }
    }
    return best;
  }

  Vector features(const GdpmLatent& z) const { return cur_.features(z.component, z.root, z.positive, z.negative); }

 private:
  const GdpmExample& ex_;
  const GdpmPlan& plan_;
  std::size_t index_;
  const std::optional<GdpmLatent>& fixed_;
  ImageScorer cur_;
  std::vector<Placement> roots_;
};

struct CachedTerm {
  int example = 0;
  int placement = -1;  // index into all_roots for backgrounds, -1 for foregrounds
  double score = 0.0;  // bound score at the weights used for mining
  bool hard = false;
  bool operator==(const CachedTerm&) const = default;
};

struct ExampleCache {
  std::vector<CachedTerm> terms;  // sorted by (example, placement)
  std::size_t hard = 0;
};

namespace detail {

struct ScannedTerm {
  int example;
  int placement;
  double score;
  GdpmLatent latent;
};

/// Bound scores and maximizing latents at `current` of the terms whose hinge
/// margin - y * score is >= keep_from (of all terms with keep_all).
inline std::vector<ScannedTerm> scan(const GdpmModel& current, const GdpmPlan& plan,
                                     const std::vector<GdpmExample>& data, double margin, double keep_from,
                                     int threads, bool keep_all = false) {
  std::vector<std::vector<ScannedTerm>> per(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    ExampleBound eb(current, plan, data[i], i);
    const int y = data[i].label;
    for (std::size_t t = 0; t < eb.terms(); ++t) {
      GdpmLatent z;
      const double s = eb.score(t, &z);
      const double hinge = margin - y * s;
      if (keep_all || hinge >= keep_from)
        per[i].push_back({static_cast<int>(i), y < 0 ? static_cast<int>(t) : -1, s, std::move(z)});
    }
  });
  std::vector<ScannedTerm> out;
  for (auto& v : per)
    for (auto& t : v) out.push_back(std::move(t));
  return out;
}

inline double term_hinge(const GdpmExample& ex, double margin, double score) { return margin - ex.label * score; }

inline ExampleCache mine_from(const std::vector<ScannedTerm>& hard, const GdpmModel& current, const GdpmPlan& plan,
                              const std::vector<GdpmExample>& data, std::size_t cache_cap, double margin,
                              const ExampleCache* previous) {
  if (hard.size() > cache_cap)
    throw ResourceError("mine_hard_examples: " + std::to_string(hard.size()) + " hard terms exceed cache capacity " +
                            std::to_string(cache_cap),
                        hard.size());
  std::map<std::pair<int, int>, CachedTerm> keep;
  for (const auto& t : hard) keep[{t.example, t.placement}] = {t.example, t.placement, t.score, true};
  if (previous) {
    std::vector<CachedTerm> stale;
    for (const auto& t : previous->terms)
      if (!keep.contains({t.example, t.placement})) stale.push_back(t);
    if (!stale.empty()) {
      // rescore with the current weights so eviction ranks by present difficulty
      std::map<int, std::vector<CachedTerm*>> by_example;
      for (auto& t : stale) by_example[t.example].push_back(&t);
      for (auto& [i, ts] : by_example) {
        ExampleBound eb(current, plan, data[static_cast<std::size_t>(i)], static_cast<std::size_t>(i));
        for (auto* t : ts) {
          t->score = eb.score(t->placement < 0 ? 0 : static_cast<std::size_t>(t->placement));
          t->hard = false;
        }
      }
      std::stable_sort(stale.begin(), stale.end(), [&](const CachedTerm& a, const CachedTerm& b) {
        return detail::term_hinge(data[static_cast<std::size_t>(a.example)], margin, a.score) >
               detail::term_hinge(data[static_cast<std::size_t>(b.example)], margin, b.score);
      });
      for (const auto& t : stale) {
        if (keep.size() >= cache_cap) break;
        keep[{t.example, t.placement}] = t;
      }
    }
  }
  ExampleCache out;
  for (auto& [k, t] : keep) out.terms.push_back(t);
  out.hard = hard.size();
  return out;
}

}  // namespace detail

/// Keeps background placements with bound score >= -margin and foregrounds
/// with bound score <= margin. Terms from `previous` that are no longer hard
/// stay while there is room, easiest (smallest hinge) evicted first.
inline ExampleCache mine_hard_examples(const GdpmModel& current, const GdpmPlan& plan,
                                       const std::vector<GdpmExample>& data, std::size_t cache_cap, double margin,
                                       const ExampleCache* previous = nullptr, int threads = 1) {
  return detail::mine_from(detail::scan(current, plan, data, margin, 0.0, threads), current, plan, data, cache_cap,
                           margin, previous);
}

/// Exact GDPM objective 1/2 |w|^2 + C (sum over positives of
/// max(0, m - S(x, R)) + sum over background placements of max(0, m + S(x, p))).
inline double gdpm_objective(const GdpmModel& m, const std::vector<GdpmExample>& data, const TrainConfig& cfg,
                             int threads = 1) {
  std::vector<double> loss(data.size(), 0.0);
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const auto& ex = data[i];
    check_label(ex.label);
    if (ex.label > 0) {
      if (!ex.roots.empty()) loss[i] = std::max(0.0, cfg.margin - gdpm_score_at(m, *ex.pyramid, ex.roots).first);
      return;
    }
    ImageScorer sc(m, *ex.pyramid);
    for (const auto& p : all_roots(m, *ex.pyramid)) {
      double s = -std::numeric_limits<double>::infinity();
      for (int c = 0; c < static_cast<int>(m.components.size()); ++c) s = std::max(s, sc.score(c, p));
      loss[i] += std::max(0.0, cfg.margin + s);
    }
  });
  double total = 0.0;
  for (double l : loss) total += l;
  return 0.5 * squared_norm(m.flatten()) + cfg.C * total;
}

/// Bound B_t anchored at a plan. Minimization alternates hard-term mining
/// with an exact solve over the affine pieces collected so far, until a
/// full scan finds no piece above the cached maximum of its term.
class GdpmBound {
 public:
  GdpmBound(const std::vector<GdpmExample>& data, GdpmPlan plan, GdpmConfig cfg)
      : data_(&data), plan_(std::move(plan)), cfg_(std::move(cfg)) {}

  double value(const Vector& w) const {
    const GdpmModel m = plan_.anchor().with_weights(w);
    double loss = 0.0;
    for (const auto& t : detail::scan(m, plan_, *data_, cfg_.train.margin, 0.0, cfg_.threads, true))
      loss += std::max(0.0, detail::term_hinge((*data_)[static_cast<std::size_t>(t.example)], cfg_.train.margin, t.score));
    return 0.5 * squared_norm(w) + cfg_.train.C * loss;
  }

  Vector minimize(const Vector& anchor, const TrainConfig& tcfg, TraceRecord& rec) const {
    const double margin = tcfg.margin;
    // terms keep their index across mining rounds so the dual can be warm-started
    std::map<std::pair<int, int>, std::size_t> index;
    std::vector<std::vector<std::pair<GdpmLatent, AffinePiece>>> pieces;
    DualState dual;
    ExampleCache cache;
    Vector w = anchor;
    for (int round = 0; round < cfg_.max_mining_rounds; ++round) {
      const GdpmModel m = plan_.anchor().with_weights(w);
      const auto hard = detail::scan(m, plan_, *data_, margin, 0.0, cfg_.threads);
      cache = detail::mine_from(hard, m, plan_, *data_, cfg_.cache_capacity, margin, &cache);
      rec.hard_examples = cache.hard;
      std::size_t added = 0;
      std::optional<ExampleBound> eb;
      int eb_example = -1;
      for (const auto& t : hard) {
        const auto& ex = (*data_)[static_cast<std::size_t>(t.example)];
        const auto [it, fresh] = index.try_emplace({t.example, t.placement}, pieces.size());
        if (fresh) pieces.emplace_back();
        auto& list = pieces[it->second];
        double cached = 0.0;
        bool present = false;
        for (const auto& [z, piece] : list) {
          cached = std::max(cached, piece.offset + dot(piece.slope, w));
          present = present || z == t.latent;
        }
        const double hinge = detail::term_hinge(ex, margin, t.score);
        if (present || hinge <= cached + 1e-12 * std::max(1.0, std::abs(hinge))) continue;
        if (eb_example != t.example) {
          eb.emplace(m, plan_, ex, static_cast<std::size_t>(t.example));
          eb_example = t.example;
        }
        AffinePiece piece{margin, eb->features(t.latent)};
        if (ex.label > 0)
          for (double& v : piece.slope) v = -v;
        list.emplace_back(t.latent, std::move(piece));
        ++added;
      }
      if (added == 0) break;
      std::vector<std::vector<AffinePiece>> terms;
      for (const auto& list : pieces) {
        std::vector<AffinePiece> ps;
        for (const auto& [z, piece] : list) ps.push_back(piece);
        terms.push_back(std::move(ps));
      }
      PieceListProblem problem(anchor.size(), std::move(terms));
      InnerResult r = solve_hinge(problem, tcfg.C, tcfg.inner,
                                  tcfg.seed + static_cast<std::uint64_t>(plan_.iteration()), w, &dual);
      if (!all_finite(r.w)) throw NumericError("gdpm: non-finite weights");
      rec.inner_epochs += r.epochs;
      rec.inner_gap = r.gap;
      w = std::move(r.w);
    }
    if (value(w) > value(anchor)) return anchor;
    return w;
  }

  const GdpmPlan& plan() const { return plan_; }

 private:
  const std::vector<GdpmExample>* data_;
  GdpmPlan plan_;
  GdpmConfig cfg_;
};

class GdpmProblem {
 public:
  GdpmProblem(const std::vector<GdpmExample>& data, GdpmModel structure, GdpmConfig cfg)
      : data_(data), structure_(std::move(structure)), cfg_(std::move(cfg)) {}

  double objective(const Vector& w) const {
    return gdpm_objective(structure_.with_weights(w), data_, cfg_.train, cfg_.threads);
  }

  GdpmBound relabel(const Vector& anchor, int iteration) const {
    return GdpmBound(data_, GdpmPlan(structure_.with_weights(anchor), data_, iteration, cfg_.threads), cfg_);
  }

 private:
  const std::vector<GdpmExample>& data_;
  GdpmModel structure_;
  GdpmConfig cfg_;
};

inline std::pair<GdpmModel, TrainTrace> train_gdpm(const std::vector<GdpmExample>& data, const GdpmConfig& cfg,
                                                   const GdpmModel& init) {
  init.validate();
  if (cfg.threads < 1 || cfg.max_mining_rounds < 1 || cfg.cache_capacity == 0)
    throw MisuseError("train_gdpm: bad configuration");
  const bool any_pos = std::any_of(data.begin(), data.end(), [](const auto& e) { return e.label > 0; });
  const bool any_neg = std::any_of(data.begin(), data.end(), [](const auto& e) { return e.label < 0; });
  if (!any_pos || !any_neg) throw MisuseError("train_gdpm: need at least one positive and one background example");
  std::vector<std::string> warnings;
  for (const auto& ex : data)
    if (ex.label > 0 && ex.roots.empty())
      warnings.push_back("relabel: positive " + ex.id + " has no valid root placement; skipped");
  GdpmProblem problem(data, init, cfg);
  auto [w, trace] = train_with(problem, init.flatten(), cfg.train);
  trace.warnings.insert(trace.warnings.begin(), warnings.begin(), warnings.end());
  return {init.with_weights(w), std::move(trace)};
}

struct StagedConfig {
  int components = 1;
  int root_rows = 6;
  int root_cols = 6;
  int positive_parts = 0;
  int negative_parts = 0;
  PartDims part_dims;
  NegativeInit negative_init = NegativeInit::energy;
  PyramidConfig pyramid;
  double tau = 0.5;
  GdpmConfig root_stage;
  GdpmConfig part_stage;
};

struct StagedResult {
  GdpmModel root_model;
  GdpmModel model;
  TrainTrace root_trace;
  TrainTrace part_trace;  // empty when the model has no parts
};

/// Root-only training, then part initialization and training of the full
/// model on the same examples.
inline StagedResult train_gdpm_staged(const std::vector<AnnotatedImage>& images, const StagedConfig& cfg,
                                      const GdpmModel* donor = nullptr) {
  const GdpmModel shape = root_only_model(cfg.components, cfg.root_rows, cfg.root_cols);
  const auto data = make_examples(images, shape, cfg.pyramid, cfg.tau);
  StagedResult r;
  std::tie(r.root_model, r.root_trace) = train_gdpm(data, cfg.root_stage, shape);
  if (cfg.positive_parts == 0 && cfg.negative_parts == 0) {
    r.model = r.root_model;
    return r;
  }
  std::vector<std::string> warnings;
  const GdpmModel init = init_model(r.root_model, cfg.positive_parts, cfg.negative_parts, cfg.part_dims,
                                    cfg.negative_init, donor, &warnings);
  std::tie(r.model, r.part_trace) = train_gdpm(data, cfg.part_stage, init);
  r.part_trace.warnings.insert(r.part_trace.warnings.begin(), warnings.begin(), warnings.end());
  return r;
}

/// Training images for a donor model of the confuser class: images holding
/// confusers become positives boxed on them, every other image (targets
/// included) is a background.
inline std::vector<AnnotatedImage> donor_images(const std::vector<AnnotatedImage>& images) {
  std::vector<AnnotatedImage> out;
  for (const auto& im : images) {
    AnnotatedImage d = im;
    d.label = im.confusers.empty() ? -1 : 1;
    d.boxes = im.confusers;
    d.confusers.clear();
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace glvm
