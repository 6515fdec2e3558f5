#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "glvm/box.hpp"
#include "glvm/evalkit.hpp"
#include "glvm/latent.hpp"
#include "glvm/parallel.hpp"
#include "glvm/synth.hpp"
#include "glvm/trainer.hpp"

namespace glvm {

/// A training patch: descriptor plus its position relative to the object
/// centre (patch - centre, in hypothesis cells) and the image it came from.
struct Patch {
  Vector feature;
  double dx = 0.0;
  double dy = 0.0;
  int source = 0;
};

struct Vote {
  double dx = 0.0;
  double dy = 0.0;
  int source = 0;
  bool operator==(const Vote&) const = default;
};

struct CodebookEntry {
  Vector centroid;
  std::vector<Vote> votes;
  bool operator==(const CodebookEntry&) const = default;
};

struct Codebook {
  std::vector<CodebookEntry> entries;
  Polarity polarity = Polarity::positive;
  std::string source;  // "positives" or "hard_negatives"
  double match_threshold = 0.0;

  std::size_t size() const { return entries.size(); }
  std::size_t dim() const { return entries.empty() ? 0 : entries[0].centroid.size(); }
  bool operator==(const Codebook&) const = default;
};

namespace detail {

inline double squared_distance(const Vector& a, const Vector& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

inline int nearest(const std::vector<Vector>& centers, const Vector& x) {
  int arg = 0;
  double best = std::numeric_limits<double>::infinity();
  for (int c = 0; c < static_cast<int>(centers.size()); ++c) {
    const double d = squared_distance(centers[static_cast<std::size_t>(c)], x);
    if (d < best) {
      best = d;
      arg = c;
    }
  }
  return arg;
}

}  // namespace detail

/// k-means (k-means++ seeding, Lloyd iterations) over patch descriptors.
/// Every entry keeps its members' offsets as votes; the match threshold is
/// twice the median member-to-centroid distance.
inline Codebook build_codebook(const std::vector<Patch>& patches, int k, Polarity polarity, std::uint64_t seed = 0,
                               int max_iters = 100) {
  if (k < 1) throw MisuseError("build_codebook: k must be >= 1");
  if (static_cast<std::size_t>(k) > patches.size())
    throw MisuseError("build_codebook: k = " + std::to_string(k) + " exceeds patch count " +
                      std::to_string(patches.size()));
  const std::size_t dim = patches[0].feature.size();
  for (const auto& p : patches)
    if (p.feature.size() != dim || !all_finite(p.feature) || !std::isfinite(p.dx) || !std::isfinite(p.dy))
      throw MisuseError("build_codebook: patches must share a finite descriptor dimension");

  std::mt19937_64 rng(seed);
  auto unit = [&] { return static_cast<double>(rng() >> 11) * 0x1.0p-53; };
  std::vector<Vector> centers{patches[static_cast<std::size_t>(unit() * static_cast<double>(patches.size()))].feature};
  std::vector<double> d2(patches.size());
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      d2[i] = std::numeric_limits<double>::infinity();
      for (const auto& c : centers) d2[i] = std::min(d2[i], detail::squared_distance(c, patches[i].feature));
      total += d2[i];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double u = unit() * total;
      for (pick = 0; pick + 1 < patches.size(); ++pick) {
        u -= d2[pick];
        if (u < 0.0 && d2[pick] > 0.0) break;
      }
      while (d2[pick] == 0.0) --pick;  // rounding ran past the last candidate
    } else {
      // all remaining points coincide with a centre: take the next unused index
      pick = centers.size();
    }
    centers.push_back(patches[pick].feature);
  }

  std::vector<int> assign(patches.size(), -1);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    for (std::size_t i = 0; i < patches.size(); ++i) {
      const int a = detail::nearest(centers, patches[i].feature);
      changed = changed || a != assign[i];
      assign[i] = a;
    }
    if (!changed) break;
    std::vector<Vector> sums(centers.size(), Vector(dim, 0.0));
    std::vector<std::size_t> counts(centers.size(), 0);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      axpy(1.0, patches[i].feature, sums[static_cast<std::size_t>(assign[i])]);
      ++counts[static_cast<std::size_t>(assign[i])];
    }
    for (std::size_t c = 0; c < centers.size(); ++c)
      if (counts[c] > 0)
        for (std::size_t j = 0; j < dim; ++j) centers[c][j] = sums[c][j] / static_cast<double>(counts[c]);
  }

  Codebook cb;
  cb.polarity = polarity;
  cb.source = polarity == Polarity::positive ? "positives" : "hard_negatives";
  for (const auto& c : centers) cb.entries.push_back({c, {}});
  std::vector<double> radii;
  for (std::size_t i = 0; i < patches.size(); ++i) {
    auto& e = cb.entries[static_cast<std::size_t>(assign[i])];
    e.votes.push_back({patches[i].dx, patches[i].dy, patches[i].source});
    radii.push_back(std::sqrt(detail::squared_distance(e.centroid, patches[i].feature)));
  }
  std::sort(radii.begin(), radii.end());
  const std::size_t n = radii.size();
  const double median = n % 2 ? radii[n / 2] : 0.5 * (radii[n / 2 - 1] + radii[n / 2]);
  cb.match_threshold = 2.0 * median;
  // drop entries that ended up empty; they cannot vote
  std::erase_if(cb.entries, [](const CodebookEntry& e) { return e.votes.empty(); });
  return cb;
}

/// A query descriptor located at hypothesis-grid coordinates (x, y).
struct QueryFeature {
  Vector feature;
  double x = 0.0;
  double y = 0.0;
};

/// s(h | c_i) over a rows x cols hypothesis grid, plus optionally the
/// per-source split s(h | c_i, x_j) summing to it.
struct VoteTable {
  int rows = 0;
  int cols = 0;
  std::size_t entries = 0;
  std::vector<double> data;  // (r * cols + c) * entries + i
  int sources = 0;
  std::vector<double> by_source;  // ((r * cols + c) * entries + i) * sources + j

  VoteTable() = default;
  VoteTable(int r, int c, std::size_t e) : rows(r), cols(c), entries(e), data(static_cast<std::size_t>(r) * c * e, 0.0) {}

  double at(int r, int c, std::size_t i) const { return data[(static_cast<std::size_t>(r) * cols + c) * entries + i]; }
  /// Votes of hypothesis (r, c) as a vector over entries.
  Vector row(int r, int c) const {
    const auto* p = data.data() + (static_cast<std::size_t>(r) * cols + c) * entries;
    return Vector(p, p + entries);
  }
  bool operator==(const VoteTable&) const = default;
};

struct VoteConfig {
  double sigma = 1.0;  // Gaussian vote spread, in hypothesis cells
  int radius = 3;      // votes are truncated beyond this many cells
  bool keep_sources = false;
  int sources = 0;  // number of training images, needed with keep_sources
  bool operator==(const VoteConfig&) const = default;
};

namespace detail {

/// Summed Gaussian votes of one entry (optionally of one source only, or of
/// all sources but `exclude`) for a query whose position has fractional part
/// (fx, fy), as a dense patch of cells relative to the query's integer part.
struct VoteKernel {
  int r0 = 0;
  int c0 = 0;
  int rows = 0;
  int cols = 0;
  std::vector<double> v;
};

inline VoteKernel vote_kernel(const CodebookEntry& e, double fx, double fy, const VoteConfig& cfg, int source,
                              int exclude = -1) {
  auto skip = [&](const Vote& v) { return (source >= 0 && v.source != source) || v.source == exclude; };
  VoteKernel k;
  int r1 = std::numeric_limits<int>::min(), c1 = std::numeric_limits<int>::min();
  k.r0 = k.c0 = std::numeric_limits<int>::max();
  auto window = [&](const Vote& v, int& rlo, int& rhi, int& clo, int& chi) {
    const double hx = fx - v.dx, hy = fy - v.dy;
    rlo = static_cast<int>(std::ceil(hy - cfg.radius));
    rhi = static_cast<int>(std::floor(hy + cfg.radius));
    clo = static_cast<int>(std::ceil(hx - cfg.radius));
    chi = static_cast<int>(std::floor(hx + cfg.radius));
  };
  std::size_t kept = 0;
  for (const auto& v : e.votes) {
    if (skip(v)) continue;
    ++kept;
    int rlo, rhi, clo, chi;
    window(v, rlo, rhi, clo, chi);
    k.r0 = std::min(k.r0, rlo);
    k.c0 = std::min(k.c0, clo);
    r1 = std::max(r1, rhi);
    c1 = std::max(c1, chi);
  }
  if (r1 < k.r0 || c1 < k.c0) return {};
  k.rows = r1 - k.r0 + 1;
  k.cols = c1 - k.c0 + 1;
  k.v.assign(static_cast<std::size_t>(k.rows) * k.cols, 0.0);
  const double w = 1.0 / static_cast<double>(exclude >= 0 ? kept : e.votes.size());
  for (const auto& v : e.votes) {
    if (skip(v)) continue;
    const double hx = fx - v.dx, hy = fy - v.dy;
    int rlo, rhi, clo, chi;
    window(v, rlo, rhi, clo, chi);
    for (int r = rlo; r <= rhi; ++r)
      for (int c = clo; c <= chi; ++c) {
        const double d2 = (r - hy) * (r - hy) + (c - hx) * (c - hx);
        k.v[static_cast<std::size_t>(r - k.r0) * k.cols + (c - k.c0)] += w * std::exp(-d2 / (2.0 * cfg.sigma * cfg.sigma));
      }
  }
  return k;
}

}  // namespace detail

/// Each query feature is matched to every entry within the codebook's
/// threshold (weight 1 / #matches); each match casts the entry's votes,
/// weighted 1 / #votes, as Gaussians with peak 1 at (x - dx, y - dy),
/// truncated to cells within `radius` of that point along each axis.
/// Votes recorded from training image `exclude_source` are dropped and the
/// entry's remaining votes reweighted, giving leave-one-out tables.
inline VoteTable accumulate_votes(const Codebook& cb, const std::vector<QueryFeature>& query, int rows, int cols,
                                  const VoteConfig& cfg = {}, int exclude_source = -1) {
  if (rows <= 0 || cols <= 0) throw MisuseError("accumulate_votes: empty hypothesis grid");
  if (!(cfg.sigma > 0.0) || cfg.radius < 0) throw MisuseError("accumulate_votes: bad vote kernel");
  if (cfg.keep_sources && cfg.sources <= 0) throw MisuseError("accumulate_votes: keep_sources needs sources > 0");
  if (cfg.keep_sources && exclude_source >= 0)
    throw MisuseError("accumulate_votes: exclude_source cannot be combined with keep_sources");
  VoteTable t(rows, cols, cb.size());
  const int nsrc = cfg.keep_sources ? cfg.sources : 0;
  if (cfg.keep_sources) {
    t.sources = cfg.sources;
    t.by_source.assign(t.data.size() * static_cast<std::size_t>(nsrc), 0.0);
    for (const auto& e : cb.entries)
      for (const auto& v : e.votes)
        if (v.source < 0 || v.source >= nsrc) throw MisuseError("accumulate_votes: vote source out of range");
  }
  // kernels per fractional query offset: [entry] for totals, [entry * nsrc + j] per source
  std::map<std::pair<double, double>, std::vector<detail::VoteKernel>> kernels;
  auto kernels_for = [&](double fx, double fy) -> const std::vector<detail::VoteKernel>& {
    auto [it, fresh] = kernels.try_emplace({fx, fy});
    if (fresh) {
      for (const auto& e : cb.entries) {
        if (!cfg.keep_sources) it->second.push_back(detail::vote_kernel(e, fx, fy, cfg, -1, exclude_source));
        for (int j = 0; j < nsrc; ++j) it->second.push_back(detail::vote_kernel(e, fx, fy, cfg, j));
      }
    }
    return it->second;
  };
  auto add = [&](const detail::VoteKernel& k, int br, int bc, double scale, std::size_t i, int src) {
    for (int kr = 0; kr < k.rows; ++kr) {
      const int r = br + k.r0 + kr;
      if (r < 0 || r >= rows) continue;
      for (int kc = 0; kc < k.cols; ++kc) {
        const int c = bc + k.c0 + kc;
        if (c < 0 || c >= cols) continue;
        const double g = scale * k.v[static_cast<std::size_t>(kr) * k.cols + kc];
        const std::size_t idx = (static_cast<std::size_t>(r) * cols + c) * t.entries + i;
        t.data[idx] += g;
        if (src >= 0) t.by_source[idx * static_cast<std::size_t>(nsrc) + static_cast<std::size_t>(src)] += g;
      }
    }
  };
  const double thr2 = cb.match_threshold * cb.match_threshold;
  std::vector<std::size_t> matches;
  for (const auto& q : query) {
    if (q.feature.size() != cb.dim()) throw MisuseError("accumulate_votes: descriptor dimension mismatch");
    matches.clear();
    for (std::size_t i = 0; i < cb.size(); ++i)
      if (detail::squared_distance(cb.entries[i].centroid, q.feature) <= thr2) matches.push_back(i);
    if (matches.empty()) continue;
    const double bx = std::floor(q.x), by = std::floor(q.y);
    const auto& ks = kernels_for(q.x - bx, q.y - by);
    const double scale = 1.0 / static_cast<double>(matches.size());
    for (std::size_t i : matches) {
      if (!cfg.keep_sources) {
        add(ks[i], static_cast<int>(by), static_cast<int>(bx), scale, i, -1);
        continue;
      }
      for (int j = 0; j < nsrc; ++j)
        add(ks[i * static_cast<std::size_t>(nsrc) + static_cast<std::size_t>(j)], static_cast<int>(by),
            static_cast<int>(bx), scale, i, j);
    }
  }
  return t;
}

struct ScoreMap {
  int rows = 0;
  int cols = 0;
  std::vector<double> values;
  std::vector<int> group_pos;  // filled by latent scorers
  std::vector<int> group_neg;

  double at(int r, int c) const { return values[static_cast<std::size_t>(r) * cols + c]; }
  bool operator==(const ScoreMap&) const = default;
};

/// S(h) = sum_i s(h | c_i)
inline ScoreMap ht_score(const VoteTable& t) {
  ScoreMap m{t.rows, t.cols, std::vector<double>(static_cast<std::size_t>(t.rows) * t.cols, 0.0), {}, {}};
  for (std::size_t h = 0; h < m.values.size(); ++h) {
    double s = 0.0;
    for (std::size_t i = 0; i < t.entries; ++i) s += t.data[h * t.entries + i];
    m.values[h] = s;
  }
  return m;
}

/// S(h) = sum_i s(h | c_i+) - sum_i s(h | c_i-)
inline ScoreMap nht_score(const VoteTable& pos, const VoteTable& neg) {
  if (pos.rows != neg.rows || pos.cols != neg.cols) throw MisuseError("nht_score: hypothesis grids differ");
  ScoreMap m = ht_score(pos);
  const ScoreMap n = ht_score(neg);
  for (std::size_t h = 0; h < m.values.size(); ++h) m.values[h] -= n.values[h];
  return m;
}

/// Z+ blocks of |C+| weights followed by Z- blocks of |C-| weights.
struct LhtModel {
  int groups_pos = 1;
  int groups_neg = 0;
  std::size_t entries_pos = 0;
  std::size_t entries_neg = 0;
  Vector w;

  std::size_t dim() const { return groups_pos * entries_pos + groups_neg * entries_neg; }
  void validate() const {
    if (groups_pos < 1 || groups_neg < 0) throw MisuseError("LhtModel: need Z+ >= 1 and Z- >= 0");
    if (w.size() != dim()) throw MisuseError("LhtModel: weight vector has wrong dimension");
  }
  std::size_t neg_offset() const { return groups_pos * entries_pos; }
  bool operator==(const LhtModel&) const = default;
};

namespace detail {

/// max_z w_z . v over `groups` consecutive blocks starting at `offset`; first z wins ties.
inline std::pair<double, int> best_group(const Vector& w, std::size_t offset, int groups, const double* v,
                                         std::size_t width) {
  double best = -std::numeric_limits<double>::infinity();
  int arg = 0;
  for (int z = 0; z < groups; ++z) {
    const double* wz = w.data() + offset + static_cast<std::size_t>(z) * width;
    double s = 0.0;
    for (std::size_t i = 0; i < width; ++i) s += wz[i] * v[i];
    if (s > best) {
      best = s;
      arg = z;
    }
  }
  return {best, arg};
}

}  // namespace detail

/// S(h) = max_z w_z . s(h | .), using only the positive blocks.
inline ScoreMap lht_score(const LhtModel& m, const VoteTable& pos) {
  m.validate();
  if (pos.entries != m.entries_pos) throw MisuseError("lht_score: block width differs from codebook size");
  ScoreMap out{pos.rows, pos.cols, {}, {}, {}};
  const std::size_t n = static_cast<std::size_t>(pos.rows) * pos.cols;
  out.values.resize(n);
  out.group_pos.resize(n);
  for (std::size_t h = 0; h < n; ++h) {
    auto [s, z] = detail::best_group(m.w, 0, m.groups_pos, pos.data.data() + h * pos.entries, pos.entries);
    out.values[h] = s;
    out.group_pos[h] = z;
  }
  return out;
}

/// S(h) = max_{z+} w_{z+} . s+(h) - max_{z-} w_{z-} . s-(h); without negative
/// groups the second term is 0.
inline ScoreMap lnht_score(const LhtModel& m, const VoteTable& pos, const VoteTable& neg) {
  m.validate();
  if (pos.entries != m.entries_pos || (m.groups_neg > 0 && neg.entries != m.entries_neg))
    throw MisuseError("lnht_score: block width differs from codebook size");
  if (pos.rows != neg.rows || pos.cols != neg.cols) throw MisuseError("lnht_score: hypothesis grids differ");
  ScoreMap out = lht_score(m, pos);
  const std::size_t n = out.values.size();
  out.group_neg.assign(n, 0);
  if (m.groups_neg == 0) return out;
  for (std::size_t h = 0; h < n; ++h) {
    auto [s, z] = detail::best_group(m.w, m.neg_offset(), m.groups_neg, neg.data.data() + h * neg.entries, neg.entries);
    out.values[h] -= s;
    out.group_neg[h] = z;
  }
  return out;
}

/// Vote features of one hypothesis, the payload of the GLVM view.
struct HoughHypothesis {
  Vector pos;
  Vector neg;
};

/// GLVM view of an LNHT: one positive latent (the group z+) and, if Z- > 0,
/// one negative latent z-, each owning the concatenation of its groups'
/// blocks. phi places s+(h) in block z+ and -s-(h) in block z-.
inline FeatureOracle<HoughHypothesis> lnht_oracle(int groups_pos, int groups_neg, std::size_t entries_pos,
                                                  std::size_t entries_neg) {
  if (groups_pos < 1 || groups_neg < 0 || entries_pos == 0 || (groups_neg > 0 && entries_neg == 0))
    throw MisuseError("lnht_oracle: bad group or codebook sizes");
  LatentSpec spec;
  spec.add_positive(0, groups_pos);
  std::vector<std::size_t> sizes{groups_pos * entries_pos};
  if (groups_neg > 0) {
    spec.add_negative(0, groups_neg);
    sizes.push_back(groups_neg * entries_neg);
  }
  const std::size_t total = groups_pos * entries_pos + groups_neg * entries_neg;
  auto fn = [=](const HoughHypothesis& x, const LatentAssignment& z) {
    if (x.pos.size() != entries_pos || (groups_neg > 0 && x.neg.size() != entries_neg))
      throw MisuseError("lnht_oracle: vote vector has wrong length");
    Vector phi(total, 0.0);
    if (z.assigned(0)) std::copy(x.pos.begin(), x.pos.end(), phi.begin() + static_cast<std::ptrdiff_t>(z[0] * entries_pos));
    if (groups_neg > 0 && z.assigned(1)) {
      const std::size_t off = groups_pos * entries_pos + static_cast<std::size_t>(z[1]) * entries_neg;
      for (std::size_t i = 0; i < entries_neg; ++i) phi[off + i] = -x.neg[i];
    }
    return phi;
  };
  return FeatureOracle<HoughHypothesis>(std::move(spec), BlockLayout::contiguous(sizes), fn, true);
}

/// Score of one hypothesis under an LNHT, same arithmetic as lnht_score.
inline double lnht_value(const LhtModel& m, const HoughHypothesis& x) {
  m.validate();
  double s = detail::best_group(m.w, 0, m.groups_pos, x.pos.data(), m.entries_pos).first;
  if (m.groups_neg > 0) s -= detail::best_group(m.w, m.neg_offset(), m.groups_neg, x.neg.data(), m.entries_neg).first;
  return s;
}

/// Trains an LNHT with the generic trainer. Positive group blocks start at
/// the k-means centroids of the positive hypotheses' vote vectors (scaled to
/// unit norm) so the groups begin distinct; negative blocks start at zero.
inline std::pair<LhtModel, TrainTrace> train_lnht(const Dataset<HoughHypothesis>& data, int groups_pos, int groups_neg,
                                                  const TrainConfig& cfg) {
  if (data.empty()) throw MisuseError("train_lnht: empty dataset");
  LhtModel m;
  m.groups_pos = groups_pos;
  m.groups_neg = groups_neg;
  m.entries_pos = data[0].payload.pos.size();
  m.entries_neg = groups_neg > 0 ? data[0].payload.neg.size() : 0;
  const auto oracle = lnht_oracle(groups_pos, groups_neg, m.entries_pos, m.entries_neg);
  m.w.assign(m.dim(), 0.0);
  if (groups_pos > 1) {
    std::vector<Patch> pts;
    for (const auto& ex : data)
      if (ex.label > 0) pts.push_back({ex.payload.pos, 0.0, 0.0, 0});
    if (static_cast<int>(pts.size()) >= groups_pos) {
      const Codebook groups = build_codebook(pts, groups_pos, Polarity::positive, cfg.seed);
      for (std::size_t z = 0; z < groups.size(); ++z) {
        const double n = std::sqrt(squared_norm(groups.entries[z].centroid));
        for (std::size_t i = 0; i < m.entries_pos; ++i)
          m.w[z * m.entries_pos + i] = n > 0 ? groups.entries[z].centroid[i] / n : 0.0;
      }
    }
  }
  auto [model, trace] = train(data, oracle, Model(m.w, oracle.layout()), cfg);
  m.w = std::move(model.w);
  return {std::move(m), std::move(trace)};
}

/// Patch descriptors: every size x size window of cells, concatenated, at
/// hypothesis coordinates of its centre (cell units).
inline std::vector<QueryFeature> grid_patches(const FeatureGrid& g, int size = 2) {
  if (size < 1 || size > g.rows || size > g.cols) throw MisuseError("grid_patches: bad patch size");
  std::vector<QueryFeature> out;
  for (int r = 0; r + size <= g.rows; ++r)
    for (int c = 0; c + size <= g.cols; ++c) {
      QueryFeature q;
      for (int i = 0; i < size; ++i)
        for (int j = 0; j < size; ++j) {
          const double* cell = g.cell(r + i, c + j);
          q.feature.insert(q.feature.end(), cell, cell + g.channels);
        }
      q.x = c + 0.5 * size;
      q.y = r + 0.5 * size;
      out.push_back(std::move(q));
    }
  return out;
}

/// Greedy peak picking: repeatedly take the highest remaining hypothesis
/// (row-major first on ties) and suppress its (2 radius + 1)^2 neighbourhood.
inline std::vector<std::pair<int, int>> find_peaks(const ScoreMap& m, int count, int radius) {
  std::vector<char> dead(m.values.size(), 0);
  std::vector<std::pair<int, int>> out;
  for (int k = 0; k < count; ++k) {
    double best = -std::numeric_limits<double>::infinity();
    int arg = -1;
    for (int h = 0; h < static_cast<int>(m.values.size()); ++h)
      if (!dead[static_cast<std::size_t>(h)] && m.values[static_cast<std::size_t>(h)] > best) {
        best = m.values[static_cast<std::size_t>(h)];
        arg = h;
      }
    if (arg < 0) break;
    const int r = arg / m.cols, c = arg % m.cols;
    out.push_back({r, c});
    for (int i = std::max(0, r - radius); i <= std::min(m.rows - 1, r + radius); ++i)
      for (int j = std::max(0, c - radius); j <= std::min(m.cols - 1, c + radius); ++j)
        dead[static_cast<std::size_t>(i) * m.cols + j] = 1;
  }
  return out;
}

struct PeakDetection {
  int image = 0;
  int row = 0;
  int col = 0;
  double score = 0.0;
};

/// Greedy matching of peaks (descending score, earlier entries first on
/// ties) to object centres within `match_radius` cells, then the number of
/// false positives ranked above the point where the true positives first
/// reach `recall` of all centres. Empty when that recall is never reached.
inline std::optional<std::size_t> false_positives_at_recall(
    std::vector<PeakDetection> dets, const std::vector<std::vector<std::pair<double, double>>>& centres,
    double match_radius, double recall) {
  if (!(recall > 0.0 && recall <= 1.0)) throw MisuseError("false_positives_at_recall: recall must lie in (0, 1]");
  std::size_t total = 0;
  for (const auto& c : centres) total += c.size();
  if (total == 0) throw MisuseError("false_positives_at_recall: no objects");
  const auto needed = static_cast<std::size_t>(std::ceil(recall * static_cast<double>(total) - 1e-9));
  std::stable_sort(dets.begin(), dets.end(), [](const auto& a, const auto& b) { return a.score > b.score; });
  std::vector<std::vector<char>> taken(centres.size());
  for (std::size_t i = 0; i < centres.size(); ++i) taken[i].assign(centres[i].size(), 0);
  std::size_t tp = 0, fp = 0;
  for (const auto& d : dets) {
    if (d.image < 0 || static_cast<std::size_t>(d.image) >= centres.size())
      throw MisuseError("false_positives_at_recall: detection image out of range");
    const auto& cs = centres[static_cast<std::size_t>(d.image)];
    int arg = -1;
    double best = match_radius;
    for (std::size_t k = 0; k < cs.size(); ++k) {
      const double dist = std::hypot(d.col - cs[k].first, d.row - cs[k].second);
      if (!taken[static_cast<std::size_t>(d.image)][k] && dist <= best) {
        best = dist;
        arg = static_cast<int>(k);
      }
    }
    if (arg >= 0) {
      taken[static_cast<std::size_t>(d.image)][static_cast<std::size_t>(arg)] = 1;
      if (++tp >= needed) return fp;
    } else {
      ++fp;
    }
  }
  return std::nullopt;
}

struct HoughConfig {
  int cell = 4;
  int patch = 2;  // patch side in cells
  int codebook_pos = 40;
  int codebook_neg = 20;
  int groups_pos = 2;
  int groups_neg = 2;
  int peaks = 6;        // peaks kept per image
  int peak_radius = 3;  // suppression radius in cells
  double match_radius = 2.0;
  int hard_negative_peaks = 2;  // per background image, for the negative codebook
  VoteConfig votes;
  TrainConfig train;
  std::uint64_t seed = 0;
  bool operator==(const HoughConfig&) const = default;
};

/// Codebooks plus LNHT weights; the HT and NHT baselines use the codebooks alone.
struct HoughDetector {
  HoughConfig config;
  Codebook positive;
  Codebook negative;
  LhtModel lnht;
  double box_width = 0.0;  // mean training box size in pixels, for boxes around peaks
  double box_height = 0.0;
  bool operator==(const HoughDetector&) const = default;
};

struct HoughTables {
  VoteTable pos;
  VoteTable neg;
};

namespace detail {

inline std::pair<double, double> box_centre_cells(const Box& b, int cell) {
  return {0.5 * (b.x0 + b.x1) / cell, 0.5 * (b.y0 + b.y1) / cell};
}

/// Patches whose centre lies within half_w x half_h cells of (cx, cy).
inline void patches_around(const std::vector<QueryFeature>& q, double cx, double cy, double half_w, double half_h,
                           int source, std::vector<Patch>& out) {
  for (const auto& f : q)
    if (std::abs(f.x - cx) <= half_w && std::abs(f.y - cy) <= half_h)
      out.push_back({f.feature, f.x - cx, f.y - cy, source});
}

}  // namespace detail

/// Box of the detector's mean object size centred on hypothesis cell (row, col).
inline Box peak_box(const HoughDetector& d, int row, int col) {
  const double cx = col * d.config.cell, cy = row * d.config.cell;
  return {cx - 0.5 * d.box_width, cy - 0.5 * d.box_height, cx + 0.5 * d.box_width, cy + 0.5 * d.box_height};
}

inline HoughTables vote_image(const HoughDetector& d, const GrayImage& img) {
  const FeatureGrid g = extract_features(img, d.config.cell);
  const auto q = grid_patches(g, d.config.patch);
  return {accumulate_votes(d.positive, q, g.rows, g.cols, d.config.votes),
          accumulate_votes(d.negative, q, g.rows, g.cols, d.config.votes)};
}

enum class HoughScoring { ht, nht, lnht };

inline const char* to_string(HoughScoring s) {
  switch (s) {
    case HoughScoring::ht: return "ht";
    case HoughScoring::nht: return "nht";
    case HoughScoring::lnht: return "lnht";
  }
  return "?";
}

inline ScoreMap hough_score_map(const HoughDetector& d, const HoughTables& t, HoughScoring s) {
  switch (s) {
    case HoughScoring::ht: return ht_score(t.pos);
    case HoughScoring::nht: return nht_score(t.pos, t.neg);
    case HoughScoring::lnht: return lnht_score(d.lnht, t.pos, t.neg);
  }
  throw MisuseError("hough_score_map: unknown scoring");
}

/// Candidate hypotheses are the config's top HT peaks of the image (positive
/// evidence maxima), each scored under the chosen scoring.
inline std::vector<PeakDetection> hough_peaks(const HoughDetector& d, const GrayImage& img, HoughScoring s,
                                              int image_index = 0) {
  const HoughTables t = vote_image(d, img);
  const ScoreMap m = hough_score_map(d, t, s);
  std::vector<PeakDetection> out;
  for (const auto& [r, c] : find_peaks(ht_score(t.pos), d.config.peaks, d.config.peak_radius))
    out.push_back({image_index, r, c, m.at(r, c)});
  return out;
}

inline std::vector<ScoredBox> hough_detect(const HoughDetector& d, const GrayImage& img, const std::string& id,
                                           HoughScoring s) {
  std::vector<ScoredBox> out;
  for (const auto& p : hough_peaks(d, img, s)) out.push_back({id, peak_box(d, p.row, p.col), p.score});
  return out;
}

/// Object centres of an annotated image in hypothesis cells.
inline std::vector<std::pair<double, double>> object_centres(const AnnotatedImage& im, int cell) {
  std::vector<std::pair<double, double>> out;
  for (const auto& b : im.boxes) out.push_back(detail::box_centre_cells(b, cell));
  return out;
}

/// Positive codebook from patches inside target boxes; negative codebook
/// from patches around the strongest HT peaks on background images (hard
/// negatives); LNHT trained on hypotheses at object centres (+1) and at HT
/// peaks away from any object (-1), the same candidates hough_peaks ranks.
/// Training votes are leave-one-out so that an image never votes through its
/// own codebook contributions.
inline HoughDetector train_hough(const std::vector<AnnotatedImage>& images, const HoughConfig& cfg,
                                 TrainTrace* trace = nullptr) {
  HoughDetector d;
  d.config = cfg;
  std::vector<std::vector<QueryFeature>> queries;
  int rows = 0, cols = 0;
  for (const auto& im : images) {
    const FeatureGrid g = extract_features(im.image, cfg.cell);
    rows = g.rows;
    cols = g.cols;
    queries.push_back(grid_patches(g, cfg.patch));
  }
  double half_w = 0.0, half_h = 0.0;
  std::size_t boxes = 0;
  std::vector<Patch> pos_patches;
  for (std::size_t i = 0; i < images.size(); ++i)
    for (const auto& b : images[i].boxes) {
      const auto [cx, cy] = detail::box_centre_cells(b, cfg.cell);
      const double hw = 0.5 * b.width() / cfg.cell, hh = 0.5 * b.height() / cfg.cell;
      detail::patches_around(queries[i], cx, cy, hw, hh, static_cast<int>(i), pos_patches);
      half_w += hw;
      half_h += hh;
      ++boxes;
    }
  if (boxes == 0) throw MisuseError("train_hough: no annotated objects");
  half_w /= static_cast<double>(boxes);
  half_h /= static_cast<double>(boxes);
  d.box_width = 2.0 * half_w * cfg.cell;
  d.box_height = 2.0 * half_h * cfg.cell;
  d.positive = build_codebook(pos_patches, cfg.codebook_pos, Polarity::positive, cfg.seed);

  std::vector<VoteTable> pos_tables(images.size());
  for (std::size_t i = 0; i < images.size(); ++i)
    pos_tables[i] = accumulate_votes(d.positive, queries[i], rows, cols, cfg.votes, static_cast<int>(i));

  std::vector<Patch> neg_patches;
  for (std::size_t i = 0; i < images.size(); ++i) {
    if (images[i].label > 0) continue;
    for (const auto& [r, c] : find_peaks(ht_score(pos_tables[i]), cfg.hard_negative_peaks, cfg.peak_radius))
      detail::patches_around(queries[i], c, r, half_w, half_h, static_cast<int>(i), neg_patches);
  }
  if (static_cast<int>(neg_patches.size()) < cfg.codebook_neg)
    throw MisuseError("train_hough: too few hard-negative patches for the negative codebook");
  d.negative = build_codebook(neg_patches, cfg.codebook_neg, Polarity::negative, cfg.seed + 1);

  Dataset<HoughHypothesis> hyps;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const VoteTable neg = accumulate_votes(d.negative, queries[i], rows, cols, cfg.votes, static_cast<int>(i));
    const auto centres = object_centres(images[i], cfg.cell);
    for (std::size_t k = 0; k < centres.size(); ++k) {
      const int r = std::clamp(static_cast<int>(std::lround(centres[k].second)), 0, rows - 1);
      const int c = std::clamp(static_cast<int>(std::lround(centres[k].first)), 0, cols - 1);
      hyps.push_back({images[i].id + "@" + std::to_string(k), {pos_tables[i].row(r, c), neg.row(r, c)}, 1});
    }
    for (const auto& [r, c] : find_peaks(ht_score(pos_tables[i]), cfg.peaks, cfg.peak_radius)) {
      bool near = false;
      for (const auto& [cx, cy] : centres) near = near || std::hypot(c - cx, r - cy) <= cfg.match_radius;
      if (!near)
        hyps.push_back({images[i].id + "@" + std::to_string(r) + "," + std::to_string(c),
                        {pos_tables[i].row(r, c), neg.row(r, c)}, -1});
    }
  }
  auto [m, tr] = train_lnht(hyps, cfg.groups_pos, cfg.groups_neg, cfg.train);
  d.lnht = std::move(m);
  if (trace) *trace = std::move(tr);
  return d;
}

}  // namespace glvm
