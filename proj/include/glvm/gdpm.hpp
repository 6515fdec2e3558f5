#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>
#include <tuple>
#include <vector>

#include "glvm/box.hpp"
#include "glvm/latent.hpp"
#include "glvm/synth.hpp"

namespace glvm {

/// rows x cols x channels weights correlated with a window of a FeatureGrid.
struct Filter {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  Vector w;

  Filter() = default;
  Filter(int r, int c, int f) : rows(r), cols(c), channels(f), w(static_cast<std::size_t>(r) * c * f, 0.0) {
    if (r <= 0 || c <= 0 || f <= 0) throw MisuseError("Filter: dimensions must be positive");
  }
  std::size_t size() const { return w.size(); }
  double at(int r, int c, int f) const { return w[(static_cast<std::size_t>(r) * cols + c) * channels + f]; }
  double& at(int r, int c, int f) { return w[(static_cast<std::size_t>(r) * cols + c) * channels + f]; }

  /// Correlation with the window whose top-left cell is (r, c).
  double response(const FeatureGrid& g, int r, int c) const {
    double s = 0.0;
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const double* cell = g.cell(r + i, c + j);
        const double* fw = &w[(static_cast<std::size_t>(i) * cols + j) * channels];
        for (int f = 0; f < channels; ++f) s += fw[f] * cell[f];
      }
    return s;
  }

  /// out[k] += sign * window features, in the filter's weight order.
  void add_window(const FeatureGrid& g, int r, int c, double sign, double* out) const {
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) {
        const double* cell = g.cell(r + i, c + j);
        double* o = out + (static_cast<std::size_t>(i) * cols + j) * channels;
        for (int f = 0; f < channels; ++f) o[f] += sign * cell[f];
      }
  }
  bool operator==(const Filter&) const = default;
};

/// Appearance filter plus quadratic deformation cost d . (dx, dy, dx^2, dy^2),
/// anchored relative to the root at twice the root resolution.
struct PartFilter {
  Filter appearance;
  std::array<double, 4> deformation{0.0, 0.0, 0.02, 0.02};
  int anchor_row = 0;
  int anchor_col = 0;
  Polarity polarity = Polarity::positive;
  bool operator==(const PartFilter&) const = default;
};

inline double deformation_cost(const std::array<double, 4>& d, int dy, int dx) {
  return d[0] * dx + d[1] * dy + d[2] * dx * dx + d[3] * dy * dy;
}

struct MixtureComponent {
  Filter root;
  std::vector<PartFilter> positive;
  std::vector<PartFilter> negative;
  bool operator==(const MixtureComponent&) const = default;
};

struct GdpmModel {
  std::vector<MixtureComponent> components;
  int window = 4;  // parts move at most this many cells from their anchor

  int root_rows() const { return components.at(0).root.rows; }
  int root_cols() const { return components.at(0).root.cols; }
  int channels() const { return components.at(0).root.channels; }
  bool has_parts() const {
    for (const auto& c : components)
      if (!c.positive.empty() || !c.negative.empty()) return true;
    return false;
  }

  void validate() const {
    if (components.empty()) throw MisuseError("GdpmModel: no components");
    if (window < 0) throw MisuseError("GdpmModel: negative deformation window");
    for (const auto& c : components) {
      if (c.root.rows != root_rows() || c.root.cols != root_cols() || c.root.channels != channels())
        throw MisuseError("GdpmModel: components must share root dimensions");
      if (c.root.w.size() != c.root.size() || c.root.size() == 0) throw MisuseError("GdpmModel: malformed root filter");
      for (const auto* list : {&c.positive, &c.negative})
        for (const auto& p : *list) {
          const Polarity want = list == &c.positive ? Polarity::positive : Polarity::negative;
          if (p.polarity != want) throw MisuseError("GdpmModel: part polarity does not match its list");
          if (p.appearance.channels != channels() || p.appearance.size() == 0)
            throw MisuseError("GdpmModel: malformed part filter");
          if (p.anchor_row < 0 || p.anchor_col < 0 || p.anchor_row + p.appearance.rows > 2 * c.root.rows ||
              p.anchor_col + p.appearance.cols > 2 * c.root.cols)
            throw MisuseError("GdpmModel: part anchor outside the root footprint");
        }
    }
  }

  /// One block per filter: each component's root, then its positive parts,
  /// then its negative parts (appearance followed by 4 deformation weights).
  BlockLayout layout() const {
    std::vector<std::size_t> sizes;
    for (const auto& c : components) {
      sizes.push_back(c.root.size());
      for (const auto& p : c.positive) sizes.push_back(p.appearance.size() + 4);
      for (const auto& p : c.negative) sizes.push_back(p.appearance.size() + 4);
    }
    return BlockLayout::contiguous(sizes);
  }
  std::size_t dim() const { return layout().total_dim(); }

  Vector flatten() const {
    Vector out;
    for (const auto& c : components) {
      out.insert(out.end(), c.root.w.begin(), c.root.w.end());
      for (const auto* list : {&c.positive, &c.negative})
        for (const auto& p : *list) {
          out.insert(out.end(), p.appearance.w.begin(), p.appearance.w.end());
          out.insert(out.end(), p.deformation.begin(), p.deformation.end());
        }
    }
    return out;
  }

  /// Same structure, weights taken from a flat vector.
  GdpmModel with_weights(const Vector& w) const {
    if (w.size() != dim()) throw MisuseError("GdpmModel: flat vector has wrong dimension");
    GdpmModel m = *this;
    std::size_t k = 0;
    for (auto& c : m.components) {
      std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(k), c.root.size(), c.root.w.begin());
      k += c.root.size();
      for (auto* list : {&c.positive, &c.negative})
        for (auto& p : *list) {
          std::copy_n(w.begin() + static_cast<std::ptrdiff_t>(k), p.appearance.size(), p.appearance.w.begin());
          k += p.appearance.size();
          for (double& d : p.deformation) d = w[k++];
        }
    }
    return m;
  }

  /// Offset of component c's first block in the flat vector.
  std::size_t component_offset(int c) const {
    std::size_t k = 0;
    for (int i = 0; i < c; ++i) {
      const auto& comp = components[static_cast<std::size_t>(i)];
      k += comp.root.size();
      for (const auto& p : comp.positive) k += p.appearance.size() + 4;
      for (const auto& p : comp.negative) k += p.appearance.size() + 4;
    }
    return k;
  }

  bool operator==(const GdpmModel&) const = default;
};

/// Root-only model with zero weights.
inline GdpmModel root_only_model(int components, int rows, int cols, int channels = kFeatureChannels) {
  GdpmModel m;
  for (int i = 0; i < components; ++i) m.components.push_back({Filter(rows, cols, channels), {}, {}});
  m.validate();
  return m;
}

struct PyramidConfig {
  int cell = 4;
  int levels = 3;
  int part_offset = 2;  // parts live this many levels finer than the root, at twice its resolution
  bool operator==(const PyramidConfig&) const = default;
};

struct FeaturePyramid {
  std::vector<FeatureGrid> levels;  // levels[0] is the finest
  int cell = 4;
  int part_offset = 2;
  int image_height = 0;
  int image_width = 0;

  /// Levels that may hold a root: those with a part level below them.
  int first_root_level() const { return part_offset; }

  void validate() const {
    if (levels.empty()) throw MisuseError("FeaturePyramid: no levels");
    if (part_offset < 1) throw MisuseError("FeaturePyramid: part_offset must be >= 1");
    for (std::size_t l = 1; l < levels.size(); ++l)
      if (!(levels[l].scale < levels[l - 1].scale)) throw MisuseError("FeaturePyramid: scales must be strictly decreasing");
    for (std::size_t l = static_cast<std::size_t>(part_offset); l < levels.size(); ++l) {
      const auto& root = levels[l];
      const auto& part = levels[l - static_cast<std::size_t>(part_offset)];
      if (part.rows != 2 * root.rows || part.cols != 2 * root.cols)
        throw MisuseError("FeaturePyramid: part level must have exactly twice the root resolution");
    }
  }
};

/// Levels at image sizes of roughly H / sqrt(2)^l. Every level from the second
/// on is an exact halving of the level two steps finer, so parts see precisely
/// twice the root resolution.
inline FeaturePyramid build_pyramid(const GrayImage& img, const PyramidConfig& cfg = {}) {
  if (cfg.levels < 1 || cfg.cell <= 0) throw MisuseError("build_pyramid: bad configuration");
  FeaturePyramid p;
  p.cell = cfg.cell;
  p.part_offset = cfg.part_offset;
  p.image_height = img.height;
  p.image_width = img.width;
  std::vector<GrayImage> images{img};
  for (int l = 1; l < cfg.levels; ++l) {
    const GrayImage& src = l == 1 ? img : images[static_cast<std::size_t>(l - 2)];
    int h = src.height / 2, w = src.width / 2;
    if (l == 1) {
      h = static_cast<int>(std::lround(img.height / std::numbers::sqrt2 / (2 * cfg.cell))) * 2 * cfg.cell;
      w = static_cast<int>(std::lround(img.width / std::numbers::sqrt2 / (2 * cfg.cell))) * 2 * cfg.cell;
    }
    if (h < cfg.cell || w < cfg.cell || h % cfg.cell || w % cfg.cell)
      throw MisuseError("build_pyramid: image too small for " + std::to_string(cfg.levels) + " levels");
    GrayImage next = resize(src, h, w);
    images.push_back(std::move(next));
  }
  for (const auto& im : images) {
    FeatureGrid g = extract_features(im, cfg.cell);
    g.scale = static_cast<double>(im.height) / img.height;
    p.levels.push_back(std::move(g));
  }
  p.validate();
  return p;
}

struct Placement {
  int level = 0;
  int row = 0;
  int col = 0;
  auto operator<=>(const Placement&) const = default;
};

struct PartPlacement {
  int row = 0;
  int col = 0;
  auto operator<=>(const PartPlacement&) const = default;
};

struct Detection {
  Placement root;
  int component = 0;
  double score = 0.0;
  std::vector<PartPlacement> positive;
  std::vector<PartPlacement> negative;
  Box box;
};

/// All in-bounds root placements, in (level, row, col) order.
inline std::vector<Placement> all_roots(const GdpmModel& m, const FeaturePyramid& p) {
  std::vector<Placement> out;
  for (int l = p.first_root_level(); l < static_cast<int>(p.levels.size()); ++l) {
    const auto& g = p.levels[static_cast<std::size_t>(l)];
    for (int r = 0; r + m.root_rows() <= g.rows; ++r)
      for (int c = 0; c + m.root_cols() <= g.cols; ++c) out.push_back({l, r, c});
  }
  return out;
}

inline Box root_box(const GdpmModel& m, const FeaturePyramid& p, const Placement& pl) {
  const double s = p.cell / p.levels.at(static_cast<std::size_t>(pl.level)).scale;
  return {pl.col * s, pl.row * s, (pl.col + m.root_cols()) * s, (pl.row + m.root_rows()) * s};
}

/// Root placements whose box overlaps `box` with IoU >= tau.
inline std::vector<Placement> valid_roots(const GdpmModel& m, const FeaturePyramid& p, const Box& box, double tau) {
  if (!(tau > 0.0 && tau <= 1.0)) throw MisuseError("valid_roots: tau must lie in (0, 1]");
  std::vector<Placement> out;
  for (const auto& pl : all_roots(m, p))
    if (iou(root_box(m, p, pl), box) >= tau) out.push_back(pl);
  return out;
}

/// Filter responses of one model on one pyramid. Part responses are
/// precomputed over every valid position of each part level; best
/// placements within the deformation window are searched on demand.
class ImageScorer {
 public:
  struct PartBest {
    double value = 0.0;
    PartPlacement at;
  };

  ImageScorer(const GdpmModel& m, const FeaturePyramid& p) : m_(m), p_(p) {
    m.validate();
    for (const auto& g : p.levels)
      if (g.channels != m.channels()) throw MisuseError("ImageScorer: model and pyramid channel counts differ");
    const int nl = static_cast<int>(p.levels.size());
    maps_.resize(m.components.size());
    for (std::size_t c = 0; c < m.components.size(); ++c) {
      const auto& comp = m.components[c];
      for (const auto* list : {&comp.positive, &comp.negative}) {
        auto& dst = list == &comp.positive ? maps_[c].positive : maps_[c].negative;
        for (const auto& part : *list) {
          std::vector<Map> per_level(static_cast<std::size_t>(nl));
          for (int l = p.first_root_level(); l < nl; ++l) {
            const auto& g = p.levels[static_cast<std::size_t>(l - p.part_offset)];
            Map& map = per_level[static_cast<std::size_t>(l)];
            map.rows = g.rows - part.appearance.rows + 1;
            map.cols = g.cols - part.appearance.cols + 1;
            if (map.rows <= 0 || map.cols <= 0) continue;
            map.v.resize(static_cast<std::size_t>(map.rows) * map.cols);
            for (int r = 0; r < map.rows; ++r)
              for (int cc = 0; cc < map.cols; ++cc)
                map.v[static_cast<std::size_t>(r) * map.cols + cc] = part.appearance.response(g, r, cc);
          }
          dst.push_back(std::move(per_level));
        }
      }
    }
  }

  const GdpmModel& model() const { return m_; }
  const FeaturePyramid& pyramid() const { return p_; }

  double root(int c, const Placement& pl) const {
    return m_.components[static_cast<std::size_t>(c)].root.response(p_.levels[static_cast<std::size_t>(pl.level)],
                                                                     pl.row, pl.col);
  }

  /// Response minus deformation cost of a part placed at `at`.
  double part_at(int c, Polarity pol, int j, const Placement& pl, PartPlacement at) const {
    const PartFilter& part = part_of(c, pol, j);
    const Map& map = map_of(c, pol, j, pl.level);
    if (at.row < 0 || at.col < 0 || at.row >= map.rows || at.col >= map.cols)
      throw MisuseError("ImageScorer: part placement out of bounds");
    const int dy = at.row - (2 * pl.row + part.anchor_row), dx = at.col - (2 * pl.col + part.anchor_col);
    if (std::abs(dy) > m_.window || std::abs(dx) > m_.window)
      throw MisuseError("ImageScorer: part placement outside the deformation window");
    return map.v[static_cast<std::size_t>(at.row) * map.cols + at.col] - deformation_cost(part.deformation, dy, dx);
  }

  /// Highest-scoring placement in the window; ties go to the smallest (row, col).
  PartBest best(int c, Polarity pol, int j, const Placement& pl) const {
    const PartFilter& part = part_of(c, pol, j);
    const Map& map = map_of(c, pol, j, pl.level);
    const int ar = 2 * pl.row + part.anchor_row, ac = 2 * pl.col + part.anchor_col;
    PartBest b{-std::numeric_limits<double>::infinity(), {}};
    for (int r = std::max(0, ar - m_.window); r <= std::min(map.rows - 1, ar + m_.window); ++r)
      for (int cc = std::max(0, ac - m_.window); cc <= std::min(map.cols - 1, ac + m_.window); ++cc) {
        const double v = map.v[static_cast<std::size_t>(r) * map.cols + cc] -
                         deformation_cost(part.deformation, r - ar, cc - ac);
        if (v > b.value) b = {v, {r, cc}};
      }
    return b;
  }

  /// root + sum of best positive parts - sum of best negative parts.
  double score(int c, const Placement& pl, Detection* det = nullptr) const {
    const auto& comp = m_.components[static_cast<std::size_t>(c)];
    double s = root(c, pl);
    if (det) {
      det->positive.clear();
      det->negative.clear();
    }
    for (int j = 0; j < static_cast<int>(comp.positive.size()); ++j) {
      const PartBest b = best(c, Polarity::positive, j, pl);
      s += b.value;
      if (det) det->positive.push_back(b.at);
    }
    for (int j = 0; j < static_cast<int>(comp.negative.size()); ++j) {
      const PartBest b = best(c, Polarity::negative, j, pl);
      s -= b.value;
      if (det) det->negative.push_back(b.at);
    }
    return s;
  }

  /// Flat feature vector of a full assignment (zero outside component c):
  /// root window, then per positive part (window, -deformation features),
  /// per negative part the negation of the same.
  Vector features(int c, const Placement& pl, const std::vector<PartPlacement>& pos,
                  const std::vector<PartPlacement>& neg) const {
    const auto& comp = m_.components[static_cast<std::size_t>(c)];
    if (pos.size() != comp.positive.size() || neg.size() != comp.negative.size())
      throw MisuseError("ImageScorer: wrong number of part placements");
    Vector phi(m_.dim(), 0.0);
    std::size_t k = m_.component_offset(c);
    comp.root.add_window(p_.levels[static_cast<std::size_t>(pl.level)], pl.row, pl.col, 1.0, phi.data() + k);
    k += comp.root.size();
    const auto& g = p_.levels[static_cast<std::size_t>(pl.level - p_.part_offset)];
    auto put = [&](const PartFilter& part, PartPlacement at, double sign) {
      part.appearance.add_window(g, at.row, at.col, sign, phi.data() + k);
      k += part.appearance.size();
      const double dy = at.row - (2 * pl.row + part.anchor_row), dx = at.col - (2 * pl.col + part.anchor_col);
      phi[k++] = -sign * dx;
      phi[k++] = -sign * dy;
      phi[k++] = -sign * dx * dx;
      phi[k++] = -sign * dy * dy;
    };
    for (std::size_t j = 0; j < comp.positive.size(); ++j) put(comp.positive[j], pos[j], 1.0);
    for (std::size_t j = 0; j < comp.negative.size(); ++j) put(comp.negative[j], neg[j], -1.0);
    return phi;
  }

 private:
  struct Map {
    int rows = 0, cols = 0;
    std::vector<double> v;
  };
  struct ComponentMaps {
    std::vector<std::vector<Map>> positive, negative;  // [part][level]
  };

  const PartFilter& part_of(int c, Polarity pol, int j) const {
    const auto& comp = m_.components.at(static_cast<std::size_t>(c));
    return (pol == Polarity::positive ? comp.positive : comp.negative).at(static_cast<std::size_t>(j));
  }
  const Map& map_of(int c, Polarity pol, int j, int level) const {
    const auto& cm = maps_[static_cast<std::size_t>(c)];
    const Map& map = (pol == Polarity::positive ? cm.positive : cm.negative)[static_cast<std::size_t>(j)]
                                                                            [static_cast<std::size_t>(level)];
    if (map.rows <= 0) throw MisuseError("ImageScorer: part does not fit on its level");
    return map;
  }

  const GdpmModel& m_;
  const FeaturePyramid& p_;
  std::vector<ComponentMaps> maps_;
};

/// max over roots in R and components of the part-model score. The first
/// placement (in R's sorted order, then component order) wins ties.
inline std::pair<double, Detection> gdpm_score_at(const GdpmModel& m, const FeaturePyramid& p,
                                                  std::vector<Placement> roots) {
  if (roots.empty()) throw MisuseError("gdpm_score_at: empty root set");
  std::sort(roots.begin(), roots.end());
  ImageScorer sc(m, p);
  Detection best;
  best.score = -std::numeric_limits<double>::infinity();
  Detection cur;
  for (const auto& pl : roots) {
    const auto& g = p.levels.at(static_cast<std::size_t>(pl.level));
    if (pl.level < p.first_root_level() || pl.row < 0 || pl.col < 0 || pl.row + m.root_rows() > g.rows ||
        pl.col + m.root_cols() > g.cols)
      throw MisuseError("gdpm_score_at: root placement out of bounds");
    for (int c = 0; c < static_cast<int>(m.components.size()); ++c) {
      const double s = sc.score(c, pl, &cur);
      if (s > best.score) {
        best = cur;
        best.score = s;
        best.root = pl;
        best.component = c;
      }
    }
  }
  best.box = root_box(m, p, best.root);
  return {best.score, best};
}

/// Plain deformable-part-model score: root plus the best placement of every
/// part, computed directly from the feature windows. Rejects negative parts.
inline double dpm_score_at(const GdpmModel& m, const FeaturePyramid& p, const std::vector<Placement>& roots) {
  if (roots.empty()) throw MisuseError("dpm_score_at: empty root set");
  double best = -std::numeric_limits<double>::infinity();
  for (const auto& comp : m.components)
    if (!comp.negative.empty()) throw MisuseError("dpm_score_at: model has negative parts");
  for (const auto& pl : roots) {
    for (const auto& comp : m.components) {
      double s = comp.root.response(p.levels.at(static_cast<std::size_t>(pl.level)), pl.row, pl.col);
      const auto& g = p.levels.at(static_cast<std::size_t>(pl.level - p.part_offset));
      for (const auto& part : comp.positive) {
        double pb = -std::numeric_limits<double>::infinity();
        const int ar = 2 * pl.row + part.anchor_row, ac = 2 * pl.col + part.anchor_col;
        for (int dy = -m.window; dy <= m.window; ++dy)
          for (int dx = -m.window; dx <= m.window; ++dx) {
            const int r = ar + dy, c = ac + dx;
            if (r < 0 || c < 0 || r + part.appearance.rows > g.rows || c + part.appearance.cols > g.cols) continue;
            pb = std::max(pb, part.appearance.response(g, r, c) - deformation_cost(part.deformation, dy, dx));
          }
        s += pb;
      }
      best = std::max(best, s);
    }
  }
  return best;
}

/// Greedy non-maximum suppression: visit by descending score (earlier index
/// first on ties) and drop anything overlapping a kept box with IoU > nms_iou.
inline std::vector<Detection> non_maximum_suppression(std::vector<Detection> dets, double nms_iou) {
  std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) { return a.score > b.score; });
  std::vector<Detection> kept;
  for (auto& d : dets) {
    bool drop = false;
    for (const auto& k : kept)
      if (iou(d.box, k.box) > nms_iou) {
        drop = true;
        break;
      }
    if (!drop) kept.push_back(std::move(d));
  }
  return kept;
}

/// Scores every root placement (best component each) and applies NMS.
inline std::vector<Detection> detect(const GdpmModel& m, const FeaturePyramid& p, double nms_iou = 0.5) {
  const auto roots = all_roots(m, p);
  if (roots.empty()) throw MisuseError("detect: image smaller than the root filter");
  ImageScorer sc(m, p);
  std::vector<Detection> dets;
  Detection cur;
  for (const auto& pl : roots) {
    Detection best;
    best.score = -std::numeric_limits<double>::infinity();
    for (int c = 0; c < static_cast<int>(m.components.size()); ++c) {
      const double s = sc.score(c, pl, &cur);
      if (s > best.score) {
        best = cur;
        best.score = s;
        best.component = c;
      }
    }
    best.root = pl;
    best.box = root_box(m, p, pl);
    dets.push_back(std::move(best));
  }
  return non_maximum_suppression(std::move(dets), nms_iou);
}

inline std::vector<Detection> detect(const GdpmModel& m, const GrayImage& img, const PyramidConfig& cfg,
                                     double nms_iou = 0.5) {
  if (img.height < m.root_rows() * cfg.cell || img.width < m.root_cols() * cfg.cell)
    throw MisuseError("detect: image smaller than the root filter");
  return detect(m, build_pyramid(img, cfg), nms_iou);
}

enum class NegativeInit { energy, donor };

/// Part size in root cells; the part filter itself is twice as large.
struct PartDims {
  int rows = 2;
  int cols = 2;
};

struct EnergyRegion {
  int row = 0;
  int col = 0;
  double energy = 0.0;
};

namespace detail {

/// Greedy best-energy regions: pick the region with the largest summed
/// energy among those disjoint from earlier picks (any region once none is
/// left), zero it, repeat.
inline std::vector<EnergyRegion> greedy_regions(std::vector<double> energy, int rows, int cols, PartDims d, int count) {
  std::vector<EnergyRegion> out;
  std::vector<char> taken(energy.size(), 0);
  for (int k = 0; k < count; ++k) {
    EnergyRegion best{-1, -1, -1.0};
    for (int pass = 0; pass < 2 && best.row < 0; ++pass)
      for (int r = 0; r + d.rows <= rows; ++r)
        for (int c = 0; c + d.cols <= cols; ++c) {
          double e = 0.0;
          bool overlap = false;
          for (int i = 0; i < d.rows; ++i)
            for (int j = 0; j < d.cols; ++j) {
              const std::size_t idx = static_cast<std::size_t>(r + i) * cols + (c + j);
              e += energy[idx];
              overlap = overlap || taken[idx];
            }
          if (pass == 0 && overlap) continue;
          if (e > best.energy) best = {r, c, e};
        }
    for (int i = 0; i < d.rows; ++i)
      for (int j = 0; j < d.cols; ++j) {
        const std::size_t idx = static_cast<std::size_t>(best.row + i) * cols + (best.col + j);
        energy[idx] = 0.0;
        taken[idx] = 1;
      }
    out.push_back(best);
  }
  return out;
}

inline std::vector<double> cell_energy(const Filter& root, bool positive) {
  std::vector<double> e(static_cast<std::size_t>(root.rows) * root.cols, 0.0);
  for (int r = 0; r < root.rows; ++r)
    for (int c = 0; c < root.cols; ++c)
      for (int f = 0; f < root.channels; ++f) {
        const double v = root.at(r, c, f);
        if (positive ? v > 0 : v < 0) e[static_cast<std::size_t>(r) * root.cols + c] += v * v;
      }
  return e;
}

/// Part filter from a root region at twice the resolution (each root cell
/// copied to a 2x2 block), with `transform` applied to every weight.
template <class Fn>
PartFilter part_from_region(const Filter& root, const EnergyRegion& reg, PartDims d, Polarity pol, Fn transform) {
  PartFilter p;
  p.appearance = Filter(2 * d.rows, 2 * d.cols, root.channels);
  for (int r = 0; r < 2 * d.rows; ++r)
    for (int c = 0; c < 2 * d.cols; ++c)
      for (int f = 0; f < root.channels; ++f)
        p.appearance.at(r, c, f) = transform(root.at(reg.row + r / 2, reg.col + c / 2, f));
  p.anchor_row = 2 * reg.row;
  p.anchor_col = 2 * reg.col;
  p.polarity = pol;
  return p;
}

}  // namespace detail

/// Energy regions the initializer would pick, exposed for inspection.
inline std::vector<EnergyRegion> energy_regions(const Filter& root, PartDims d, int count, bool positive) {
  if (d.rows <= 0 || d.cols <= 0 || d.rows > root.rows || d.cols > root.cols)
    throw MisuseError("energy_regions: part dims do not fit in the root");
  return detail::greedy_regions(detail::cell_energy(root, positive), root.rows, root.cols, d, count);
}

/// Adds n positive and m negative parts to every component of a root-only
/// model. Positive parts copy the root region of maximal positive energy;
/// negative parts hold the negated negative weights of the region of maximal
/// negative energy (energy mode) or copies of donor positive parts (donor
/// mode, ranked by the target root's negative energy under their footprint).
inline GdpmModel init_model(const GdpmModel& root_model, int n, int m, PartDims dims, NegativeInit mode,
                            const GdpmModel* donor = nullptr, std::vector<std::string>* warnings = nullptr) {
  root_model.validate();
  if (n < 0 || m < 0) throw MisuseError("init_model: negative part count");
  if (dims.rows <= 0 || dims.cols <= 0 || dims.rows > root_model.root_rows() || dims.cols > root_model.root_cols())
    throw MisuseError("init_model: part dims do not fit in the root");
  if (mode == NegativeInit::donor && m > 0) {
    if (!donor) throw MisuseError("init_model: donor mode needs a donor model");
    donor->validate();
    if (donor->root_rows() != root_model.root_rows() || donor->root_cols() != root_model.root_cols())
      throw MisuseError("init_model: donor root dimensions differ from the target's");
  }
  GdpmModel out = root_model;
  for (std::size_t ci = 0; ci < out.components.size(); ++ci) {
    auto& comp = out.components[ci];
    comp.positive.clear();
    comp.negative.clear();
    const Filter& root = comp.root;
    for (const auto& reg : energy_regions(root, dims, n, true))
      comp.positive.push_back(detail::part_from_region(root, reg, dims, Polarity::positive, [](double v) { return v; }));
    if (m == 0) continue;
    const auto neg_energy = detail::cell_energy(root, false);
    if (mode == NegativeInit::energy) {
      const bool none = std::all_of(neg_energy.begin(), neg_energy.end(), [](double e) { return e == 0.0; });
      if (none && warnings)
        warnings->push_back("init_model: component " + std::to_string(ci) +
                            " root has no negative weights; negative parts start at zero");
      for (const auto& reg : energy_regions(root, dims, m, false))
        comp.negative.push_back(detail::part_from_region(root, reg, dims, Polarity::negative,
                                                         [none](double v) { return none ? 0.0 : std::max(-v, 0.0); }));
    } else {
      const auto& dcomp = donor->components[ci % donor->components.size()];
      if (static_cast<int>(dcomp.positive.size()) < m)
        throw MisuseError("init_model: donor has fewer positive parts than requested negative parts");
      std::vector<std::pair<double, int>> ranked;
      for (int j = 0; j < static_cast<int>(dcomp.positive.size()); ++j) {
        const auto& p = dcomp.positive[static_cast<std::size_t>(j)];
        double e = 0.0;
        for (int r = p.anchor_row / 2; r < std::min(root.rows, (p.anchor_row + p.appearance.rows + 1) / 2); ++r)
          for (int c = p.anchor_col / 2; c < std::min(root.cols, (p.anchor_col + p.appearance.cols + 1) / 2); ++c)
            e += neg_energy[static_cast<std::size_t>(r) * root.cols + c];
        ranked.push_back({-e, j});
      }
      std::sort(ranked.begin(), ranked.end());
      for (int k = 0; k < m; ++k) {
        PartFilter p = dcomp.positive[static_cast<std::size_t>(ranked[static_cast<std::size_t>(k)].second)];
        p.polarity = Polarity::negative;
        comp.negative.push_back(std::move(p));
      }
    }
  }
  out.validate();
  return out;
}

}  // namespace glvm
