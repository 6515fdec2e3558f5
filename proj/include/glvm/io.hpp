#pragma once

#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

#include "glvm/andor.hpp"
#include "glvm/evalkit.hpp"
#include "glvm/gdpm.hpp"
#include "glvm/hough.hpp"
#include "glvm/synth.hpp"

namespace glvm {

using Json = nlohmann::json;

inline constexpr int kModelVersion = 1;
inline constexpr int kManifestVersion = 1;

// Content errors are MisuseError, filesystem errors IoError.

namespace io_detail {

inline Json read_json(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open '" + path + "'");
  try {
    return Json::parse(is);
  } catch (const Json::parse_error& e) {
    throw MisuseError("'" + path + "': " + e.what());
  }
}

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << text;
  if (!os) throw IoError("failed writing '" + path + "'");
}

/// Typed field access with messages naming the field.
class Reader {
 public:
  Reader(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
    if (!j_.is_object()) fail("expected an object");
  }

  bool has(const char* key) const { return j_.contains(key); }
  const Json& raw(const char* key) const {
    if (!j_.contains(key)) fail(std::string("missing field '") + key + "'");
    return j_.at(key);
  }
  Reader object(const char* key) const { return Reader(raw(key), where_ + "." + key); }

  template <class T>
  T get(const char* key) const {
    const Json& v = raw(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) fail(std::string("field '") + key + "': expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) fail(std::string("field '") + key + "': expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.get<long long>() < 0) fail(std::string("field '") + key + "': expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) fail(std::string("field '") + key + "': expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) fail(std::string("field '") + key + "': expected a string");
    }
    return v.get<T>();
  }
  template <class T>
  void maybe(const char* key, T& out) const {
    if (has(key)) out = get<T>(key);
  }

  /// Rejects keys outside `known`.
  void only(std::initializer_list<const char*> known) const {
    std::set<std::string> k(known.begin(), known.end());
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!k.contains(it.key())) fail("unknown field '" + it.key() + "'");
  }

  [[noreturn]] void fail(const std::string& msg) const { throw MisuseError(where_ + ": " + msg); }
  const std::string& where() const { return where_; }
  const Json& json() const { return j_; }

 private:
  const Json& j_;
  std::string where_;
};

inline Vector numbers(const Json& v, const std::string& where) {
  if (!v.is_array()) throw MisuseError(where + ": expected an array of numbers");
  Vector out;
  out.reserve(v.size());
  for (const auto& x : v) {
    if (!x.is_number()) throw MisuseError(where + ": expected an array of numbers");
    out.push_back(x.get<double>());
  }
  return out;
}

inline Json finite_array(const Vector& w, const char* what) {
  for (double x : w)
    if (!std::isfinite(x)) throw NumericError(std::string(what) + ": non-finite value cannot be saved");
  return Json(w);
}

inline Json box_json(const Box& b) { return Json::array({b.x0, b.y0, b.x1, b.y1}); }

inline Box box_from(const Json& v, const std::string& where) {
  const Vector x = numbers(v, where);
  if (x.size() != 4) throw MisuseError(where + ": a box is [x0, y0, x1, y1]");
  return {x[0], x[1], x[2], x[3]};
}

inline Json layout_json(const BlockLayout& l) {
  Json a = Json::array();
  for (const auto& b : l.blocks()) a.push_back({{"var", b.var}, {"offset", b.offset}, {"size", b.size}});
  return a;
}

inline BlockLayout layout_from(const Json& v, const std::string& where) {
  if (!v.is_array()) throw MisuseError(where + ": expected an array of blocks");
  std::vector<Block> blocks;
  for (std::size_t i = 0; i < v.size(); ++i) {
    Reader r(v[i], where + "[" + std::to_string(i) + "]");
    blocks.push_back({r.get<int>("var"), r.get<std::size_t>("offset"), r.get<std::size_t>("size")});
  }
  try {
    return BlockLayout(std::move(blocks));
  } catch (const MisuseError& e) {
    throw MisuseError(where + ": " + e.what());
  }
}

}  // namespace io_detail

// ---- configs ----

inline Json to_json(const SynthConfig& c) {
  return {{"seed", c.seed},
          {"height", c.height},
          {"width", c.width},
          {"cell", c.cell},
          {"positives", c.positives},
          {"backgrounds", c.backgrounds},
          {"arm", c.arm},
          {"thickness", c.thickness},
          {"cap_length", c.cap_length},
          {"cap_jitter", c.cap_jitter},
          {"confuser_rate", c.confuser_rate},
          {"max_clutter", c.max_clutter},
          {"noise", c.noise},
          {"position_jitter", c.position_jitter},
          {"rotation_jitter", c.rotation_jitter},
          {"scale_min", c.scale_min},
          {"scale_max", c.scale_max},
          {"background_level", c.background_level},
          {"foreground_level", c.foreground_level}};
}

/// Fields may be omitted (defaults apply); unknown fields are rejected.
inline SynthConfig synth_config_from(const Json& j, const std::string& where = "synth config") {
  io_detail::Reader r(j, where);
  r.only({"seed", "height", "width", "cell", "positives", "backgrounds", "arm", "thickness", "cap_length", "cap_jitter",
          "confuser_rate", "max_clutter", "noise", "position_jitter", "rotation_jitter", "scale_min", "scale_max",
          "background_level", "foreground_level"});
  SynthConfig c;
  r.maybe("seed", c.seed);
  r.maybe("height", c.height);
  r.maybe("width", c.width);
  r.maybe("cell", c.cell);
  r.maybe("positives", c.positives);
  r.maybe("backgrounds", c.backgrounds);
  r.maybe("arm", c.arm);
  r.maybe("thickness", c.thickness);
  r.maybe("cap_length", c.cap_length);
  r.maybe("cap_jitter", c.cap_jitter);
  r.maybe("confuser_rate", c.confuser_rate);
  r.maybe("max_clutter", c.max_clutter);
  r.maybe("noise", c.noise);
  r.maybe("position_jitter", c.position_jitter);
  r.maybe("rotation_jitter", c.rotation_jitter);
  r.maybe("scale_min", c.scale_min);
  r.maybe("scale_max", c.scale_max);
  r.maybe("background_level", c.background_level);
  r.maybe("foreground_level", c.foreground_level);
  try {
    c.validate();
  } catch (const MisuseError& e) {
    throw MisuseError(where + ": " + e.what());
  }
  return c;
}

inline Json to_json(const TrainConfig& c) {
  return {{"C", c.C},
          {"margin", c.margin},
          {"max_outer_iters", c.max_outer_iters},
          {"min_outer_iters", c.min_outer_iters},
          {"outer_tol", c.outer_tol},
          {"seed", c.seed},
          {"inference_budget", c.inference.budget},
          {"inner",
           {{"solver", c.inner.solver == InnerSolver::dual_coordinate ? "dual_coordinate" : "subgradient"},
            {"max_epochs", c.inner.max_epochs},
            {"tol", c.inner.tol},
            {"cache_passes", c.inner.cache_passes},
            {"eta0", c.inner.eta0},
            {"lambda", c.inner.lambda}}}};
}

inline TrainConfig train_config_from(const Json& j, const std::string& where) {
  io_detail::Reader r(j, where);
  TrainConfig c;
  r.maybe("C", c.C);
  r.maybe("margin", c.margin);
  r.maybe("max_outer_iters", c.max_outer_iters);
  r.maybe("min_outer_iters", c.min_outer_iters);
  r.maybe("outer_tol", c.outer_tol);
  r.maybe("seed", c.seed);
  r.maybe("inference_budget", c.inference.budget);
  if (r.has("inner")) {
    const auto in = r.object("inner");
    if (in.has("solver")) {
      const auto s = in.get<std::string>("solver");
      if (s == "dual_coordinate") c.inner.solver = InnerSolver::dual_coordinate;
      else if (s == "subgradient") c.inner.solver = InnerSolver::subgradient;
      else in.fail("unknown solver '" + s + "'");
    }
    in.maybe("max_epochs", c.inner.max_epochs);
    in.maybe("tol", c.inner.tol);
    in.maybe("cache_passes", c.inner.cache_passes);
    in.maybe("eta0", c.inner.eta0);
    in.maybe("lambda", c.inner.lambda);
  }
  return c;
}

// ---- models ----

/// A GDPM with the pyramid it was trained on.
struct GdpmBundle {
  GdpmModel model;
  PyramidConfig pyramid;
  bool operator==(const GdpmBundle&) const = default;
};

using AnyModel = std::variant<GdpmBundle, HoughDetector, AndOrTree>;

inline const char* family_name(const AnyModel& m) {
  switch (m.index()) {
    case 0: return "gdpm";
    case 1: return "hough";
    default: return "andor";
  }
}

namespace io_detail {

inline Json model_document(const char* family, const BlockLayout& layout, const Vector& w, Json structure) {
  return {{"format", "glvm-model"},   {"version", kModelVersion},
          {"family", family},         {"layout", layout_json(layout)},
          {"weights", finite_array(w, "model weights")}, {"structure", std::move(structure)}};
}

inline Json part_json(const PartFilter& p) {
  return {{"rows", p.appearance.rows}, {"cols", p.appearance.cols}, {"anchor_row", p.anchor_row},
          {"anchor_col", p.anchor_col}};
}

inline Json gdpm_json(const GdpmBundle& b) {
  const auto& m = b.model;
  m.validate();
  Json comps = Json::array();
  for (const auto& c : m.components) {
    Json pos = Json::array(), neg = Json::array();
    for (const auto& p : c.positive) pos.push_back(part_json(p));
    for (const auto& p : c.negative) neg.push_back(part_json(p));
    comps.push_back({{"root", {{"rows", c.root.rows}, {"cols", c.root.cols}, {"channels", c.root.channels}}},
                     {"positive", pos},
                     {"negative", neg}});
  }
  Json s = {{"window", m.window},
            {"pyramid", {{"cell", b.pyramid.cell}, {"levels", b.pyramid.levels}, {"part_offset", b.pyramid.part_offset}}},
            {"components", comps}};
  return model_document("gdpm", m.layout(), m.flatten(), std::move(s));
}

inline GdpmBundle gdpm_from(const Reader& s, const Vector& w) {
  GdpmBundle b;
  s.maybe("window", b.model.window);
  const auto py = s.object("pyramid");
  b.pyramid = {py.get<int>("cell"), py.get<int>("levels"), py.get<int>("part_offset")};
  const Json& comps = s.raw("components");
  if (!comps.is_array()) s.fail("field 'components': expected an array");
  for (std::size_t ci = 0; ci < comps.size(); ++ci) {
    const Reader c(comps[ci], s.where() + ".components[" + std::to_string(ci) + "]");
    const auto root = c.object("root");
    MixtureComponent mc;
    mc.root = Filter(root.get<int>("rows"), root.get<int>("cols"), root.get<int>("channels"));
    for (auto [key, pol] : {std::pair{"positive", Polarity::positive}, std::pair{"negative", Polarity::negative}}) {
      const Json& parts = c.raw(key);
      if (!parts.is_array()) c.fail(std::string("field '") + key + "': expected an array");
      for (std::size_t j = 0; j < parts.size(); ++j) {
        const Reader p(parts[j], c.where() + "." + key + "[" + std::to_string(j) + "]");
        PartFilter pf;
        pf.appearance = Filter(p.get<int>("rows"), p.get<int>("cols"), mc.root.channels);
        pf.anchor_row = p.get<int>("anchor_row");
        pf.anchor_col = p.get<int>("anchor_col");
        pf.polarity = pol;
        (pol == Polarity::positive ? mc.positive : mc.negative).push_back(std::move(pf));
      }
    }
    b.model.components.push_back(std::move(mc));
  }
  if (w.size() != b.model.dim()) s.fail("weight count " + std::to_string(w.size()) + " does not match the structure");
  b.model = b.model.with_weights(w);
  b.model.validate();
  return b;
}

inline Json codebook_json(const Codebook& cb) {
  Json entries = Json::array();
  for (const auto& e : cb.entries) {
    Json votes = Json::array();
    for (const auto& v : e.votes) votes.push_back(Json::array({v.dx, v.dy, v.source}));
    entries.push_back({{"centroid", finite_array(e.centroid, "codebook centroid")}, {"votes", votes}});
  }
  return {{"polarity", to_string(cb.polarity)},
          {"source", cb.source},
          {"match_threshold", cb.match_threshold},
          {"entries", entries}};
}

inline Codebook codebook_from(const Reader& r) {
  Codebook cb;
  const auto pol = r.get<std::string>("polarity");
  if (pol == "positive") cb.polarity = Polarity::positive;
  else if (pol == "negative") cb.polarity = Polarity::negative;
  else r.fail("unknown polarity '" + pol + "'");
  cb.source = r.get<std::string>("source");
  cb.match_threshold = r.get<double>("match_threshold");
  const Json& entries = r.raw("entries");
  if (!entries.is_array()) r.fail("field 'entries': expected an array");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const Reader e(entries[i], r.where() + ".entries[" + std::to_string(i) + "]");
    CodebookEntry ce;
    ce.centroid = numbers(e.raw("centroid"), e.where() + ".centroid");
    const Json& votes = e.raw("votes");
    if (!votes.is_array()) e.fail("field 'votes': expected an array");
    for (const auto& v : votes) {
      if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number_integer())
        e.fail("a vote is [dx, dy, source]");
      ce.votes.push_back({v[0].get<double>(), v[1].get<double>(), v[2].get<int>()});
    }
    if (!cb.entries.empty() && ce.centroid.size() != cb.dim()) e.fail("centroid dimension differs from entry 0");
    cb.entries.push_back(std::move(ce));
  }
  return cb;
}

inline Json hough_json(const HoughDetector& d) {
  const auto& c = d.config;
  d.lnht.validate();
  Json cfg = {{"cell", c.cell},
              {"patch", c.patch},
              {"codebook_pos", c.codebook_pos},
              {"codebook_neg", c.codebook_neg},
              {"groups_pos", c.groups_pos},
              {"groups_neg", c.groups_neg},
              {"peaks", c.peaks},
              {"peak_radius", c.peak_radius},
              {"match_radius", c.match_radius},
              {"hard_negative_peaks", c.hard_negative_peaks},
              {"votes",
               {{"sigma", c.votes.sigma},
                {"radius", c.votes.radius},
                {"keep_sources", c.votes.keep_sources},
                {"sources", c.votes.sources}}},
              {"train", to_json(c.train)},
              {"seed", c.seed}};
  Json s = {{"config", cfg},
            {"positive", codebook_json(d.positive)},
            {"negative", codebook_json(d.negative)},
            {"lnht",
             {{"groups_pos", d.lnht.groups_pos},
              {"groups_neg", d.lnht.groups_neg},
              {"entries_pos", d.lnht.entries_pos},
              {"entries_neg", d.lnht.entries_neg}}},
            {"box_width", d.box_width},
            {"box_height", d.box_height}};
  const auto layout = lnht_oracle(d.lnht.groups_pos, d.lnht.groups_neg, d.lnht.entries_pos, d.lnht.entries_neg).layout();
  return model_document("hough", layout, d.lnht.w, std::move(s));
}

inline HoughDetector hough_from(const Reader& s, const Vector& w) {
  HoughDetector d;
  const auto c = s.object("config");
  auto& hc = d.config;
  hc.cell = c.get<int>("cell");
  hc.patch = c.get<int>("patch");
  hc.codebook_pos = c.get<int>("codebook_pos");
  hc.codebook_neg = c.get<int>("codebook_neg");
  hc.groups_pos = c.get<int>("groups_pos");
  hc.groups_neg = c.get<int>("groups_neg");
  hc.peaks = c.get<int>("peaks");
  hc.peak_radius = c.get<int>("peak_radius");
  hc.match_radius = c.get<double>("match_radius");
  hc.hard_negative_peaks = c.get<int>("hard_negative_peaks");
  const auto v = c.object("votes");
  hc.votes = {v.get<double>("sigma"), v.get<int>("radius"), v.get<bool>("keep_sources"), v.get<int>("sources")};
  hc.train = train_config_from(c.raw("train"), c.where() + ".train");
  hc.seed = c.get<std::uint64_t>("seed");
  d.positive = codebook_from(s.object("positive"));
  d.negative = codebook_from(s.object("negative"));
  const auto l = s.object("lnht");
  d.lnht.groups_pos = l.get<int>("groups_pos");
  d.lnht.groups_neg = l.get<int>("groups_neg");
  d.lnht.entries_pos = l.get<std::size_t>("entries_pos");
  d.lnht.entries_neg = l.get<std::size_t>("entries_neg");
  d.lnht.w = w;
  try {
    d.lnht.validate();
  } catch (const MisuseError& e) {
    s.fail(e.what());
  }
  if (d.lnht.entries_pos != d.positive.size() || d.lnht.entries_neg != d.negative.size())
    s.fail("lnht entry counts differ from the codebook sizes");
  d.box_width = s.get<double>("box_width");
  d.box_height = s.get<double>("box_height");
  return d;
}

inline const char* kind_name(NodeKind k) { return to_string(k); }

inline NodeKind kind_from(const std::string& s, const Reader& r) {
  for (auto k : {NodeKind::terminal, NodeKind::and_node, NodeKind::or_node, NodeKind::nor_node})
    if (s == to_string(k)) return k;
  r.fail("unknown node kind '" + s + "'");
}

/// Terminal weights in node order; block var = terminal node index.
inline BlockLayout tree_layout(const AndOrTree& t) {
  std::vector<Block> blocks;
  std::size_t off = 0;
  for (std::size_t u = 0; u < t.nodes.size(); ++u)
    if (t.nodes[u].kind == NodeKind::terminal) {
      blocks.push_back({static_cast<int>(u), off, t.nodes[u].weight.size()});
      off += t.nodes[u].weight.size();
    }
  return BlockLayout(std::move(blocks));
}

inline Json andor_json(const AndOrTree& t) {
  check_tree(t);
  Json nodes = Json::array();
  Vector w;
  for (const auto& v : t.nodes) {
    Json n = {{"kind", kind_name(v.kind)}};
    if (v.kind == NodeKind::terminal) {
      n["patch"] = Json::array({v.patch.row, v.patch.col, v.patch.rows, v.patch.cols});
      w.insert(w.end(), v.weight.begin(), v.weight.end());
    } else {
      n["children"] = v.children;
    }
    nodes.push_back(std::move(n));
  }
  Json s = {{"input", {{"rows", t.input_rows}, {"cols", t.input_cols}, {"channels", t.input_channels}}},
            {"root", t.root},
            {"nodes", nodes}};
  return model_document("andor", tree_layout(t), w, std::move(s));
}

inline AndOrTree andor_from(const Reader& s, const Vector& w) {
  AndOrTree t;
  const auto in = s.object("input");
  t.input_rows = in.get<int>("rows");
  t.input_cols = in.get<int>("cols");
  t.input_channels = in.get<int>("channels");
  t.root = s.get<int>("root");
  const Json& nodes = s.raw("nodes");
  if (!nodes.is_array()) s.fail("field 'nodes': expected an array");
  std::size_t off = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    const Reader n(nodes[i], s.where() + ".nodes[" + std::to_string(i) + "]");
    AndOrNode v;
    v.kind = kind_from(n.get<std::string>("kind"), n);
    if (v.kind == NodeKind::terminal) {
      const Vector p = numbers(n.raw("patch"), n.where() + ".patch");
      if (p.size() != 4) n.fail("a patch is [row, col, rows, cols]");
      v.patch = {static_cast<int>(p[0]), static_cast<int>(p[1]), static_cast<int>(p[2]), static_cast<int>(p[3])};
      const std::size_t len = static_cast<std::size_t>(std::max(v.patch.rows, 0)) *
                              static_cast<std::size_t>(std::max(v.patch.cols, 0)) *
                              static_cast<std::size_t>(std::max(t.input_channels, 0));
      if (off + len > w.size()) s.fail("fewer weights than the terminals need");
      v.weight.assign(w.begin() + static_cast<std::ptrdiff_t>(off), w.begin() + static_cast<std::ptrdiff_t>(off + len));
      off += len;
    } else {
      const Json& ch = n.raw("children");
      if (!ch.is_array()) n.fail("field 'children': expected an array");
      for (const auto& c : ch) {
        if (!c.is_number_integer()) n.fail("field 'children': expected integers");
        v.children.push_back(c.get<int>());
      }
    }
    t.nodes.push_back(std::move(v));
  }
  if (off != w.size()) s.fail("more weights than the terminals need");
  const auto diag = validate_tree(t);
  if (!diag.empty()) s.fail(diag.front().message);
  return t;
}

}  // namespace io_detail

inline Json model_to_json(const AnyModel& m) {
  return std::visit(
      [](const auto& x) -> Json {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, GdpmBundle>) return io_detail::gdpm_json(x);
        else if constexpr (std::is_same_v<T, HoughDetector>) return io_detail::hough_json(x);
        else return io_detail::andor_json(x);
      },
      m);
}

inline AnyModel model_from_json(const Json& j, const std::string& where = "model") {
  io_detail::Reader r(j, where);
  if (r.get<std::string>("format") != "glvm-model") r.fail("not a glvm model document");
  const int version = r.get<int>("version");
  if (version != kModelVersion) r.fail("unsupported model version " + std::to_string(version));
  const auto family = r.get<std::string>("family");
  const Vector w = io_detail::numbers(r.raw("weights"), where + ".weights");
  const BlockLayout stored = io_detail::layout_from(r.raw("layout"), where + ".layout");
  const auto s = r.object("structure");
  AnyModel m;
  if (family == "gdpm") m = io_detail::gdpm_from(s, w);
  else if (family == "hough") m = io_detail::hough_from(s, w);
  else if (family == "andor") m = io_detail::andor_from(s, w);
  else r.fail("unknown model family '" + family + "'");
  if (!(io_detail::layout_from(model_to_json(m).at("layout"), where) == stored))
    r.fail("stored block layout does not match the structure");
  return m;
}

inline void save_model(const std::string& path, const AnyModel& m) {
  io_detail::write_text(path, model_to_json(m).dump(2) + "\n");
}

inline AnyModel load_model(const std::string& path) { return model_from_json(io_detail::read_json(path), path); }

// ---- manifests ----

struct ManifestRecord {
  std::string id;
  std::string file;  // relative to the manifest's directory unless absolute
  int label = -1;
  std::vector<Box> boxes;
  std::vector<Box> confusers;
  bool operator==(const ManifestRecord&) const = default;
};

struct Manifest {
  std::string root;  // directory the file names are resolved against
  std::vector<ManifestRecord> images;
  Json synth;        // generating config, null when not synthetic

  std::string path_of(const ManifestRecord& r) const {
    const std::filesystem::path p(r.file);
    return p.is_absolute() ? p.string() : (std::filesystem::path(root) / p).string();
  }
};

inline Json to_json(const Manifest& m) {
  Json images = Json::array();
  for (const auto& r : m.images) {
    Json boxes = Json::array(), conf = Json::array();
    for (const auto& b : r.boxes) boxes.push_back(io_detail::box_json(b));
    for (const auto& b : r.confusers) conf.push_back(io_detail::box_json(b));
    images.push_back({{"id", r.id}, {"file", r.file}, {"label", r.label}, {"boxes", boxes}, {"confusers", conf}});
  }
  Json j = {{"format", "glvm-manifest"}, {"version", kManifestVersion}, {"images", images}};
  if (!m.synth.is_null()) j["synth"] = m.synth;
  return j;
}

/// Parses a manifest and checks that every referenced image exists.
inline Manifest load_manifest(const std::string& path) {
  const Json j = io_detail::read_json(path);
  io_detail::Reader r(j, path);
  if (r.get<std::string>("format") != "glvm-manifest") r.fail("not a glvm manifest");
  const int version = r.get<int>("version");
  if (version != kManifestVersion) r.fail("unsupported manifest version " + std::to_string(version));
  Manifest m;
  m.root = std::filesystem::path(path).parent_path().string();
  if (r.has("synth")) m.synth = r.raw("synth");
  const Json& images = r.raw("images");
  if (!images.is_array()) r.fail("field 'images': expected an array");
  std::set<std::string> ids;
  for (std::size_t i = 0; i < images.size(); ++i) {
    const io_detail::Reader e(images[i], path + ": images[" + std::to_string(i) + "]");
    ManifestRecord rec;
    rec.id = e.get<std::string>("id");
    rec.file = e.get<std::string>("file");
    rec.label = e.get<int>("label");
    if (rec.label != 1 && rec.label != -1) e.fail("label must be +1 or -1");
    if (!ids.insert(rec.id).second) e.fail("duplicate image id '" + rec.id + "'");
    for (const auto& b : e.raw("boxes")) rec.boxes.push_back(io_detail::box_from(b, e.where() + ".boxes"));
    if (e.has("confusers"))
      for (const auto& b : e.raw("confusers")) rec.confusers.push_back(io_detail::box_from(b, e.where() + ".confusers"));
    if (rec.label > 0 && rec.boxes.empty()) e.fail("positive image without boxes");
    m.images.push_back(std::move(rec));
    if (!std::filesystem::exists(m.path_of(m.images.back())))
      throw IoError("manifest '" + path + "' references missing image '" + m.path_of(m.images.back()) + "'");
  }
  return m;
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  io_detail::write_text(path, to_json(m).dump(2) + "\n");
}

inline std::vector<AnnotatedImage> load_images(const Manifest& m) {
  std::vector<AnnotatedImage> out;
  for (const auto& r : m.images) out.push_back({r.id, read_pgm(m.path_of(r)), r.label, r.boxes, r.confusers});
  return out;
}

/// Writes the images as PGM files plus manifest.json into `dir`; returns the manifest path.
inline std::string write_dataset(const std::string& dir, const std::vector<AnnotatedImage>& images,
                                 const Json& synth = nullptr) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir + "': " + ec.message());
  Manifest m;
  m.root = dir;
  m.synth = synth;
  for (const auto& im : images) {
    const std::string file = im.id + ".pgm";
    write_pgm((std::filesystem::path(dir) / file).string(), im.image);
    m.images.push_back({im.id, file, im.label, im.boxes, im.confusers});
  }
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  save_manifest(path, m);
  return path;
}

// ---- detections ----

inline void write_detections_csv(std::ostream& os, const std::vector<ScoredBox>& dets) {
  os.precision(17);
  os << "image,score,x0,y0,x1,y1\n";
  for (const auto& d : dets)
    os << d.image << ',' << d.score << ',' << d.box.x0 << ',' << d.box.y0 << ',' << d.box.x1 << ',' << d.box.y1 << '\n';
}

/// Parse errors name the source and line.
inline std::vector<ScoredBox> read_detections_csv(std::istream& is, const std::string& name = "detections") {
  std::vector<ScoredBox> out;
  std::string line;
  int n = 0;
  auto fail = [&](const std::string& msg) { throw MisuseError(name + ":" + std::to_string(n) + ": " + msg); };
  while (std::getline(is, line)) {
    ++n;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (n == 1) {
      if (line != "image,score,x0,y0,x1,y1") fail("expected header 'image,score,x0,y0,x1,y1'");
      continue;
    }
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 6) fail("expected 6 fields, got " + std::to_string(f.size()));
    double v[5];
    for (int k = 0; k < 5; ++k) {
      std::size_t used = 0;
      try {
        v[k] = std::stod(f[static_cast<std::size_t>(k + 1)], &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used == 0 || used != f[static_cast<std::size_t>(k + 1)].size())
        fail("field " + std::to_string(k + 2) + " is not a number: '" + f[static_cast<std::size_t>(k + 1)] + "'");
    }
    out.push_back({f[0], {v[1], v[2], v[3], v[4]}, v[0]});
  }
  if (n == 0) fail("empty file");
  return out;
}

}  // namespace glvm
