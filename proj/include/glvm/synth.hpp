#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "glvm/box.hpp"
#include "glvm/errors.hpp"

namespace glvm {

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> pixels;  // row-major, values in [0, 1]

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0) : height(h), width(w), pixels(static_cast<std::size_t>(h) * w, fill) {
    if (h < 0 || w < 0) throw MisuseError("GrayImage: negative size");
  }
  double at(int r, int c) const { return pixels[static_cast<std::size_t>(r) * width + c]; }
  double& at(int r, int c) { return pixels[static_cast<std::size_t>(r) * width + c]; }
  bool operator==(const GrayImage&) const = default;
};

/// H x W x F tensor of cell features.
struct FeatureGrid {
  int rows = 0;
  int cols = 0;
  int channels = 0;
  double scale = 1.0;  // level pixels per image pixel
  std::vector<double> data;

  FeatureGrid() = default;
  FeatureGrid(int r, int c, int f, double s = 1.0)
      : rows(r), cols(c), channels(f), scale(s), data(static_cast<std::size_t>(r) * c * f, 0.0) {}
  double at(int r, int c, int f) const { return data[(static_cast<std::size_t>(r) * cols + c) * channels + f]; }
  double& at(int r, int c, int f) { return data[(static_cast<std::size_t>(r) * cols + c) * channels + f]; }
  const double* cell(int r, int c) const { return data.data() + (static_cast<std::size_t>(r) * cols + c) * channels; }
  bool operator==(const FeatureGrid&) const = default;
};

inline constexpr int kOrientationBins = 8;
inline constexpr int kFeatureChannels = kOrientationBins + 1;

/// Per cell: 8-bin signed gradient-orientation histogram (central
/// differences, magnitude-weighted, bins centred on multiples of 45 degrees)
/// followed by the mean intensity, scaled by 1 / (|v| + 1e-6).
inline FeatureGrid extract_features(const GrayImage& img, int cell) {
  if (cell <= 0) throw MisuseError("extract_features: cell size must be positive");
  if (img.height % cell != 0 || img.width % cell != 0)
    throw MisuseError("extract_features: image size " + std::to_string(img.height) + "x" +
                      std::to_string(img.width) + " not divisible by cell size " + std::to_string(cell));
  FeatureGrid g(img.height / cell, img.width / cell, kFeatureChannels);
  const double bin_width = 2.0 * std::numbers::pi / kOrientationBins;
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      const double gx = img.at(r, std::min(c + 1, img.width - 1)) - img.at(r, std::max(c - 1, 0));
      const double gy = img.at(std::min(r + 1, img.height - 1), c) - img.at(std::max(r - 1, 0), c);
      const double mag = std::sqrt(gx * gx + gy * gy);
      double* v = &g.at(r / cell, c / cell, 0);
      if (mag > 0.0) {
        double theta = std::atan2(gy, gx);
        if (theta < 0) theta += 2.0 * std::numbers::pi;
        const int bin = static_cast<int>(std::floor(theta / bin_width + 0.5)) % kOrientationBins;
        v[bin] += mag;
      }
      v[kOrientationBins] += img.at(r, c) / (cell * cell);
    }
  }
  for (int r = 0; r < g.rows; ++r)
    for (int c = 0; c < g.cols; ++c) {
      double* v = &g.at(r, c, 0);
      double n = 0.0;
      for (int f = 0; f < kFeatureChannels; ++f) n += v[f] * v[f];
      const double s = 1.0 / (std::sqrt(n) + 1e-6);
      for (int f = 0; f < kFeatureChannels; ++f) v[f] *= s;
    }
  return g;
}

/// Area-weighted resampling to an arbitrary size.
inline GrayImage resize(const GrayImage& img, int height, int width) {
  if (height <= 0 || width <= 0 || img.height == 0 || img.width == 0) throw MisuseError("resize: empty image");
  auto weights = [](int in, int out) {
    // rows of (source index, weight) per output index
    std::vector<std::vector<std::pair<int, double>>> w(static_cast<std::size_t>(out));
    const double step = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
      const double a = o * step, b = (o + 1) * step;
      for (int i = static_cast<int>(std::floor(a)); i < in && i < b; ++i) {
        const double overlap = std::min(b, i + 1.0) - std::max(a, static_cast<double>(i));
        if (overlap > 0) w[o].push_back({i, overlap / step});
      }
    }
    return w;
  };
  const auto wr = weights(img.height, height), wc = weights(img.width, width);
  GrayImage tmp(img.height, width);
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < width; ++c) {
      double s = 0.0;
      for (auto [i, w] : wc[c]) s += w * img.at(r, i);
      tmp.at(r, c) = s;
    }
  GrayImage out(height, width);
  for (int r = 0; r < height; ++r)
    for (int c = 0; c < width; ++c) {
      double s = 0.0;
      for (auto [i, w] : wr[r]) s += w * tmp.at(i, c);
      out.at(r, c) = std::clamp(s, 0.0, 1.0);
    }
  return out;
}

struct SynthConfig {
  std::uint64_t seed = 0;
  int height = 96;
  int width = 96;
  int cell = 4;
  int positives = 60;
  int backgrounds = 500;
  double arm = 22.0;             // half-length of each bar of the cross
  double thickness = 6.0;
  double cap_length = 20.0;      // bar closing one arm of the confuser into a T-junction
  double cap_jitter = 8.0;       // +- offset of the cap along the arm end
  double confuser_rate = 0.7;    // chance that a background holds a confuser
  int max_clutter = 2;           // L-corners per image, uniform in [0, max]
  double noise = 0.05;           // Gaussian pixel noise
  double position_jitter = 16.0; // +- offset of the shape centre from the image centre
  double rotation_jitter = 0.1;  // +- radians
  double scale_min = 0.95;
  double scale_max = 1.1;
  double background_level = 0.2;
  double foreground_level = 0.8;

  void validate() const {
    if (cell <= 0 || height <= 0 || width <= 0 || height % cell != 0 || width % cell != 0)
      throw MisuseError("SynthConfig: image dims must be positive multiples of the cell size");
    if (positives < 0 || backgrounds < 0) throw MisuseError("SynthConfig: negative image count");
    if (noise < 0) throw MisuseError("SynthConfig: noise must be >= 0");
    if (position_jitter < 0 || rotation_jitter < 0 || cap_jitter < 0 || max_clutter < 0)
      throw MisuseError("SynthConfig: jitter ranges must be >= 0");
    if (!(scale_min > 0) || scale_max < scale_min) throw MisuseError("SynthConfig: bad scale range");
    if (confuser_rate < 0 || confuser_rate > 1) throw MisuseError("SynthConfig: confuser_rate outside [0, 1]");
    const double reach = scale_max * (arm + thickness) + position_jitter;
    if (2 * reach > std::min(height, width))
      throw MisuseError("SynthConfig: shape plus jitter larger than the image");
  }
};

struct AnnotatedImage {
  std::string id;
  GrayImage image;
  int label = -1;
  std::vector<Box> boxes;      // targets
  std::vector<Box> confusers;  // confuser shapes, kept for donor training
};

namespace detail {

/// Portable random stream: only raw 64-bit engine output is consumed, so the
/// generated data does not depend on the standard library's distributions.
class Stream {
 public:
  Stream(std::uint64_t seed, std::uint64_t index) {
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                      static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
    rng_.seed(seq);
  }
  double unit() { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; }
  double uniform(double a, double b) { return a + (b - a) * unit(); }
  int integer(int lo, int hi) { return lo + static_cast<int>(unit() * (hi - lo + 1)); }
  double normal() {
    const double u1 = 1.0 - unit(), u2 = unit();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::mt19937_64 rng_;
};

struct Rect {
  double cx, cy, hx, hy, angle;
  bool inside(double x, double y) const {
    const double dx = x - cx, dy = y - cy, c = std::cos(angle), s = std::sin(angle);
    return std::abs(dx * c + dy * s) <= hx && std::abs(-dx * s + dy * c) <= hy;
  }
};

// A point in the frame of a shape centred at (cx, cy), rotated by angle.
inline std::pair<double, double> place(double cx, double cy, double angle, double u, double v) {
  const double c = std::cos(angle), s = std::sin(angle);
  return {cx + u * c - v * s, cy + u * s + v * c};
}

inline std::vector<Rect> cross(double cx, double cy, double arm, double t, double angle) {
  return {{cx, cy, arm, t / 2, angle}, {cx, cy, t / 2, arm, angle}};
}

/// Draws the rects into `img`; returns the bounding box of the pixels drawn.
inline Box draw(GrayImage& img, const std::vector<Rect>& rects, double level) {
  int r0 = img.height, c0 = img.width, r1 = -1, c1 = -1;
  for (int r = 0; r < img.height; ++r)
    for (int c = 0; c < img.width; ++c)
      for (const auto& rect : rects)
        if (rect.inside(c + 0.5, r + 0.5)) {
          img.at(r, c) = level;
          r0 = std::min(r0, r), c0 = std::min(c0, c), r1 = std::max(r1, r), c1 = std::max(c1, c);
          break;
        }
  if (r1 < 0) return {};
  return {static_cast<double>(c0), static_cast<double>(r0), c1 + 1.0, r1 + 1.0};
}

}  // namespace detail

/// Renders one image of the dataset; index i < positives gives a positive.
inline AnnotatedImage generate_image(const SynthConfig& cfg, int index) {
  using detail::Rect;
  detail::Stream rs(cfg.seed, static_cast<std::uint64_t>(index));
  AnnotatedImage out;
  const bool positive = index < cfg.positives;
  out.label = positive ? 1 : -1;
  out.id = (positive ? "pos_" : "bg_") + std::to_string(positive ? index : index - cfg.positives);
  out.image = GrayImage(cfg.height, cfg.width, cfg.background_level);

  auto shape_pose = [&](double& cx, double& cy, double& scale, double& angle) {
    cx = cfg.width / 2.0 + rs.uniform(-cfg.position_jitter, cfg.position_jitter);
    cy = cfg.height / 2.0 + rs.uniform(-cfg.position_jitter, cfg.position_jitter);
    scale = rs.uniform(cfg.scale_min, cfg.scale_max);
    angle = rs.uniform(-cfg.rotation_jitter, cfg.rotation_jitter);
  };

  // clutter first so that the main shape is drawn on top
  const int clutter = cfg.max_clutter > 0 ? rs.integer(0, cfg.max_clutter) : 0;
  for (int k = 0; k < clutter; ++k) {
    const double cx = rs.uniform(0, cfg.width), cy = rs.uniform(0, cfg.height);
    const double len = cfg.arm * rs.uniform(0.6, 1.0), angle = rs.uniform(0, 2 * std::numbers::pi);
    const double t = cfg.thickness;
    auto [ux, uy] = detail::place(cx, cy, angle, len / 2, 0);
    auto [vx, vy] = detail::place(cx, cy, angle, 0, len / 2);
    detail::draw(out.image, {Rect{ux, uy, len / 2 + t / 2, t / 2, angle}, Rect{vx, vy, t / 2, len / 2 + t / 2, angle}},
                 cfg.foreground_level);
  }

  double cx = 0, cy = 0, scale = 1, angle = 0;
  if (positive) {
    shape_pose(cx, cy, scale, angle);
    out.boxes.push_back(detail::draw(out.image, detail::cross(cx, cy, cfg.arm * scale, cfg.thickness * scale, angle),
                                     cfg.foreground_level));
  } else if (rs.unit() < cfg.confuser_rate) {
    shape_pose(cx, cy, scale, angle);
    auto rects = detail::cross(cx, cy, cfg.arm * scale, cfg.thickness * scale, angle);
    const double shift = rs.uniform(-cfg.cap_jitter, cfg.cap_jitter);
    auto [kx, ky] = detail::place(cx, cy, angle, shift, -(cfg.arm * scale - cfg.thickness * scale / 2));
    rects.push_back({kx, ky, cfg.cap_length * scale / 2, cfg.thickness * scale / 2, angle});
    out.confusers.push_back(detail::draw(out.image, rects, cfg.foreground_level));
  }

  for (double& p : out.image.pixels) {
    if (cfg.noise > 0) p += cfg.noise * rs.normal();
    p = std::round(std::clamp(p, 0.0, 1.0) * 255.0) / 255.0;  // exactly representable in 8-bit PGM
  }
  return out;
}

inline std::vector<AnnotatedImage> generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<AnnotatedImage> out;
  out.reserve(static_cast<std::size_t>(cfg.positives + cfg.backgrounds));
  for (int i = 0; i < cfg.positives + cfg.backgrounds; ++i) out.push_back(generate_image(cfg, i));
  return out;
}

inline void write_pgm(const std::string& path, const GrayImage& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open '" + path + "' for writing");
  os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (double p : img.pixels) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(p, 0.0, 1.0) * 255.0))));
  if (!os) throw IoError("failed writing '" + path + "'");
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open '" + path + "'");
  auto token = [&]() {
    std::string t;
    char ch;
    while (is.get(ch)) {
      if (ch == '#') {
        std::string line;
        std::getline(is, line);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t += ch;
      }
    }
    return t;
  };
  if (token() != "P5") throw IoError("'" + path + "' is not a binary PGM (P5)");
  int w = 0, h = 0, maxval = 0;
  try {
    w = std::stoi(token());
    h = std::stoi(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw IoError("'" + path + "': malformed PGM header");
  }
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) throw IoError("'" + path + "': unsupported PGM header");
  GrayImage img(h, w);
  std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
  if (!is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw IoError("'" + path + "': truncated pixel data");
  for (std::size_t i = 0; i < buf.size(); ++i) img.pixels[i] = buf[i] / static_cast<double>(maxval);
  return img;
}

}  // namespace glvm
