#pragma once

#include <string>
#include <vector>

#include "glvm/evalkit.hpp"
#include "glvm/gdpm_train.hpp"
#include "glvm/hough.hpp"
#include "glvm/io.hpp"
#include "glvm/parallel.hpp"

namespace glvm {

struct DetectOptions {
  double nms_iou = 0.5;                         // gdpm
  HoughScoring scoring = HoughScoring::lnht;    // hough
};

inline std::vector<ScoredBox> detect_image(const AnyModel& model, const GrayImage& img, const std::string& id,
                                           const DetectOptions& opt = {}) {
  std::vector<ScoredBox> out;
  if (const auto* g = std::get_if<GdpmBundle>(&model)) {
    if (img.height < g->model.root_rows() * g->pyramid.cell || img.width < g->model.root_cols() * g->pyramid.cell)
      throw MisuseError("detect: image '" + id + "' is smaller than the root filter");
    const FeaturePyramid p = build_pyramid(img, g->pyramid);
    if (p.levels.front().channels != g->model.channels())
      throw MisuseError("detect: model expects " + std::to_string(g->model.channels()) + " feature channels, images give " +
                        std::to_string(p.levels.front().channels));
    for (const auto& d : detect(g->model, p, opt.nms_iou)) out.push_back({id, d.box, d.score});
  } else if (const auto* h = std::get_if<HoughDetector>(&model)) {
    out = hough_detect(*h, img, id, opt.scoring);
  } else {
    throw MisuseError("detect: '" + std::string(family_name(model)) + "' models are not detectors");
  }
  return out;
}

/// Detections of every image, in image order whatever the thread count.
inline std::vector<ScoredBox> detect_images(const AnyModel& model, const std::vector<AnnotatedImage>& images,
                                            const DetectOptions& opt = {}, int threads = 1) {
  std::vector<std::vector<ScoredBox>> per(images.size());
  parallel_for(images.size(), threads,
               [&](std::size_t i) { per[i] = detect_image(model, images[i].image, images[i].id, opt); });
  std::vector<ScoredBox> out;
  for (auto& v : per) out.insert(out.end(), v.begin(), v.end());
  return out;
}

inline std::vector<GroundTruth> ground_truth(const std::vector<AnnotatedImage>& images) {
  std::vector<GroundTruth> out;
  for (const auto& im : images)
    for (const auto& b : im.boxes) out.push_back({im.id, b});
  return out;
}

inline std::vector<GroundTruth> ground_truth(const Manifest& m) {
  std::vector<GroundTruth> out;
  for (const auto& r : m.images)
    for (const auto& b : r.boxes) out.push_back({r.id, b});
  return out;
}

/// Confuser-class model for donor initialization: root stage then
/// `parts` positive parts, trained on donor_images(images).
inline GdpmModel train_donor(const std::vector<AnnotatedImage>& images, const StagedConfig& cfg, int parts) {
  StagedConfig d = cfg;
  d.positive_parts = parts;
  d.negative_parts = 0;
  d.negative_init = NegativeInit::energy;
  return train_gdpm_staged(donor_images(images), d).model;
}

}  // namespace glvm
