#pragma once

#include <algorithm>
#include <map>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include "glvm/box.hpp"
#include "glvm/errors.hpp"

namespace glvm {

struct ScoredBox {
  std::string image;
  Box box;
  double score = 0.0;
};

struct GroundTruth {
  std::string image;
  Box box;
};

struct MatchedDetection {
  ScoredBox detection;
  int truth = -1;  // index into the ground-truth list, -1 when unmatched
  bool true_positive = false;
};

struct MatchedDetections {
  std::vector<MatchedDetection> detections;  // by descending score
  std::size_t positives = 0;
};

/// PASCAL-style greedy matching: in descending score order each detection
/// takes its highest-IoU truth in the same image; it is a true positive when
/// that IoU reaches the threshold and the truth is still free.
inline MatchedDetections match_detections(std::vector<ScoredBox> dets, const std::vector<GroundTruth>& truths,
                                          double iou_threshold = 0.5) {
  if (!(iou_threshold > 0.0 && iou_threshold <= 1.0)) throw MisuseError("match_detections: threshold must lie in (0, 1]");
  std::stable_sort(dets.begin(), dets.end(), [](const ScoredBox& a, const ScoredBox& b) { return a.score > b.score; });
  std::map<std::string, std::vector<int>> by_image;
  for (int i = 0; i < static_cast<int>(truths.size()); ++i) by_image[truths[static_cast<std::size_t>(i)].image].push_back(i);
  std::vector<char> taken(truths.size(), 0);
  MatchedDetections out;
  out.positives = truths.size();
  for (auto& d : dets) {
    MatchedDetection m{std::move(d), -1, false};
    double best = -1.0;
    int arg = -1;
    if (auto it = by_image.find(m.detection.image); it != by_image.end())
      for (int t : it->second) {
        const double o = iou(m.detection.box, truths[static_cast<std::size_t>(t)].box);
        if (o > best) {
          best = o;
          arg = t;
        }
      }
    if (arg >= 0 && best >= iou_threshold && !taken[static_cast<std::size_t>(arg)]) {
      taken[static_cast<std::size_t>(arg)] = 1;
      m.truth = arg;
      m.true_positive = true;
    }
    out.detections.push_back(std::move(m));
  }
  return out;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 1.0;
  double threshold = 0.0;
};

/// One point per distinct detection score, sweeping the threshold downward.
/// Without detections the curve is the single point (0, 1).
inline std::vector<PrPoint> pr_curve(const MatchedDetections& m) {
  if (m.positives == 0) throw MisuseError("pr_curve: no ground truths");
  std::vector<PrPoint> out;
  if (m.detections.empty()) return {{0.0, 1.0, 0.0}};
  std::size_t tp = 0, fp = 0;
  const auto& d = m.detections;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i > 0 && d[i].detection.score > d[i - 1].detection.score)
      throw MisuseError("pr_curve: detections not sorted by descending score");
    (d[i].true_positive ? tp : fp) += 1;
    if (i + 1 < d.size() && d[i + 1].detection.score == d[i].detection.score) continue;
    out.push_back({static_cast<double>(tp) / static_cast<double>(m.positives),
                   static_cast<double>(tp) / static_cast<double>(tp + fp), d[i].detection.score});
  }
  return out;
}

enum class ApMode { eleven_point, continuous };

/// eleven_point: mean over r in {0, 0.1, ..., 1} of the best precision at
/// recall >= r. continuous: area under the precision envelope. Points with
/// zero recall carry no area, so a detector that finds nothing scores 0.
inline double average_precision(const std::vector<PrPoint>& curve, ApMode mode = ApMode::eleven_point) {
  std::vector<PrPoint> pts;
  for (const auto& p : curve) {
    if (p.recall < 0.0 || p.recall > 1.0 || p.precision < 0.0 || p.precision > 1.0)
      throw MisuseError("average_precision: curve values outside [0, 1]");
    if (p.recall > 0.0) pts.push_back(p);
  }
  auto envelope = [&](double r) {
    double best = 0.0;
    for (const auto& p : pts)
      if (p.recall >= r - 1e-12) best = std::max(best, p.precision);
    return best;
  };
  if (mode == ApMode::eleven_point) {
    double s = 0.0;
    for (int k = 0; k <= 10; ++k) s += envelope(k / 10.0);
    return s / 11.0;
  }
  std::stable_sort(pts.begin(), pts.end(), [](const PrPoint& a, const PrPoint& b) { return a.recall < b.recall; });
  double area = 0.0, prev = 0.0;
  for (const auto& p : pts) {
    area += (p.recall - prev) * envelope(p.recall);
    prev = p.recall;
  }
  return area;
}

inline double average_precision(const std::vector<ScoredBox>& dets, const std::vector<GroundTruth>& truths,
                                double iou_threshold = 0.5, ApMode mode = ApMode::eleven_point) {
  return average_precision(pr_curve(match_detections(dets, truths, iou_threshold)), mode);
}

inline void write_pr_csv(std::ostream& os, const std::vector<PrPoint>& curve) {
  os.precision(17);
  os << "recall,precision,threshold\n";
  for (const auto& p : curve) os << p.recall << ',' << p.precision << ',' << p.threshold << '\n';
}

}  // namespace glvm
