#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "glvm/evalkit.hpp"

using namespace glvm;

namespace {

// Detections with a TP/FP pattern: truths "t<i>" at box (0,0,10,10) of image
// "im<i>"; a TP detection hits a fresh truth, an FP lands elsewhere.
struct Fixture {
  std::vector<ScoredBox> dets;
  std::vector<GroundTruth> truths;
};

Fixture pattern(const std::vector<bool>& tp, std::size_t positives) {
  Fixture f;
  for (std::size_t i = 0; i < positives; ++i) f.truths.push_back({"im" + std::to_string(i), {0, 0, 10, 10}});
  std::size_t next = 0;
  for (std::size_t i = 0; i < tp.size(); ++i) {
    const double score = 100.0 - static_cast<double>(i);
    if (tp[i]) f.dets.push_back({"im" + std::to_string(next++), {0, 0, 10, 10}, score});
    else f.dets.push_back({"im0", {50, 50, 60, 60}, score});
  }
  return f;
}

// Sweep every threshold directly.
double brute_eleven_point(const std::vector<ScoredBox>& dets, const std::vector<GroundTruth>& truths) {
  const auto m = match_detections(dets, truths, 0.5);
  std::vector<std::pair<double, double>> pts;
  for (const auto& d : dets) {
    std::size_t tp = 0, n = 0;
    for (const auto& x : m.detections)
      if (x.detection.score >= d.score) {
        ++n;
        tp += x.true_positive;
      }
    pts.push_back({double(tp) / truths.size(), double(tp) / n});
  }
  double s = 0;
  for (int k = 0; k <= 10; ++k) {
    double best = 0;
    for (auto [r, p] : pts)
      if (r > 0 && r >= k / 10.0 - 1e-12) best = std::max(best, p);
    s += best;
  }
  return s / 11;
}

}  // namespace

TEST(Match, IouThreshold) {
  const std::vector<GroundTruth> gt{{"a", {0, 0, 10, 10}}};
  // (0,0,10,10) vs (0,0,10,6): IoU 0.6; vs (0,0,10,4): 0.4
  EXPECT_TRUE(match_detections({{"a", {0, 0, 10, 6}, 1.0}}, gt).detections[0].true_positive);
  EXPECT_FALSE(match_detections({{"a", {0, 0, 10, 4}, 1.0}}, gt).detections[0].true_positive);
  EXPECT_FALSE(match_detections({{"b", {0, 0, 10, 10}, 1.0}}, gt).detections[0].true_positive);
  EXPECT_THROW(match_detections({}, gt, 0.0), MisuseError);
}

TEST(Match, DuplicateOnMatchedTruthIsFalsePositive) {
  const std::vector<GroundTruth> gt{{"a", {0, 0, 10, 10}}};
  const auto m = match_detections({{"a", {0, 0, 10, 9}, 0.5}, {"a", {0, 0, 10, 10}, 0.9}}, gt);
  ASSERT_EQ(m.detections.size(), 2u);
  EXPECT_EQ(m.detections[0].detection.score, 0.9);
  EXPECT_TRUE(m.detections[0].true_positive);
  EXPECT_EQ(m.detections[0].truth, 0);
  EXPECT_FALSE(m.detections[1].true_positive);
}

TEST(PrCurve, AllTruePositivesHavePrecisionOne) {
  const auto f = pattern({true, true, true}, 4);
  for (const auto& p : pr_curve(match_detections(f.dets, f.truths))) EXPECT_EQ(p.precision, 1.0);
}

TEST(PrCurve, NoDetectionsIsSinglePoint) {
  const auto c = pr_curve(match_detections({}, {{"a", {0, 0, 1, 1}}}));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].recall, 0.0);
  EXPECT_EQ(c[0].precision, 1.0);
  EXPECT_EQ(average_precision(c), 0.0);
  EXPECT_EQ(average_precision(c, ApMode::continuous), 0.0);
  EXPECT_THROW(pr_curve(match_detections({}, {})), MisuseError);
}

TEST(PrCurve, InterleavedStaircaseByHand) {
  const auto f = pattern({true, false, true, false, true}, 3);
  const auto c = pr_curve(match_detections(f.dets, f.truths));
  const std::vector<std::pair<double, double>> want{{1 / 3.0, 1.0}, {1 / 3.0, 0.5}, {2 / 3.0, 2 / 3.0},
                                                    {2 / 3.0, 0.5}, {1.0, 0.6}};
  ASSERT_EQ(c.size(), want.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_DOUBLE_EQ(c[i].recall, want[i].first);
    EXPECT_DOUBLE_EQ(c[i].precision, want[i].second);
  }
  // recall 0..0.3 -> 1, 0.4..0.6 -> 2/3, 0.7..1.0 -> 0.6
  EXPECT_NEAR(average_precision(c), (4 * 1.0 + 3 * (2 / 3.0) + 4 * 0.6) / 11, 1e-12);
  EXPECT_NEAR(average_precision(c, ApMode::continuous), (1 / 3.0) * 1.0 + (1 / 3.0) * (2 / 3.0) + (1 / 3.0) * 0.6,
              1e-12);
}

TEST(PrCurve, TiedScoresFormOnePoint) {
  const std::vector<GroundTruth> gt{{"a", {0, 0, 10, 10}}, {"b", {0, 0, 10, 10}}};
  const auto c = pr_curve(match_detections({{"a", {0, 0, 10, 10}, 1.0}, {"c", {0, 0, 1, 1}, 1.0}}, gt));
  ASSERT_EQ(c.size(), 1u);
  EXPECT_EQ(c[0].recall, 0.5);
  EXPECT_EQ(c[0].precision, 0.5);
}

TEST(AveragePrecision, PerfectAndEmpty) {
  const auto f = pattern({true, true}, 2);
  EXPECT_EQ(average_precision(f.dets, f.truths), 1.0);
  EXPECT_EQ(average_precision(f.dets, f.truths, 0.5, ApMode::continuous), 1.0);
  const auto g = pattern({false, false}, 2);
  EXPECT_EQ(average_precision(g.dets, g.truths), 0.0);
}

TEST(AveragePrecision, MatchesThresholdSweepAndProperties) {
  std::mt19937_64 rng(3);
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> len(1, 12);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<bool> tp(static_cast<std::size_t>(len(rng)));
    std::size_t hits = 0;
    for (std::size_t i = 0; i < tp.size(); ++i) {
      tp[i] = coin(rng);
      hits += tp[i];
    }
    const std::size_t positives = hits + static_cast<std::size_t>(len(rng) % 3);
    if (positives == 0) continue;
    const auto f = pattern(tp, positives);
    const double ap = average_precision(f.dets, f.truths);
    EXPECT_NEAR(ap, brute_eleven_point(f.dets, f.truths), 1e-12);
    EXPECT_GE(ap, 0.0);
    EXPECT_LE(ap, 1.0);
    const double cont = average_precision(f.dets, f.truths, 0.5, ApMode::continuous);
    EXPECT_GE(cont, 0.0);
    EXPECT_LE(cont, 1.0);
    // dropping any false positive never lowers AP
    for (std::size_t i = 0; i < tp.size(); ++i) {
      if (tp[i]) continue;
      auto fewer = tp;
      fewer.erase(fewer.begin() + static_cast<std::ptrdiff_t>(i));
      const auto g = pattern(fewer, positives);
      EXPECT_GE(average_precision(g.dets, g.truths), ap - 1e-12);
      EXPECT_GE(average_precision(g.dets, g.truths, 0.5, ApMode::continuous), cont - 1e-12);
    }
    // a new true positive at the top never lowers AP
    if (hits < positives) {
      auto more = tp;
      more.insert(more.begin(), true);
      const auto g = pattern(more, positives);
      EXPECT_GE(average_precision(g.dets, g.truths), ap - 1e-12);
    }
  }
}

TEST(PrCurve, CsvHasHeaderAndRows) {
  const auto f = pattern({true, false}, 1);
  std::ostringstream os;
  write_pr_csv(os, pr_curve(match_detections(f.dets, f.truths)));
  EXPECT_EQ(os.str(), "recall,precision,threshold\n1,1,100\n1,0.5,99\n");
}
