#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "retreg/keypoints.hpp"
#include "test_support.hpp"

namespace retreg {
namespace {

using testing::scratch_dir;

HeatmapSet blank(int w, int h) {
  return make_heatmap(std::span<const Keypoint>{}, {w, h}, DetectConfig{});
}

void set_peak(HeatmapSet& hm, KeypointClass c, int x, int y, float v) {
  Tensor& t = c == KeypointClass::Crossover ? hm.crossover : hm.bifurcation;
  t.at(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) = v;
}

TEST(MakeHeatmap, EmptyListIsAllZero) {
  const HeatmapSet hm = blank(32, 24);
  EXPECT_EQ(hm.width(), 32);
  EXPECT_EQ(hm.height(), 24);
  for (const Tensor* t : {&hm.crossover, &hm.bifurcation, &hm.combined})
    for (float v : t->data) EXPECT_EQ(v, 0.0f);
}

TEST(MakeHeatmap, GaussianProfile) {
  DetectConfig cfg;
  const std::vector<Keypoint> kps{{{30, 30}, KeypointClass::Crossover, 1.0f}};
  const HeatmapSet hm = make_heatmap(kps, {64, 64}, cfg);
  EXPECT_FLOAT_EQ(hm.crossover.at(30, 30), 1.0f);
  // 3 sigma = 9 px along x.
  EXPECT_NEAR(hm.crossover.at(30, 39), std::exp(-4.5), 1e-6);
  EXPECT_NEAR(hm.crossover.at(30, 39), 0.01111, 1e-5);
  EXPECT_NEAR(hm.crossover.at(33, 34), std::exp(-25.0 / 18.0), 1e-6);
  for (float v : hm.bifurcation.data) EXPECT_EQ(v, 0.0f);
}

TEST(MakeHeatmap, CombinedIsElementwiseMax) {
  const std::vector<Keypoint> kps{{{20, 20}, KeypointClass::Crossover, 1.0f},
                                  {{24, 22}, KeypointClass::Bifurcation, 1.0f}};
  const HeatmapSet hm = make_heatmap(kps, {48, 40}, DetectConfig{});
  for (std::size_t i = 0; i < hm.combined.size(); ++i)
    EXPECT_EQ(hm.combined.data[i], std::max(hm.crossover.data[i], hm.bifurcation.data[i]));
}

TEST(MakeHeatmap, OverlapCombinesByMax) {
  const std::vector<Keypoint> kps{{{10, 10}, KeypointClass::Crossover, 1.0f},
                                  {{13, 10}, KeypointClass::Crossover, 1.0f}};
  const HeatmapSet hm = make_heatmap(kps, {30, 30}, DetectConfig{});
  // x = 11 and x = 12 sit 1 px from one centre and 2 px from the other.
  const double near = std::exp(-1.0 / 18.0);
  EXPECT_NEAR(hm.crossover.at(10, 11), near, 1e-6);
  EXPECT_NEAR(hm.crossover.at(10, 12), near, 1e-6);
  EXPECT_LT(hm.crossover.at(10, 11), near + std::exp(-4.0 / 18.0) - 0.5);
  for (float v : hm.crossover.data) EXPECT_LE(v, 1.0f);
}

TEST(MakeHeatmap, OutOfBoundsRejected) {
  const std::vector<Keypoint> kps{{{40, 5}, KeypointClass::Crossover, 1.0f}};
  EXPECT_RETREG_ERROR(make_heatmap(kps, {40, 40}, DetectConfig{}), ErrorCode::OutOfBoundsKeypoint);
}

TEST(HeatmapMse, Examples) {
  const std::vector<Keypoint> kps{{{8, 8}, KeypointClass::Bifurcation, 1.0f}};
  const HeatmapSet truth = make_heatmap(kps, {20, 20}, DetectConfig{});
  EXPECT_EQ(heatmap_mse(truth, truth), 0.0);

  HeatmapSet zeros = blank(20, 20), ones = blank(20, 20);
  for (Tensor* t : {&ones.crossover, &ones.bifurcation, &ones.combined}) std::fill(t->data.begin(), t->data.end(), 1.0f);
  EXPECT_DOUBLE_EQ(heatmap_mse(zeros, ones), 1.0);

  HeatmapSet shifted = truth;
  for (Tensor* t : {&shifted.crossover, &shifted.bifurcation, &shifted.combined})
    for (auto& v : t->data) v += 0.1f;
  EXPECT_NEAR(heatmap_mse(shifted, truth), 0.01, 1e-7);
  EXPECT_DOUBLE_EQ(heatmap_mse(shifted, truth), heatmap_mse(truth, shifted));

  EXPECT_RETREG_ERROR(heatmap_mse(truth, blank(21, 20)), ErrorCode::DimMismatch);
}

TEST(Extract, SinglePeak) {
  HeatmapSet hm = blank(64, 64);
  set_peak(hm, KeypointClass::Crossover, 30, 40, 0.8f);
  const auto kps = extract_keypoints(hm, DetectConfig{});
  ASSERT_EQ(kps.size(), 1u);
  EXPECT_EQ(kps[0].pos, (Point2{30, 40}));
  EXPECT_EQ(kps[0].cls, KeypointClass::Crossover);
  EXPECT_FLOAT_EQ(kps[0].score, 0.8f);
}

TEST(Extract, BelowThresholdDropped) {
  HeatmapSet hm = blank(64, 64);
  set_peak(hm, KeypointClass::Crossover, 30, 40, 0.2f);
  EXPECT_TRUE(extract_keypoints(hm, DetectConfig{}).empty());
  set_peak(hm, KeypointClass::Crossover, 30, 40, 0.35f);
  EXPECT_EQ(extract_keypoints(hm, DetectConfig{}).size(), 1u);
}

TEST(Extract, NmsKeepsStrongerOfClosePeaks) {
  HeatmapSet hm = blank(64, 64);
  set_peak(hm, KeypointClass::Bifurcation, 20, 20, 0.9f);
  set_peak(hm, KeypointClass::Bifurcation, 22, 20, 0.7f);
  const auto kps = extract_keypoints(hm, DetectConfig{});
  ASSERT_EQ(kps.size(), 1u);
  EXPECT_EQ(kps[0].pos, (Point2{20, 20}));
  EXPECT_FLOAT_EQ(kps[0].score, 0.9f);
}

TEST(Extract, PlateauIsNotAStrictMaximum) {
  HeatmapSet hm = blank(16, 16);
  set_peak(hm, KeypointClass::Crossover, 7, 7, 0.9f);
  set_peak(hm, KeypointClass::Crossover, 8, 7, 0.9f);
  EXPECT_TRUE(extract_keypoints(hm, DetectConfig{}).empty());
}

TEST(Extract, CombinedChannelIgnored) {
  HeatmapSet hm = blank(32, 32);
  hm.combined.at(10, 10) = 1.0f;
  EXPECT_TRUE(extract_keypoints(hm, DetectConfig{}).empty());
}

TEST(Extract, ClassesProcessedIndependently) {
  HeatmapSet hm = blank(32, 32);
  set_peak(hm, KeypointClass::Crossover, 10, 10, 0.9f);
  set_peak(hm, KeypointClass::Bifurcation, 11, 10, 0.95f);
  const auto kps = extract_keypoints(hm, DetectConfig{});
  ASSERT_EQ(kps.size(), 2u);
}

// Brute-force placement: draw candidates until every pair is at least `sep` apart.
std::vector<Keypoint> random_plants(std::mt19937_64& rng, Size dims, int count, double sep) {
  std::uniform_int_distribution<int> ux(0, dims.width - 1), uy(0, dims.height - 1), uc(0, 1);
  std::vector<Keypoint> out;
  for (int attempt = 0; attempt < 10000 && static_cast<int>(out.size()) < count; ++attempt) {
    const Point2 p{double(ux(rng)), double(uy(rng))};
    bool ok = true;
    for (const auto& k : out) ok = ok && distance(k.pos, p) >= sep;
    if (ok) out.push_back({p, uc(rng) ? KeypointClass::Bifurcation : KeypointClass::Crossover, 1.0f});
  }
  return out;
}

bool same_set(std::vector<Keypoint> a, std::vector<Keypoint> b) {
  auto key = [](const Keypoint& k) { return std::tuple(k.cls, k.pos.y, k.pos.x); };
  auto less = [&](const Keypoint& x, const Keypoint& y) { return key(x) < key(y); };
  std::sort(a.begin(), a.end(), less);
  std::sort(b.begin(), b.end(), less);
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i].pos != b[i].pos || a[i].cls != b[i].cls) return false;
  return true;
}

TEST(Extract, RoundTripOn1000Configurations) {
  const DetectConfig cfg;
  std::mt19937_64 rng(1234);
  std::uniform_int_distribution<int> count(1, 25), side(24, 96);
  for (int trial = 0; trial < 1000; ++trial) {
    const Size dims{side(rng), side(rng)};
    const auto plants = random_plants(rng, dims, count(rng), cfg.nms_window);
    const auto found = extract_keypoints(make_heatmap(plants, dims, cfg), cfg);
    ASSERT_TRUE(same_set(plants, found)) << "trial " << trial;
  }
}

TEST(Extract, PositionsInvariantUnderScalingAboveThreshold) {
  const DetectConfig cfg;
  std::mt19937_64 rng(77);
  const Size dims{80, 80};
  const auto plants = random_plants(rng, dims, 15, 8.0);
  const HeatmapSet hm = make_heatmap(plants, dims, cfg);
  const auto base = extract_keypoints(hm, cfg);
  for (float s : {1.0f, 0.8f, 0.5f, 0.36f}) {
    HeatmapSet scaled = hm;
    for (Tensor* t : {&scaled.crossover, &scaled.bifurcation, &scaled.combined})
      for (auto& v : t->data) v *= s;
    const auto found = extract_keypoints(scaled, cfg);
    ASSERT_TRUE(same_set(base, found)) << "scale " << s;
    for (const auto& k : found) EXPECT_NEAR(k.score, s, 1e-6);
  }
}

TEST(Extract, SubpixelRefinementLocatesOffCentrePeak) {
  DetectConfig cfg;
  const std::vector<Keypoint> kps{{{20.3, 15.75}, KeypointClass::Crossover, 1.0f}};
  const auto found = extract_keypoints(make_heatmap(kps, {40, 40}, cfg), cfg);
  ASSERT_EQ(found.size(), 1u);
  EXPECT_NEAR(found[0].pos.x, 20.3, 1e-4);
  EXPECT_NEAR(found[0].pos.y, 15.75, 1e-4);
  cfg.subpixel = false;
  const auto coarse = extract_keypoints(make_heatmap(kps, {40, 40}, cfg), cfg);
  ASSERT_EQ(coarse.size(), 1u);
  EXPECT_EQ(coarse[0].pos, (Point2{20, 16}));
}

TEST(DetectConfigValidation, RejectsBadValues) {
  DetectConfig cfg;
  cfg.nms_window = 4;
  EXPECT_RETREG_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
  cfg = {};
  cfg.intensity_threshold = 1.0f;
  EXPECT_RETREG_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
  cfg = {};
  cfg.gaussian_sigma_px = 0.0;
  EXPECT_RETREG_ERROR(cfg.validate(), ErrorCode::InvalidArgument);
}

TEST(KeypointCsv, RoundTrip) {
  const auto dir = scratch_dir();
  const std::vector<Keypoint> kps{{{1.5, 2.25}, KeypointClass::Crossover, 0.5f},
                                  {{100.125, 0}, KeypointClass::Bifurcation, 0.875f}};
  write_keypoints_csv(dir / "k.csv", kps);
  EXPECT_EQ(read_keypoints_csv(dir / "k.csv"), kps);
}

TEST(HeatmapTensor, RoundTripThroughStackedTensor) {
  const std::vector<Keypoint> kps{{{5, 6}, KeypointClass::Crossover, 1.0f}, {{12, 3}, KeypointClass::Bifurcation, 1.0f}};
  const HeatmapSet hm = make_heatmap(kps, {20, 10}, DetectConfig{});
  const Tensor t = hm.to_tensor();
  EXPECT_EQ(t.dims, (std::vector<std::uint32_t>{3, 10, 20}));
  const HeatmapSet back = HeatmapSet::from_tensor(t);
  EXPECT_EQ(back.crossover, hm.crossover);
  EXPECT_EQ(back.bifurcation, hm.bifurcation);
  EXPECT_EQ(back.combined, hm.combined);
}

}  // namespace
}  // namespace retreg
