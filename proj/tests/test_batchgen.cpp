#include <gtest/gtest.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "retreg/batch.hpp"
#include "test_support.hpp"

namespace retreg {
namespace {

using testing::scratch_dir;

Image textured(int w, int h) {
  Image img(w, h, 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      img.at(x, y, 0) = 0.5f + 0.3f * float(std::sin(x * 0.3));
      img.at(x, y, 1) = 0.4f + 0.2f * float(std::cos(y * 0.2));
      img.at(x, y, 2) = 0.3f;
    }
  return img;
}

std::vector<Keypoint> grid_keypoints(int w, int h, int step) {
  std::vector<Keypoint> kps;
  for (int y = step; y < h - step; y += step)
    for (int x = step; x < w - step; x += step)
      kps.push_back({{double(x), double(y)}, (x / step) % 2 ? KeypointClass::Bifurcation : KeypointClass::Crossover});
  return kps;
}

TEST(SampleAffine, CollapsedRangesGiveIdentity) {
  std::mt19937_64 rng(1);
  const Homography h = sample_affine(AugmentConfig::identity(), {100, 80}, rng);
  EXPECT_LT((h.matrix() - Eigen::Matrix3d::Identity()).norm(), 1e-15);
}

TEST(SampleAffine, ThirtyDegreeRotationAboutCentre) {
  AffineParams p;
  p.rotation_deg = 30.0;
  const Point2 c{49.5, 39.5};
  const Point2 q = apply_homography(compose_affine(p, c), {c.x + 1.0, c.y});
  EXPECT_NEAR(q.x - c.x, std::sqrt(3.0) / 2.0, 1e-12);
  EXPECT_NEAR(q.y - c.y, 0.5, 1e-12);
  EXPECT_NEAR(q.x - c.x, 0.8660, 1e-4);
}

TEST(SampleAffine, ParametersStayInRange) {
  const AugmentConfig cfg;
  const Size frame{200, 120};
  std::mt19937_64 rng(2);
  double max_rot = 0, max_shear = 0;
  for (int i = 0; i < 10000; ++i) {
    const AffineParams p = sample_affine_params(cfg, frame, rng);
    ASSERT_LE(std::abs(p.rotation_deg), 60.0);
    ASSERT_LE(std::abs(p.shear_deg), 30.0);
    ASSERT_GE(p.scale, 0.75);
    ASSERT_LE(p.scale, 1.25);
    ASSERT_LE(std::abs(p.tx), 0.25 * frame.width);
    ASSERT_LE(std::abs(p.ty), 0.25 * frame.height);
    max_rot = std::max(max_rot, std::abs(p.rotation_deg));
    max_shear = std::max(max_shear, std::abs(p.shear_deg));
  }
  // The ranges are actually explored, not just respected.
  EXPECT_GT(max_rot, 59.0);
  EXPECT_GT(max_shear, 29.0);
}

TEST(BuildBatch, IdentityAugmentationCopiesOriginal) {
  const Image img = textured(64, 48);
  const auto kps = grid_keypoints(64, 48, 8);
  const MultiviewBatch b = build_batch(img, kps, AugmentConfig::identity(4));
  ASSERT_EQ(b.images.size(), 5u);
  for (const auto& view : b.images) EXPECT_EQ(view, img);
  for (const auto& list : b.keypoints_per_view) EXPECT_EQ(list, kps);
}

TEST(BuildBatch, ForcedTranslationDropsRightHalfEverywhere) {
  const int w = 64, h = 48;
  const Image img = textured(w, h);
  const auto kps = grid_keypoints(w, h, 6);
  const std::vector<Homography> ts{Homography::identity(), Homography::translation(0.5 * w, 0),
                                   Homography::identity()};
  const MultiviewBatch b = build_batch_with_transforms(img, kps, ts, AugmentConfig::identity(3));
  std::size_t expected = 0;
  for (const auto& k : kps) expected += (k.pos.x + 0.5 * w <= w - 1) ? 1 : 0;
  ASSERT_EQ(b.n_keypoints(), expected);
  ASSERT_LT(expected, kps.size());
  for (const auto& list : b.keypoints_per_view) {
    ASSERT_EQ(list.size(), expected);
    for (std::size_t i = 0; i < expected; ++i) EXPECT_LE(b.keypoints_per_view[0][i].pos.x, 0.5 * w - 1);
  }
}

TEST(BuildBatch, TooFewSurvivors) {
  const Image img = textured(40, 40);
  const std::vector<Keypoint> kps{{{35, 20}}, {{38, 10}}};
  const std::vector<Homography> ts{Homography::translation(10, 0)};
  EXPECT_RETREG_ERROR(build_batch_with_transforms(img, kps, ts, AugmentConfig::identity(1)),
                      ErrorCode::TooFewSurvivingKeypoints);
  EXPECT_RETREG_ERROR(build_batch(img, std::span(kps).first(1), AugmentConfig{}), ErrorCode::TooFewSurvivingKeypoints);
}

TEST(BuildBatch, KeypointsAlignedWithTransforms) {
  const Image img = textured(96, 96);
  AugmentConfig cfg;
  cfg.seed = 42;
  cfg.rotation_deg = 20;
  cfg.translation_frac = 0.05;
  const MultiviewBatch b = build_batch(img, grid_keypoints(96, 96, 8), cfg);
  ASSERT_EQ(b.n_views(), 9u);
  ASSERT_GE(b.n_keypoints(), 2u);
  for (std::size_t v = 0; v < b.n_views(); ++v)
    for (std::size_t i = 0; i < b.n_keypoints(); ++i) {
      const Point2 want = apply_homography(b.view_transforms[v], b.keypoints_per_view[0][i].pos);
      EXPECT_NEAR(b.keypoints_per_view[v + 1][i].pos.x, want.x, 1e-9);
      EXPECT_NEAR(b.keypoints_per_view[v + 1][i].pos.y, want.y, 1e-9);
      EXPECT_EQ(b.keypoints_per_view[v + 1][i].cls, b.keypoints_per_view[0][i].cls);
    }
}

TEST(BuildBatch, SeedDeterminesBatchExactly) {
  const Image img = textured(64, 64);
  AugmentConfig cfg;
  cfg.seed = 9;
  cfg.rotation_deg = 10;
  cfg.translation_frac = 0.02;
  cfg.noise_prob = 1.0;
  const auto kps = grid_keypoints(64, 64, 8);
  const MultiviewBatch a = build_batch(img, kps, cfg);
  const MultiviewBatch b = build_batch(img, kps, cfg);
  EXPECT_EQ(a.images, b.images);
  EXPECT_EQ(a.keypoints_per_view, b.keypoints_per_view);
  cfg.seed = 10;
  EXPECT_NE(build_batch(img, kps, cfg).images, a.images);
}

TEST(BuildBatch, ExportWritesEveryView) {
  const auto dir = scratch_dir();
  const Image img = textured(32, 32);
  const MultiviewBatch b = build_batch(img, grid_keypoints(32, 32, 8), AugmentConfig::identity(2));
  export_batch(b, dir);
  for (int v = 0; v < 3; ++v) {
    EXPECT_TRUE(std::filesystem::exists(dir / ("view_" + std::to_string(v) + ".png")));
    EXPECT_EQ(read_keypoints_csv(dir / ("view_" + std::to_string(v) + "_keypoints.csv")), b.keypoints_per_view[v]);
  }
  EXPECT_TRUE(std::filesystem::exists(dir / "transforms.json"));
}

TEST(IndexSets, Cardinalities) {
  const IndexSets s = make_index_sets(2, 2);
  EXPECT_EQ(s.sample_count(), 4u);
  for (std::size_t a = 0; a < 4; ++a) {
    EXPECT_EQ(s.positives[a].size(), 1u);
    EXPECT_EQ(s.others[a].size(), 3u);
  }

  const IndexSets t = make_index_sets(3, 3);
  for (const auto& vp : t.view_pairs)
    for (const auto& term : vp.terms) EXPECT_EQ(term.candidates.size(), 5u);

  const IndexSets big = make_index_sets(10, 20);
  for (const auto& o : big.others) EXPECT_EQ(o.size(), 199u);
  for (const auto& p : big.positives) EXPECT_EQ(p.size(), 9u);
}

TEST(IndexSets, MatchesExhaustiveEnumeration) {
  const std::size_t views = 3, K = 3;
  const IndexSets s = make_index_sets(views, K);
  // Samples enumerated as (view, keypoint) tuples, independent of the s = v*K + k encoding.
  std::vector<std::pair<std::size_t, std::size_t>> samples;
  for (std::size_t v = 0; v < views; ++v)
    for (std::size_t k = 0; k < K; ++k) samples.push_back({v, k});
  auto id = [&](std::pair<std::size_t, std::size_t> vk) {
    return std::size_t(std::find(samples.begin(), samples.end(), vk) - samples.begin());
  };

  for (std::size_t a = 0; a < samples.size(); ++a) {
    std::set<std::size_t> pos, oth;
    for (std::size_t b = 0; b < samples.size(); ++b) {
      if (b == a) continue;
      oth.insert(b);
      if (samples[b].second == samples[a].second) pos.insert(b);
    }
    EXPECT_EQ(std::set<std::size_t>(s.positives[a].begin(), s.positives[a].end()), pos);
    EXPECT_EQ(std::set<std::size_t>(s.others[a].begin(), s.others[a].end()), oth);
  }

  std::set<std::pair<std::size_t, std::size_t>> pairs_seen;
  for (const auto& vp : s.view_pairs) {
    ASSERT_LT(vp.i, vp.j);
    pairs_seen.insert({vp.i, vp.j});
    ASSERT_EQ(vp.terms.size(), K);
    for (std::size_t k = 0; k < K; ++k) {
      const auto& term = vp.terms[k];
      EXPECT_EQ(term.anchor, id({vp.i, k}));
      EXPECT_EQ(term.positive, id({vp.j, k}));
      std::set<std::size_t> cand;
      for (std::size_t q = 0; q < K; ++q) {
        cand.insert(id({vp.i, q}));
        cand.insert(id({vp.j, q}));
      }
      cand.erase(term.anchor);
      EXPECT_EQ(std::set<std::size_t>(term.candidates.begin(), term.candidates.end()), cand);
    }
  }
  EXPECT_EQ(pairs_seen.size(), views * (views - 1) / 2);
}

TEST(IndexSets, NegativesAreDetectedKeypoints) {
  const Image img = textured(64, 64);
  const MultiviewBatch b = build_batch(img, grid_keypoints(64, 64, 10), AugmentConfig::identity(3));
  const IndexSets s = index_sets(b);
  EXPECT_EQ(s.views, 4u);
  EXPECT_EQ(s.keypoints, b.n_keypoints());
  for (const auto& o : s.others)
    for (std::size_t idx : o) {
      ASSERT_LT(idx, s.sample_count());
      ASSERT_LT(s.keypoint_of(idx), b.keypoints_per_view[s.view_of(idx)].size());
    }
}

TEST(Photometric, StaysInUnitRange) {
  Image img = textured(32, 32);
  AugmentConfig cfg;
  cfg.noise_prob = 1.0;
  cfg.noise_sigma = 0.5;
  std::mt19937_64 rng(3);
  apply_photometric(img, cfg, rng);
  for (float v : img.pixels) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

}  // namespace
}  // namespace retreg
