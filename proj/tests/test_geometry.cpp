#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "retreg/geometry.hpp"
#include "test_support.hpp"

namespace retreg {
namespace {

Homography random_homography(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> lin(-0.3, 0.3), tr(-20.0, 20.0), persp(-2e-4, 2e-4);
  Eigen::Matrix3d m;
  m << 1 + lin(rng), lin(rng), tr(rng), lin(rng), 1 + lin(rng), tr(rng), persp(rng), persp(rng), 1.0;
  return Homography(m);
}

std::vector<Point2> random_points(std::mt19937_64& rng, std::size_t n, double lo = 0, double hi = 200) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<Point2> pts(n);
  for (auto& p : pts) p = {u(rng), u(rng)};
  return pts;
}

std::vector<Correspondence> through(const Homography& h, std::span<const Point2> src) {
  std::vector<Correspondence> out;
  for (const auto& p : src) out.push_back({p, apply_homography(h, p)});
  return out;
}

TEST(ApplyHomography, Examples) {
  EXPECT_EQ(apply_homography(Homography::identity(), {10, 20}), (Point2{10, 20}));
  const Point2 s = apply_homography(Homography::scaling(2, 2), {3, 4});
  EXPECT_DOUBLE_EQ(s.x, 6);
  EXPECT_DOUBLE_EQ(s.y, 8);

  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = 0.001;
  const Point2 p = apply_homography(Homography(m), {100, 0});
  EXPECT_NEAR(p.x, 100.0 / 1.1, 1e-12);
  EXPECT_NEAR(p.x, 90.909, 1e-3);
  EXPECT_DOUBLE_EQ(p.y, 0.0);
}

TEST(ApplyHomography, DegenerateProjection) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(2, 0) = -0.01;  // w = 1 - 0.01 x vanishes at x = 100
  EXPECT_RETREG_ERROR(apply_homography(Homography(m), Point2{100, 5}), ErrorCode::DegenerateProjection);
}

TEST(ApplyHomography, InverseRoundTrip) {
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Homography h = random_homography(rng);
    const Homography inv = h.inverse();
    for (const auto& p : random_points(rng, 10)) {
      const Point2 back = apply_homography(inv, apply_homography(h, p));
      EXPECT_NEAR(back.x, p.x, 1e-8);
      EXPECT_NEAR(back.y, p.y, 1e-8);
    }
  }
}

TEST(HomographyType, NormalizedAndRejectsSingular) {
  Eigen::Matrix3d m;
  m << 2, 0, 4, 0, 2, 6, 0, 0, 2;
  const Homography h(m);
  EXPECT_DOUBLE_EQ(h(2, 2), 1.0);
  EXPECT_DOUBLE_EQ(h(0, 2), 2.0);
  EXPECT_RETREG_ERROR(Homography(Eigen::Matrix3d::Zero()), ErrorCode::SingularHomography);
  Eigen::Matrix3d rank2;
  rank2 << 1, 2, 3, 2, 4, 6, 0, 0, 1;
  EXPECT_RETREG_ERROR(Homography{rank2}, ErrorCode::SingularHomography);
}

TEST(Dlt, UnitSquareGivesIdentity) {
  const std::vector<Point2> sq{{0, 0}, {1, 0}, {1, 1}, {0, 1}};
  const Homography h = estimate_homography_dlt(through(Homography::identity(), sq));
  EXPECT_LT((h.matrix() - Eigen::Matrix3d::Identity()).norm(), 1e-10);
}

TEST(Dlt, RecoversGeneratorFromEightPoints) {
  std::mt19937_64 rng(2024);
  const Homography truth = random_homography(rng);
  const Homography est = estimate_homography_dlt(through(truth, random_points(rng, 8)));
  const double rel = (est.matrix() - truth.matrix()).norm() / truth.matrix().norm();
  EXPECT_LT(rel, 1e-6);
}

TEST(Dlt, ExactOnNoiseFreeInputsOf4To50Points) {
  std::mt19937_64 rng(99);
  std::uniform_int_distribution<int> n_dist(4, 50);
  for (int trial = 0; trial < 1000; ++trial) {
    const Homography truth = random_homography(rng);
    const auto corr = through(truth, random_points(rng, static_cast<std::size_t>(n_dist(rng))));
    const Homography est = estimate_homography_dlt(corr);
    double worst = 0.0;
    for (const auto& c : corr) worst = std::max(worst, distance(apply_homography(est, c.src), c.dst));
    ASSERT_LE(worst, 1e-6) << "trial " << trial;
  }
}

TEST(Dlt, ThreeCollinearIsDegenerate) {
  const std::vector<Point2> pts{{0, 0}, {1, 1}, {2, 2}, {0, 5}};
  EXPECT_RETREG_ERROR(estimate_homography_dlt(through(Homography::identity(), pts)),
                      ErrorCode::DegenerateConfiguration);
  const std::vector<Point2> coincident{{3, 3}, {3, 3}, {5, 1}, {0, 7}};
  EXPECT_RETREG_ERROR(estimate_homography_dlt(through(Homography::identity(), coincident)),
                      ErrorCode::DegenerateConfiguration);
}

TEST(Ransac, IdentityWithAllInliers) {
  std::mt19937_64 rng(5);
  const auto corr = through(Homography::identity(), random_points(rng, 20));
  const RansacResult r = ransac_homography(corr, RansacConfig{});
  EXPECT_EQ(r.inliers.size(), 20u);
  EXPECT_LT((r.model.matrix() - Eigen::Matrix3d::Identity()).norm(), 1e-8);
}

struct PlantedSet {
  Homography truth;
  std::vector<Correspondence> corr;
  std::vector<bool> is_inlier;
};

PlantedSet planted(std::uint64_t seed, std::size_t n_in, std::size_t n_out) {
  std::mt19937_64 rng(seed);
  PlantedSet s{random_homography(rng), {}, {}};
  s.corr = through(s.truth, random_points(rng, n_in));
  s.is_inlier.assign(n_in, true);
  std::uniform_real_distribution<double> u(0, 200);
  while (s.corr.size() < n_in + n_out) {
    Correspondence c{{u(rng), u(rng)}, {u(rng), u(rng)}};
    // A random target that happens to land near the true image is not an outlier.
    if (distance(apply_homography(s.truth, c.src), c.dst) < 10.0) continue;
    s.corr.push_back(c);
    s.is_inlier.push_back(false);
  }
  return s;
}

TEST(Ransac, PlantedModelRejectsAllOutliers) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const PlantedSet s = planted(seed, 70, 30);
    const RansacResult r = ransac_homography(s.corr, RansacConfig{.seed = seed});
    for (std::size_t idx : r.inliers) EXPECT_TRUE(s.is_inlier[idx]) << "seed " << seed << " idx " << idx;
    EXPECT_LT(corner_error(r.model, s.truth, {200, 200}), 0.5);
  }
}

TEST(Ransac, TooFewMatches) {
  const std::vector<Point2> pts{{0, 0}, {1, 0}, {0, 1}};
  EXPECT_RETREG_ERROR(ransac_homography(through(Homography::identity(), pts), RansacConfig{}),
                      ErrorCode::TooFewMatches);
}

TEST(Ransac, NoModelWhenInlierFloorUnreachable) {
  std::mt19937_64 rng(8);
  const auto corr = through(Homography::identity(), random_points(rng, 5));
  RansacConfig cfg;
  cfg.min_inliers = 6;
  EXPECT_RETREG_ERROR(ransac_homography(corr, cfg), ErrorCode::NoModelFound);
}

TEST(Ransac, PermutationInvariant) {
  const PlantedSet s = planted(17, 40, 25);
  const RansacResult base = ransac_homography(s.corr, RansacConfig{.seed = 3});
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> perm(s.corr.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<Correspondence> shuffled;
    for (auto i : perm) shuffled.push_back(s.corr[i]);
    const RansacResult r = ransac_homography(shuffled, RansacConfig{.seed = 3});
    EXPECT_EQ(r.model.row_major(), base.model.row_major());
    std::vector<std::size_t> mapped;
    for (auto i : r.inliers) mapped.push_back(perm[i]);
    std::sort(mapped.begin(), mapped.end());
    EXPECT_EQ(mapped, base.inliers);
  }
}

TEST(Ransac, MoreIterationsNeverLoseInliers) {
  // Noisy inliers make the inlier count depend on which sample wins.
  std::mt19937_64 rng(12);
  PlantedSet s = planted(12, 60, 60);
  std::normal_distribution<double> noise(0.0, 1.5);
  for (std::size_t i = 0; i < s.corr.size(); ++i)
    if (s.is_inlier[i]) s.corr[i].dst = {s.corr[i].dst.x + noise(rng), s.corr[i].dst.y + noise(rng)};
  std::size_t prev = 0;
  for (int iters : {1, 2, 5, 10, 20, 50, 100, 500, 2000}) {
    RansacConfig cfg{.seed = 1};
    cfg.max_iterations = iters;
    cfg.confidence = 1.0;
    std::size_t count = 0;
    try {
      count = ransac_homography(s.corr, cfg).inliers.size();
    } catch (const Error& e) {
      ASSERT_EQ(e.code(), ErrorCode::NoModelFound);
    }
    EXPECT_GE(count, prev) << "iterations " << iters;
    prev = count;
  }
  EXPECT_GT(prev, 40u);
}

Image delta_image(int w, int h, int x, int y) {
  Image img(w, h, 1);
  img.at(x, y) = 1.0f;
  return img;
}

TEST(Warp, IdentityIsPixelIdentical) {
  std::mt19937 rng(2);
  std::uniform_real_distribution<float> u(0, 1);
  Image img(31, 23, 3);
  for (auto& p : img.pixels) p = u(rng);
  EXPECT_EQ(warp_image(img, Homography::identity(), {31, 23}), img);
}

TEST(Warp, TranslationMovesDelta) {
  const Image out = warp_image(delta_image(20, 10, 4, 6), Homography::translation(5, 0), {20, 10});
  for (int y = 0; y < 10; ++y)
    for (int x = 0; x < 20; ++x) EXPECT_FLOAT_EQ(out.at(x, y), (x == 9 && y == 6) ? 1.0f : 0.0f);
}

TEST(Warp, OutOfSourceSamplesAreZero) {
  const Image img(10, 10, 1, 1.0f);
  const WarpResult r = warp_image_with_validity(img, Homography::translation(4, 0), {10, 10});
  for (int x = 0; x < 4; ++x) {
    EXPECT_EQ(r.image.at(x, 5), 0.0f);
    EXPECT_FALSE(r.valid.at(x, 5));
  }
  EXPECT_EQ(r.image.at(6, 5), 1.0f);
  EXPECT_TRUE(r.valid.at(6, 5));
}

TEST(Warp, RotationRoundTrip) {
  const int n = 64;
  Image img(n, n, 1);
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x)
      img.at(x, y) = 0.5f + 0.4f * static_cast<float>(std::sin(x * 0.21) * std::cos(y * 0.17));
  const double c = (n - 1) / 2.0;
  Eigen::Matrix3d rot;
  rot << 0, -1, 2 * c, 1, 0, 0, 0, 0, 1;  // 90 degrees about the centre, with a small shear composed in
  Eigen::Matrix3d shear = Eigen::Matrix3d::Identity();
  shear(0, 1) = 0.05;
  const Homography h(rot * shear);
  const Image there = warp_image(img, h, {n, n});
  const Image back = warp_image(there, h.inverse(), {n, n});
  double worst = 0.0;
  for (int y = 12; y < n - 12; ++y)
    for (int x = 12; x < n - 12; ++x) worst = std::max(worst, double(std::abs(back.at(x, y) - img.at(x, y))));
  EXPECT_LT(worst, 0.02);
}

TEST(Warp, SingularRejected) {
  Eigen::Matrix3d m;
  m << 1, 1, 0, 1, 1, 0, 0, 0, 1;
  EXPECT_THROW(warp_image(Image(4, 4, 1), Homography(m), {4, 4}), Error);
}

TEST(ScalePoints, Examples) {
  const std::vector<Point2> pts{{100, 100}};
  EXPECT_EQ(scale_points(pts, {565, 584}, {565, 584})[0], pts[0]);
  const Point2 s = scale_points(pts, {565, 584}, {2912, 2912})[0];
  EXPECT_NEAR(s.x, 100.0 * 2912 / 565, 1e-9);
  EXPECT_NEAR(s.y, 100.0 * 2912 / 584, 1e-9);
  EXPECT_NEAR(s.x, 515.398, 1e-3);
  EXPECT_NEAR(s.y, 498.630, 1e-3);
  EXPECT_TRUE(scale_points({}, {1, 1}, {2, 2}).empty());
  EXPECT_RETREG_ERROR(scale_points(pts, {0, 5}, {2, 2}), ErrorCode::ZeroDimension);
}

TEST(ScaleHomography, ConjugatesByResolutionChange) {
  std::mt19937_64 rng(6);
  const Homography h = random_homography(rng);
  const Size from{256, 256}, to{565, 584};
  const Homography hs = scale_homography(h, from, to);
  for (const auto& p : random_points(rng, 20, 0, 256)) {
    const Point2 direct = scale_points(std::vector<Point2>{apply_homography(h, p)}, from, to)[0];
    const Point2 via = apply_homography(hs, scale_points(std::vector<Point2>{p}, from, to)[0]);
    EXPECT_NEAR(direct.x, via.x, 1e-8);
    EXPECT_NEAR(direct.y, via.y, 1e-8);
  }
}

TEST(SanityCheck, AcceptsPlausibleRejectsImplausible) {
  const Size frame{200, 200};
  EXPECT_TRUE(passes_sanity_check(Homography::identity(), frame));
  EXPECT_TRUE(passes_sanity_check(Homography::translation(30, -10), frame));
  EXPECT_FALSE(passes_sanity_check(Homography::scaling(-1, 1), frame));     // reflection
  EXPECT_FALSE(passes_sanity_check(Homography::scaling(0.05, 0.05), frame));  // collapse
  EXPECT_FALSE(passes_sanity_check(Homography::scaling(20, 20), frame));
  Eigen::Matrix3d fold = Eigen::Matrix3d::Identity();
  fold(2, 0) = -0.008;  // horizon crosses the frame
  EXPECT_FALSE(passes_sanity_check(Homography(fold), frame));
}

TEST(CornerError, TranslationOffset) {
  EXPECT_NEAR(corner_error(Homography::translation(3, 4), Homography::identity(), {50, 50}), 5.0, 1e-12);
}

}  // namespace
}  // namespace retreg
