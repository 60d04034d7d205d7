#include <gtest/gtest.h>

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "retreg/descriptors.hpp"
#include "test_support.hpp"

namespace retreg {
namespace {

using testing::scratch_dir;

TEST(L2Normalize, Examples) {
  const std::vector<float> v{3, 4};
  const Descriptor d = l2_normalize(v);
  EXPECT_NEAR(d.v[0], 0.6, 1e-7);
  EXPECT_NEAR(d.v[1], 0.8, 1e-7);

  const std::vector<float> unit{0, 1, 0};
  EXPECT_EQ(l2_normalize(unit).v, unit);

  EXPECT_RETREG_ERROR(l2_normalize(std::vector<float>{0, 0}), ErrorCode::ZeroVector);
}

TEST(L2Normalize, RandomVectorsHaveUnitNorm) {
  std::mt19937 rng(1);
  std::normal_distribution<float> n(0, 3);
  for (int t = 0; t < 200; ++t) {
    std::vector<float> v(128);
    for (auto& x : v) x = n(rng);
    double s = 0;
    for (float x : l2_normalize(v).v) s += double(x) * x;
    EXPECT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
}

TEST(CosineSim, Examples) {
  const Descriptor a = l2_normalize(std::vector<float>{1, 2, 2});
  Descriptor neg = a;
  for (auto& x : neg.v) x = -x;
  EXPECT_NEAR(cosine_sim(a, a), 1.0, 1e-7);
  EXPECT_NEAR(cosine_sim(a, neg), -1.0, 1e-7);
  EXPECT_NEAR(cosine_sim(l2_normalize(std::vector<float>{1, 0}), l2_normalize(std::vector<float>{0, 1})), 0.0, 0.0);
}

Tensor ramp_map(int h, int w, int d) {
  Tensor t({std::uint32_t(h), std::uint32_t(w), std::uint32_t(d)});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int k = 0; k < d; ++k) t.at(y, x, k) = 1.0f + float(y * 100 + x * 10 + k);
  return t;
}

TEST(SampleDescriptors, Examples) {
  const Tensor map = ramp_map(6, 8, 3);
  const std::vector<Keypoint> kps{{{0, 0}, KeypointClass::Crossover, 1.0f},
                                  {{4.4, 2.6}, KeypointClass::Bifurcation, 1.0f},
                                  {{4.4, 2.6}, KeypointClass::Bifurcation, 1.0f}};
  const auto descs = sample_descriptors(map, kps);
  const std::vector<float> origin{map.at(0, 0, 0), map.at(0, 0, 1), map.at(0, 0, 2)};
  EXPECT_EQ(descs[0].v, l2_normalize(origin).v);
  // Nearest pixel of (4.4, 2.6) is column 4, row 3.
  const std::vector<float> px{map.at(3, 4, 0), map.at(3, 4, 1), map.at(3, 4, 2)};
  EXPECT_EQ(descs[1].v, l2_normalize(px).v);
  EXPECT_EQ(descs[1].v, descs[2].v);

  const std::vector<Keypoint> outside{{{9, 0}, KeypointClass::Crossover, 1.0f}};
  EXPECT_RETREG_ERROR(sample_descriptors(map, outside), ErrorCode::OutOfBounds);
}

TEST(MutualArgmax, Examples) {
  Eigen::MatrixXd a(2, 2);
  a << 0.9, 0.1, 0.2, 0.8;
  const auto m = mutual_argmax(a);
  ASSERT_EQ(m.size(), 2u);
  EXPECT_EQ(m[0], (std::pair<Eigen::Index, Eigen::Index>{0, 0}));
  EXPECT_EQ(m[1], (std::pair<Eigen::Index, Eigen::Index>{1, 1}));

  Eigen::MatrixXd b(2, 2);
  b << 0.9, 0.85, 0.95, 0.1;
  // Row 1 and column 0 are each other's best, so (1,0) is mutual; row 0 and column 1 are not.
  const auto mb = mutual_argmax(b);
  ASSERT_EQ(mb.size(), 1u);
  EXPECT_EQ(mb[0], (std::pair<Eigen::Index, Eigen::Index>{1, 0}));
}

TEST(MutualArgmax, TiesResolveToLowerIndex) {
  Eigen::MatrixXd s(2, 2);
  s << 0.5, 0.5, 0.5, 0.5;
  const auto m = mutual_argmax(s);
  ASSERT_EQ(m.size(), 1u);
  EXPECT_EQ(m[0], (std::pair<Eigen::Index, Eigen::Index>{0, 0}));
}

std::vector<Descriptor> random_descs(std::mt19937_64& rng, std::size_t n, std::size_t dim) {
  std::normal_distribution<float> g(0, 1);
  std::vector<Descriptor> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(dim);
    for (auto& x : v) x = g(rng);
    out.push_back(l2_normalize(v));
  }
  return out;
}

std::vector<Keypoint> random_kps(std::mt19937_64& rng, std::size_t n) {
  std::uniform_int_distribution<int> c(0, 1);
  std::vector<Keypoint> out(n);
  for (std::size_t i = 0; i < n; ++i)
    out[i] = {{double(i), 0.0}, c(rng) ? KeypointClass::Bifurcation : KeypointClass::Crossover, 1.0f};
  return out;
}

// Direct restatement of the mutual-best rule with a lower-index tie break.
std::set<std::pair<std::size_t, std::size_t>> brute_mutual(std::span<const Keypoint> fk, std::span<const Descriptor> fd,
                                                           std::span<const Keypoint> mk, std::span<const Descriptor> md) {
  std::set<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t i = 0; i < fk.size(); ++i) {
    std::optional<std::size_t> best_j;
    for (std::size_t j = 0; j < mk.size(); ++j)
      if (mk[j].cls == fk[i].cls && (!best_j || cosine_sim(fd[i], md[j]) > cosine_sim(fd[i], md[*best_j]))) best_j = j;
    if (!best_j) continue;
    std::optional<std::size_t> best_i;
    for (std::size_t i2 = 0; i2 < fk.size(); ++i2)
      if (fk[i2].cls == fk[i].cls && (!best_i || cosine_sim(fd[i2], md[*best_j]) > cosine_sim(fd[*best_i], md[*best_j])))
        best_i = i2;
    if (best_i == i) out.insert({i, *best_j});
  }
  return out;
}

TEST(MatchMutual, ClassConstraint) {
  const std::vector<Keypoint> fk{{{0, 0}, KeypointClass::Crossover, 1.0f}};
  const std::vector<Keypoint> mk{{{0, 0}, KeypointClass::Bifurcation, 1.0f}};
  const std::vector<Descriptor> d{l2_normalize(std::vector<float>{1, 0})};
  EXPECT_TRUE(match_mutual(fk, d, mk, d).empty());
}

TEST(MatchMutual, AgreesWithBruteForceAndIsSymmetricAndInjective) {
  std::mt19937_64 rng(31);
  std::uniform_int_distribution<std::size_t> n(0, 20);
  for (int trial = 0; trial < 300; ++trial) {
    const auto fk = random_kps(rng, n(rng));
    const auto mk = random_kps(rng, n(rng));
    const auto fd = random_descs(rng, fk.size(), 8);
    const auto md = random_descs(rng, mk.size(), 8);

    const auto matches = match_mutual(fk, fd, mk, md);
    std::set<std::pair<std::size_t, std::size_t>> got, got_swapped;
    std::set<std::size_t> used_f, used_m;
    for (const auto& m : matches) {
      got.insert({m.fixed_idx, m.moving_idx});
      EXPECT_TRUE(used_f.insert(m.fixed_idx).second);
      EXPECT_TRUE(used_m.insert(m.moving_idx).second);
      EXPECT_EQ(m.cls, fk[m.fixed_idx].cls);
      EXPECT_NEAR(m.similarity, cosine_sim(fd[m.fixed_idx], md[m.moving_idx]), 1e-12);
    }
    ASSERT_EQ(got, brute_mutual(fk, fd, mk, md)) << "trial " << trial;
    for (const auto& m : match_mutual(mk, md, fk, fd)) got_swapped.insert({m.moving_idx, m.fixed_idx});
    EXPECT_EQ(got, got_swapped);
  }
}

TEST(MatchMutual, AddingAKeypointNeverYieldsNonMutualPairs) {
  std::mt19937_64 rng(45);
  for (int trial = 0; trial < 100; ++trial) {
    auto fk = random_kps(rng, 10);
    auto fd = random_descs(rng, 10, 6);
    const auto mk = random_kps(rng, 12);
    const auto md = random_descs(rng, 12, 6);
    fk.push_back(random_kps(rng, 1)[0]);
    fd.push_back(random_descs(rng, 1, 6)[0]);
    std::set<std::pair<std::size_t, std::size_t>> got;
    for (const auto& m : match_mutual(fk, fd, mk, md)) got.insert({m.fixed_idx, m.moving_idx});
    EXPECT_EQ(got, brute_mutual(fk, fd, mk, md));
  }
}

TEST(MatchCsv, RoundTrip) {
  const auto dir = scratch_dir();
  const std::vector<Match> ms{{0, 3, KeypointClass::Crossover, 0.75}, {2, 1, KeypointClass::Bifurcation, -0.125}};
  write_matches_csv(dir / "m.csv", ms);
  EXPECT_EQ(read_matches_csv(dir / "m.csv"), ms);
}

}  // namespace
}  // namespace retreg
