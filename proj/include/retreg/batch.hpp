#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include "retreg/geometry.hpp"
#include "retreg/image.hpp"
#include "retreg/keypoints.hpp"

namespace retreg {

/// Augmentation ranges. Angles are symmetric ranges (+/- value), in degrees.
struct AugmentConfig {
  double rotation_deg = 60.0;
  double translation_frac = 0.25;
  double scale_min = 0.75;
  double scale_max = 1.25;
  double shear_deg = 30.0;
  double hue_shift = 0.05;  // fraction of the hue circle
  double saturation_min = 0.9;
  double saturation_max = 1.1;
  double value_min = 0.9;
  double value_max = 1.1;
  double noise_sigma = 0.05;
  double noise_prob = 0.25;
  int n_views = 9;
  std::uint64_t seed = 0;

  void validate() const;
  /// Every range collapsed to its identity value; no photometric change.
  static AugmentConfig identity(int n_views = 9);
};

struct AffineParams {
  double rotation_deg = 0.0;
  double scale = 1.0;
  double shear_deg = 0.0;
  double tx = 0.0;
  double ty = 0.0;
};

AffineParams sample_affine_params(const AugmentConfig& cfg, Size frame, std::mt19937_64& rng);
/// centre * R * S * Sh * T * centre^-1
Homography compose_affine(const AffineParams& p, Point2 center);
Homography sample_affine(const AugmentConfig& cfg, Size frame, std::mt19937_64& rng);

/// HSV jitter plus, with probability noise_prob, additive Gaussian noise.
void apply_photometric(Image& img, const AugmentConfig& cfg, std::mt19937_64& rng);

/// One original view plus N augmented views whose keypoint lists are aligned:
/// index i in every view is the same physical keypoint.
struct MultiviewBatch {
  std::vector<Image> images;
  std::vector<Homography> view_transforms;  // view k+1 = transform k applied to the original
  std::vector<std::vector<Keypoint>> keypoints_per_view;

  std::size_t n_views() const { return view_transforms.size(); }
  std::size_t n_keypoints() const { return keypoints_per_view.empty() ? 0 : keypoints_per_view[0].size(); }
};

MultiviewBatch build_batch(const Image& img, std::span<const Keypoint> kps, const AugmentConfig& cfg);
/// As build_batch, with the geometric part of every view supplied by the caller.
MultiviewBatch build_batch_with_transforms(const Image& img, std::span<const Keypoint> kps,
                                           std::span<const Homography> transforms, const AugmentConfig& cfg);

/// PNG per view, keypoint CSV per view, and transforms.json.
void export_batch(const MultiviewBatch& batch, const std::filesystem::path& dir);

/// One term of the pairwise (image i, image j > i) losses.
struct PairTerm {
  std::size_t anchor = 0;
  std::size_t positive = 0;
  std::vector<std::size_t> candidates;  // (X_i u X_j) minus the anchor
};

struct ViewPairTerms {
  std::size_t i = 0;
  std::size_t j = 0;
  std::vector<PairTerm> terms;
};

/// Sample s = view * K + keypoint.
struct IndexSets {
  std::size_t views = 0;  // N + 1
  std::size_t keypoints = 0;
  std::vector<std::vector<std::size_t>> positives;  // other views of the same keypoint
  std::vector<std::vector<std::size_t>> others;     // every sample but the anchor
  std::vector<ViewPairTerms> view_pairs;

  std::size_t sample_count() const { return views * keypoints; }
  std::size_t sample_index(std::size_t view, std::size_t kp) const { return view * keypoints + kp; }
  std::size_t view_of(std::size_t s) const { return s / keypoints; }
  std::size_t keypoint_of(std::size_t s) const { return s % keypoints; }
};

IndexSets make_index_sets(std::size_t views, std::size_t keypoints);
IndexSets index_sets(const MultiviewBatch& batch);

}  // namespace retreg
