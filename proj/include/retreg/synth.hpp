#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "retreg/descriptors.hpp"
#include "retreg/geometry.hpp"
#include "retreg/image.hpp"
#include "retreg/keypoints.hpp"
#include "retreg/losses.hpp"
#include "retreg/metrics.hpp"
#include "retreg/tensor.hpp"

namespace retreg {

struct SynthConfig {
  int n_keypoints = 40;
  double overlap_frac = 1.0;  // fraction of fixed keypoints also visible in the moving view
  double desc_noise_sigma = 0.0;
  double outlier_frac = 0.0;  // fraction of shared moving descriptors replaced by unrelated ones
  std::uint64_t seed = 0;
  Size matching{256, 256};  // heatmaps and descriptor maps
  Size native{512, 512};    // everything else
  int desc_dim = 32;
  int n_control_points = 10;
  double min_separation_px = 16.0;  // at matching resolution
  double heatmap_sigma_px = 3.0;
  // Magnitude of the perspective terms of the planted transform (native pixels^-1).
  double projective = 5e-5;

  void validate() const;
};

struct SynthView {
  Image image;  // RGB, native resolution
  VesselMask mask;
  std::vector<Keypoint> keypoints;  // matching resolution
  HeatmapSet heatmaps;
  Tensor descriptors;  // [H, W, D] at matching resolution, zero away from keypoints
};

struct SynthPair {
  SynthView fixed;
  SynthView moving;
  Homography true_h;  // fixed -> moving, native resolution
  ControlPointSet cps;
  std::size_t shared_keypoints = 0;
  double overlap_frac = 0.0;
  double outlier_frac = 0.0;
  std::uint64_t seed = 0;
};

/// Plants keypoints and vessel-like strokes in a fixed view and observes them
/// through a random projective transform in a moving view. Fully determined
/// by the config.
SynthPair gen_synth_pair(const SynthConfig& cfg);

/// Writes every file of the pair under `dir`, named `<stem>_...`. Returns the pairing
/// CSV row fields in header order
/// (fixed, moving, category, heatmap_f, heatmap_m, desc_f, desc_m, mask_f, mask_m, control_points).
std::vector<std::string> export_synth_pair(const SynthPair& pair, const std::filesystem::path& dir,
                                           const std::string& stem, const std::string& category);

/// Exact average precision of one ranking: items sorted by ascending distance
/// (stable), precision averaged over the positives' ranks.
double brute_force_ap(std::span<const double> distances, std::span<const bool> positive);
/// brute_force_ap per anchor over the other samples, averaged over anchors;
/// the exact counterpart of fastap_score.
double brute_force_mean_ap(const EmbeddingSet& e);

/// Threshold sweep t = 0, step, ..., max_error with success meaning e <= t,
/// integrated with the trapezoid rule and normalized by max_error.
double sweep_auc_oracle(std::span<const std::optional<double>> errors, double step = 0.01,
                        double max_error = kRegistrationScoreMaxError);

/// i.i.d. N(0,1) raw embeddings for views x keypoints samples.
EmbeddingSet random_embeddings(std::size_t views, std::size_t keypoints, std::size_t dim, std::uint64_t seed);
/// A random unit base vector per keypoint plus N(0, noise_sigma^2) per view.
EmbeddingSet clustered_embeddings(std::size_t views, std::size_t keypoints, std::size_t dim, double noise_sigma,
                                  std::uint64_t seed);

}  // namespace retreg
