#pragma once

#include <filesystem>
#include <span>
#include <vector>

#include "retreg/geometry.hpp"
#include "retreg/tensor.hpp"

namespace retreg {

enum class KeypointClass { Crossover, Bifurcation };

inline constexpr std::array<KeypointClass, 2> kKeypointClasses{KeypointClass::Crossover,
                                                               KeypointClass::Bifurcation};

/// 'X' for crossovers, 'B' for bifurcations.
char class_code(KeypointClass c);
KeypointClass class_from_code(char code);

struct Keypoint {
  Point2 pos;
  KeypointClass cls = KeypointClass::Crossover;
  float score = 1.0f;

  bool operator==(const Keypoint&) const = default;
};

/// One [height, width] heatmap per class plus their per-pixel maximum.
struct HeatmapSet {
  Tensor crossover;
  Tensor bifurcation;
  Tensor combined;

  int width() const { return static_cast<int>(crossover.dims.at(1)); }
  int height() const { return static_cast<int>(crossover.dims.at(0)); }
  const Tensor& channel(KeypointClass c) const {
    return c == KeypointClass::Crossover ? crossover : bifurcation;
  }

  /// [3, height, width] in (crossover, bifurcation, combined) order.
  Tensor to_tensor() const;
  static HeatmapSet from_tensor(const Tensor& t);
};

struct DetectConfig {
  float intensity_threshold = 0.35f;
  int nms_window = 5;
  double gaussian_sigma_px = 3.0;
  // Log-parabola peak refinement; a no-op for integer-centred Gaussian peaks.
  bool subpixel = true;

  void validate() const;
};

HeatmapSet make_heatmap(std::span<const Keypoint> keypoints, Size dims, const DetectConfig& cfg);

double heatmap_mse(const HeatmapSet& pred, const HeatmapSet& truth);

/// Strict local maxima of each class channel at or above the threshold.
/// The combined channel is not consulted.
std::vector<Keypoint> extract_keypoints(const HeatmapSet& hm, const DetectConfig& cfg);

void write_keypoints_csv(const std::filesystem::path& path, std::span<const Keypoint> kps);
std::vector<Keypoint> read_keypoints_csv(const std::filesystem::path& path);

}  // namespace retreg
