#pragma once

#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "retreg/geometry.hpp"
#include "retreg/image.hpp"
#include "retreg/keypoints.hpp"

namespace retreg {

struct ControlPointSet {
  std::vector<std::pair<Point2, Point2>> pairs;  // (fixed, moving)
  std::vector<std::size_t> exclusions;
};

/// Mean distance between `h` applied to the moving control points and the
/// fixed control points, skipping excluded indices. `h` maps moving -> fixed.
double cp_error(const Homography& h, const ControlPointSet& cps);

inline constexpr double kRegistrationScoreMaxError = 25.0;

/// Area under the success-rate vs. error-threshold curve on (0, max_error],
/// normalized to [0,1]. Failed registrations (nullopt) contribute 0.
double registration_score(std::span<const std::optional<double>> errors,
                          double max_error = kRegistrationScoreMaxError);

struct ScoredMatch {
  Point2 fixed;
  Point2 moving;
  KeypointClass cls = KeypointClass::Crossover;
  double similarity = 0.0;
};

struct VtkrsPair {
  std::vector<ScoredMatch> matches;  // at the resolution of the control points
  ControlPointSet cps;
  std::uint64_t seed = 0;
};

struct VtkrsResult {
  int k_min = 3;
  int k_max = 25;
  std::vector<double> per_k;  // registration score at each k in [k_min, k_max]
  double score = 0.0;         // mean of per_k
};

/// Registration score recomputed with only the k most similar matches of each
/// class, for every k in [k_min, k_max].
VtkrsResult vtkrs(std::span<const VtkrsPair> pairs, const RansacConfig& ransac, int k_min = 3, int k_max = 25,
                  double max_error = kRegistrationScoreMaxError);

/// Top-k matches of each class by similarity (stable for ties).
std::vector<ScoredMatch> top_k_per_class(std::span<const ScoredMatch> matches, int k);

struct OverlapCounts {
  std::size_t a = 0;
  std::size_t b = 0;
  std::size_t intersection = 0;
  std::size_t union_ = 0;
};

OverlapCounts count_overlap(const VesselMask& a, const VesselMask& b);
/// Counts restricted to pixels where `region` is set.
OverlapCounts count_overlap(const VesselMask& a, const VesselMask& b, const VesselMask& region);

double dice(const OverlapCounts& c);
double iou(const OverlapCounts& c);
double iom(const OverlapCounts& c);
double dice(const VesselMask& a, const VesselMask& b);
double iou(const VesselMask& a, const VesselMask& b);
double iom(const VesselMask& a, const VesselMask& b);

struct SMConfig {
  double c1 = 0.01 * 0.01;
  double c2 = 0.03 * 0.03;
  double c3 = 0.03 * 0.03 / 2.0;
  double c4 = 1e-10;
  std::vector<int> window_sizes{11, 33, 55, 111};

  void validate() const;
};

struct WindowStats {
  double mean_x = 0.0, mean_y = 0.0;
  double var_x = 0.0, var_y = 0.0;
  double cov = 0.0;
};

/// Population moments of two equally sized windows.
WindowStats window_stats(std::span<const float> x, std::span<const float> y);

/// sigma_xy / (sigma_x sigma_y + c4), clamped to [-1, 1]. Constant windows give 0.
double structure_term(std::span<const float> x, std::span<const float> y, const SMConfig& cfg);
double structure_term(const WindowStats& s, const SMConfig& cfg);
/// The classical (sigma_xy + c3) / (sigma_x sigma_y + c3), which tends to 1 on flat windows.
double classical_structure_term(std::span<const float> x, std::span<const float> y, double c3);

/// Mean structure term over windows at one scale, sliding with stride
/// window/2. Only windows whose pixels are all valid (when `valid` is given)
/// contribute. Returns nullopt when no window qualifies.
std::optional<double> sm_at_scale(const Image& a, const Image& b, int window, const SMConfig& cfg,
                                  const VesselMask* valid = nullptr);
std::optional<double> ssim_at_scale(const Image& a, const Image& b, int window, const SMConfig& cfg,
                                    const VesselMask* valid = nullptr);

/// Mean over the configured scales of the per-scale mean. Inputs must be
/// single-channel and at least as large as the largest window. Scales with
/// no qualifying window are skipped; if none qualify the result is 0.
double sm_metric(const Image& a, const Image& b, const SMConfig& cfg, const VesselMask* valid = nullptr);
/// Luminance * contrast * modified structure, averaged like sm_metric.
double ssim_metric(const Image& a, const Image& b, const SMConfig& cfg, const VesselMask* valid = nullptr);

enum class Direction { HigherBetter, LowerBetter };

/// Re-expresses a mean over `registered` pairs as a mean over all `total`
/// pairs, scoring each failure as 0 (higher-better) or 1 (lower-better).
double normalize_report(double raw, std::size_t registered, std::size_t total, Direction direction);

/// Spearman rank correlation with average ranks for ties.
double spearman(std::span<const double> xs, std::span<const double> ys);
/// Kendall tau-b.
double kendall_tau(std::span<const double> xs, std::span<const double> ys);

}  // namespace retreg
