#pragma once

#include <Eigen/Core>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "retreg/image.hpp"

namespace retreg {

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  bool operator==(const Point2&) const = default;
};

inline double distance(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

struct Size {
  int width = 0;
  int height = 0;

  bool operator==(const Size&) const = default;
};

/// A source -> target point pair.
struct Correspondence {
  Point2 src;
  Point2 dst;
};

/// 3x3 projective transform, normalized so that h(2,2) == 1.
class Homography {
 public:
  Homography() : m_(Eigen::Matrix3d::Identity()) {}
  /// Throws SingularHomography when m(2,2) vanishes or m is singular.
  explicit Homography(const Eigen::Matrix3d& m);

  static Homography identity() { return {}; }
  static Homography from_row_major(std::span<const double> values);
  static Homography translation(double tx, double ty);
  static Homography scaling(double sx, double sy);

  const Eigen::Matrix3d& matrix() const { return m_; }
  double operator()(int r, int c) const { return m_(r, c); }
  std::array<double, 9> row_major() const;

  Homography inverse() const;
  /// (a * b)(p) == a(b(p))
  friend Homography operator*(const Homography& a, const Homography& b) {
    return Homography(a.m_ * b.m_);
  }

 private:
  Eigen::Matrix3d m_;
};

/// Throws DegenerateProjection when the homogeneous scale is ~0.
Point2 apply_homography(const Homography& h, const Point2& p);
std::vector<Point2> apply_homography(const Homography& h, std::span<const Point2> pts);

/// Least-squares DLT on Hartley-normalized coordinates. Exact for >= 4
/// noise-free correspondences in general position.
Homography estimate_homography_dlt(std::span<const Correspondence> pairs);

struct RansacConfig {
  double inlier_threshold_px = 3.0;
  int max_iterations = 2000;
  std::uint64_t seed = 0;
  double confidence = 0.999;
  // A hypothesis only counts as a model when it explains at least this many matches.
  std::size_t min_inliers = 4;
  // Optional plausibility test applied to each minimal-sample hypothesis.
  std::function<bool(const Homography&)> hypothesis_filter;
};

struct RansacResult {
  Homography model;
  std::vector<std::size_t> inliers;  // ascending indices into the input list
  int iterations = 0;
};

/// The RNG stream is seeded from cfg.seed XOR a hash of the sorted match
/// content, and sampling runs over the sorted list, so the result does not
/// depend on the order of `matches`.
RansacResult ransac_homography(std::span<const Correspondence> matches, const RansacConfig& cfg);

/// Inverse-mapped bilinear resampling; `h` maps source pixel coords to output
/// pixel coords. Samples falling outside the source are 0.
Image warp_image(const Image& img, const Homography& h, Size out_size);

struct WarpResult {
  Image image;
  VesselMask valid;  // true where the output pixel maps inside the source
};
WarpResult warp_image_with_validity(const Image& img, const Homography& h, Size out_size);
VesselMask warp_mask(const VesselMask& mask, const Homography& h, Size out_size);

std::vector<Point2> scale_points(std::span<const Point2> pts, Size from, Size to);
/// Re-expresses a transform estimated between frames of size `from` for frames of size `to`.
Homography scale_homography(const Homography& h, Size from, Size to);

/// Plausibility test for an estimated registration: positive orientation,
/// singular values of the linear part within [0.1, 10], and the transformed
/// frame stays a convex quadrilateral in front of the camera.
bool passes_sanity_check(const Homography& h, Size frame);

/// Mean displacement between the frame corners mapped by `estimate` and by `truth`.
double corner_error(const Homography& estimate, const Homography& truth, Size frame);

}  // namespace retreg
