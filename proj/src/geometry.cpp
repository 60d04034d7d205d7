#include "retreg/geometry.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <random>

#include "retreg/error.hpp"
#include "retreg/util.hpp"

namespace retreg {

namespace {

constexpr double kProjectionEps = 1e-12;

// Triangle-area test in normalized coordinates (mean distance sqrt(2)).
constexpr double kCollinearEps = 1e-9;

}  // namespace

Homography::Homography(const Eigen::Matrix3d& m) {
  if (!m.allFinite()) throw Error(ErrorCode::SingularHomography, "non-finite homography entries");
  if (std::abs(m(2, 2)) <= 1e-12 * m.cwiseAbs().maxCoeff()) {
    throw Error(ErrorCode::SingularHomography, "h33 vanishes; cannot normalize");
  }
  m_ = m / m(2, 2);
  if (std::abs(m_.determinant()) < 1e-14 * std::pow(m_.cwiseAbs().maxCoeff(), 3)) {
    throw Error(ErrorCode::SingularHomography, "homography is singular");
  }
}

Homography Homography::from_row_major(std::span<const double> values) {
  if (values.size() != 9) throw Error(ErrorCode::InvalidArgument, "homography needs 9 values");
  Eigen::Matrix3d m;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m(r, c) = values[3 * r + c];
  return Homography(m);
}

Homography Homography::translation(double tx, double ty) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 2) = tx;
  m(1, 2) = ty;
  return Homography(m);
}

Homography Homography::scaling(double sx, double sy) {
  Eigen::Matrix3d m = Eigen::Matrix3d::Identity();
  m(0, 0) = sx;
  m(1, 1) = sy;
  return Homography(m);
}

std::array<double, 9> Homography::row_major() const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) out[3 * r + c] = m_(r, c);
  return out;
}

Homography Homography::inverse() const { return Homography(m_.inverse()); }

Point2 apply_homography(const Homography& h, const Point2& p) {
  const auto& m = h.matrix();
  const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
  if (std::abs(w) < kProjectionEps) {
    throw Error(ErrorCode::DegenerateProjection, "point maps to infinity");
  }
  return {(m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w, (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w};
}

std::vector<Point2> apply_homography(const Homography& h, std::span<const Point2> pts) {
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back(apply_homography(h, p));
  return out;
}

namespace {

struct Normalization {
  Eigen::Matrix3d t = Eigen::Matrix3d::Identity();
  std::vector<Eigen::Vector2d> pts;
};

// Hartley normalization: centroid to the origin, mean distance sqrt(2).
Normalization normalize_points(std::span<const Correspondence> pairs, bool use_src) {
  Normalization n;
  const std::size_t count = pairs.size();
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& c : pairs) {
    const Point2& p = use_src ? c.src : c.dst;
    mean += Eigen::Vector2d(p.x, p.y);
  }
  mean /= static_cast<double>(count);
  double spread = 0.0;
  for (const auto& c : pairs) {
    const Point2& p = use_src ? c.src : c.dst;
    spread += (Eigen::Vector2d(p.x, p.y) - mean).norm();
  }
  spread /= static_cast<double>(count);
  if (spread < 1e-12) throw Error(ErrorCode::DegenerateConfiguration, "all points coincide");
  const double s = std::sqrt(2.0) / spread;
  n.t << s, 0, -s * mean.x(), 0, s, -s * mean.y(), 0, 0, 1;
  n.pts.reserve(count);
  for (const auto& c : pairs) {
    const Point2& p = use_src ? c.src : c.dst;
    n.pts.emplace_back(s * (p.x - mean.x()), s * (p.y - mean.y()));
  }
  return n;
}

bool collinear(const Eigen::Vector2d& a, const Eigen::Vector2d& b, const Eigen::Vector2d& c) {
  const Eigen::Vector2d u = b - a;
  const Eigen::Vector2d v = c - a;
  return std::abs(u.x() * v.y() - u.y() * v.x()) < kCollinearEps;
}

bool any_triple_collinear(const std::vector<Eigen::Vector2d>& p) {
  for (std::size_t i = 0; i < p.size(); ++i)
    for (std::size_t j = i + 1; j < p.size(); ++j)
      for (std::size_t k = j + 1; k < p.size(); ++k)
        if (collinear(p[i], p[j], p[k])) return true;
  return false;
}

bool all_collinear(const std::vector<Eigen::Vector2d>& p) {
  // Points are already centered; a rank-1 scatter matrix means a line.
  Eigen::Matrix2d scatter = Eigen::Matrix2d::Zero();
  for (const auto& q : p) scatter += q * q.transpose();
  scatter /= static_cast<double>(p.size());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> es(scatter);
  return es.eigenvalues()(0) < kCollinearEps;
}

}  // namespace

Homography estimate_homography_dlt(std::span<const Correspondence> pairs) {
  if (pairs.size() < 4) {
    throw Error(ErrorCode::DegenerateConfiguration, "need at least 4 correspondences");
  }
  const Normalization src = normalize_points(pairs, true);
  const Normalization dst = normalize_points(pairs, false);
  if (pairs.size() == 4) {
    if (any_triple_collinear(src.pts) || any_triple_collinear(dst.pts)) {
      throw Error(ErrorCode::DegenerateConfiguration, "three of four points are collinear");
    }
  } else if (all_collinear(src.pts) || all_collinear(dst.pts)) {
    throw Error(ErrorCode::DegenerateConfiguration, "points are collinear");
  }

  const Eigen::Index n = static_cast<Eigen::Index>(pairs.size());
  Eigen::MatrixXd a(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double x = src.pts[i].x(), y = src.pts[i].y();
    const double u = dst.pts[i].x(), v = dst.pts[i].y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  // For 4 points A is 8x9; pad to a square system so the full V is available.
  if (a.rows() < 9) {
    a.conservativeResize(9, Eigen::NoChange);
    a.row(8).setZero();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  if (sv(7) < 1e-10 * sv(0)) {
    throw Error(ErrorCode::RankDeficient, "DLT system has a multi-dimensional null space");
  }
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d denorm = dst.t.inverse() * hn * src.t;
  try {
    return Homography(denorm);
  } catch (const Error&) {
    throw Error(ErrorCode::RankDeficient, "estimated homography is singular");
  }
}

namespace {

std::optional<Homography> try_estimate(std::span<const Correspondence> pairs) {
  try {
    return estimate_homography_dlt(pairs);
  } catch (const Error&) {
    return std::nullopt;
  }
}

struct Consensus {
  std::vector<std::size_t> inliers;
  double sq_error = 0.0;
};

Consensus consensus(const Homography& h, std::span<const Correspondence> pts, double threshold) {
  Consensus c;
  const auto& m = h.matrix();
  const double thr2 = threshold * threshold;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const Point2& p = pts[i].src;
    const double w = m(2, 0) * p.x + m(2, 1) * p.y + m(2, 2);
    if (std::abs(w) < kProjectionEps) continue;
    const double dx = (m(0, 0) * p.x + m(0, 1) * p.y + m(0, 2)) / w - pts[i].dst.x;
    const double dy = (m(1, 0) * p.x + m(1, 1) * p.y + m(1, 2)) / w - pts[i].dst.y;
    const double e2 = dx * dx + dy * dy;
    if (e2 < thr2) {
      c.inliers.push_back(i);
      c.sq_error += e2;
    }
  }
  return c;
}

int required_iterations(std::size_t inliers, std::size_t total, double confidence) {
  const double w = static_cast<double>(inliers) / static_cast<double>(total);
  const double w4 = w * w * w * w;
  if (w4 >= 1.0) return 1;
  if (w4 <= 0.0) return std::numeric_limits<int>::max();
  const double n = std::log(1.0 - confidence) / std::log(1.0 - w4);
  if (!std::isfinite(n) || n > 1e9) return std::numeric_limits<int>::max();
  return static_cast<int>(std::ceil(n));
}

}  // namespace

RansacResult ransac_homography(std::span<const Correspondence> matches, const RansacConfig& cfg) {
  if (cfg.inlier_threshold_px <= 0.0 || cfg.max_iterations < 1) {
    throw Error(ErrorCode::InvalidArgument, "RANSAC threshold must be > 0 and iterations >= 1");
  }
  const std::size_t n = matches.size();
  if (n < 4) throw Error(ErrorCode::TooFewMatches, std::to_string(n) + " matches, need 4");

  // Canonical order makes sampling independent of the caller's list order.
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  auto key = [&](std::size_t i) {
    const auto& c = matches[i];
    return std::array<double, 4>{c.src.x, c.src.y, c.dst.x, c.dst.y};
  };
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
  std::vector<Correspondence> sorted;
  sorted.reserve(n);
  Fnv1a hash;
  for (std::size_t i : order) {
    sorted.push_back(matches[i]);
    for (double v : key(i)) hash.update(v);
  }

  std::mt19937_64 rng(cfg.seed ^ hash.digest());
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);

  std::optional<Homography> best_model;
  Consensus best;
  int limit = cfg.max_iterations;
  int iter = 0;
  std::array<Correspondence, 4> sample;
  for (; iter < limit; ++iter) {
    std::array<std::size_t, 4> idx{};
    for (int k = 0; k < 4; ++k) {
      std::size_t candidate;
      do {
        candidate = pick(rng);
      } while (std::find(idx.begin(), idx.begin() + k, candidate) != idx.begin() + k);
      idx[k] = candidate;
      sample[k] = sorted[candidate];
    }
    auto model = try_estimate(sample);
    if (!model) continue;
    if (cfg.hypothesis_filter && !cfg.hypothesis_filter(*model)) continue;
    Consensus c = consensus(*model, sorted, cfg.inlier_threshold_px);
    const bool better = c.inliers.size() > best.inliers.size() ||
                        (c.inliers.size() == best.inliers.size() && best_model && c.sq_error < best.sq_error);
    if (!best_model || better) {
      best = std::move(c);
      best_model = *model;
      limit = std::min(cfg.max_iterations,
                       std::max(iter + 1, required_iterations(best.inliers.size(), n, cfg.confidence)));
    }
  }

  if (!best_model || best.inliers.size() < std::max<std::size_t>(cfg.min_inliers, 4)) {
    throw Error(ErrorCode::NoModelFound, "no hypothesis reached the minimum inlier count");
  }

  std::vector<Correspondence> support;
  support.reserve(best.inliers.size());
  for (std::size_t i : best.inliers) support.push_back(sorted[i]);
  RansacResult result;
  result.model = try_estimate(support).value_or(*best_model);
  result.iterations = iter;
  for (std::size_t i : best.inliers) result.inliers.push_back(order[i]);
  std::sort(result.inliers.begin(), result.inliers.end());
  return result;
}

namespace {

template <typename Sink>
void inverse_map(const Homography& h, Size src_size, Size out_size, Sink&& sink) {
  const Eigen::Matrix3d inv = h.inverse().matrix();
  const double max_x = src_size.width - 1;
  const double max_y = src_size.height - 1;
  constexpr double tol = 1e-9;
  for (int y = 0; y < out_size.height; ++y) {
    for (int x = 0; x < out_size.width; ++x) {
      const double w = inv(2, 0) * x + inv(2, 1) * y + inv(2, 2);
      if (std::abs(w) < kProjectionEps) continue;
      double sx = (inv(0, 0) * x + inv(0, 1) * y + inv(0, 2)) / w;
      double sy = (inv(1, 0) * x + inv(1, 1) * y + inv(1, 2)) / w;
      if (sx < -tol || sy < -tol || sx > max_x + tol || sy > max_y + tol) continue;
      sx = std::clamp(sx, 0.0, max_x);
      sy = std::clamp(sy, 0.0, max_y);
      const int x0 = static_cast<int>(std::floor(sx));
      const int y0 = static_cast<int>(std::floor(sy));
      const int x1 = std::min(x0 + 1, src_size.width - 1);
      const int y1 = std::min(y0 + 1, src_size.height - 1);
      sink(x, y, x0, y0, x1, y1, sx - x0, sy - y0);
    }
  }
}

}  // namespace

WarpResult warp_image_with_validity(const Image& img, const Homography& h, Size out_size) {
  if (out_size.width <= 0 || out_size.height <= 0) throw Error(ErrorCode::ZeroDimension, "output size");
  WarpResult r{Image(out_size.width, out_size.height, img.channels), VesselMask(out_size.width, out_size.height)};
  inverse_map(h, {img.width, img.height}, out_size,
              [&](int x, int y, int x0, int y0, int x1, int y1, double fx, double fy) {
                for (int c = 0; c < img.channels; ++c) {
                  const double top = (1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c);
                  const double bottom = (1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c);
                  r.image.at(x, y, c) = static_cast<float>((1 - fy) * top + fy * bottom);
                }
                r.valid.set(x, y, true);
              });
  return r;
}

Image warp_image(const Image& img, const Homography& h, Size out_size) {
  return warp_image_with_validity(img, h, out_size).image;
}

VesselMask warp_mask(const VesselMask& mask, const Homography& h, Size out_size) {
  if (out_size.width <= 0 || out_size.height <= 0) throw Error(ErrorCode::ZeroDimension, "output size");
  VesselMask out(out_size.width, out_size.height);
  inverse_map(h, {mask.width, mask.height}, out_size,
              [&](int x, int y, int x0, int y0, int x1, int y1, double fx, double fy) {
                const double top = (1 - fx) * mask.at(x0, y0) + fx * mask.at(x1, y0);
                const double bottom = (1 - fx) * mask.at(x0, y1) + fx * mask.at(x1, y1);
                out.set(x, y, (1 - fy) * top + fy * bottom >= 0.5);
              });
  return out;
}

std::vector<Point2> scale_points(std::span<const Point2> pts, Size from, Size to) {
  if (from.width <= 0 || from.height <= 0 || to.width <= 0 || to.height <= 0) {
    throw Error(ErrorCode::ZeroDimension, "sizes must be positive");
  }
  const double sx = static_cast<double>(to.width) / from.width;
  const double sy = static_cast<double>(to.height) / from.height;
  std::vector<Point2> out;
  out.reserve(pts.size());
  for (const auto& p : pts) out.push_back({p.x * sx, p.y * sy});
  return out;
}

Homography scale_homography(const Homography& h, Size from, Size to) {
  if (from.width <= 0 || from.height <= 0 || to.width <= 0 || to.height <= 0) {
    throw Error(ErrorCode::ZeroDimension, "sizes must be positive");
  }
  const Homography s = Homography::scaling(static_cast<double>(to.width) / from.width,
                                           static_cast<double>(to.height) / from.height);
  return s * h * s.inverse();
}

bool passes_sanity_check(const Homography& h, Size frame) {
  const Eigen::Matrix2d lin = h.matrix().topLeftCorner<2, 2>();
  if (lin.determinant() <= 0.0) return false;
  Eigen::JacobiSVD<Eigen::Matrix2d> svd(lin);
  const auto& sv = svd.singularValues();
  if (sv(1) < 0.1 || sv(0) > 10.0) return false;

  const double w = frame.width - 1, hgt = frame.height - 1;
  const std::array<Point2, 4> corners{{{0, 0}, {w, 0}, {w, hgt}, {0, hgt}}};
  std::array<Point2, 4> q;
  const auto& m = h.matrix();
  for (int i = 0; i < 4; ++i) {
    const double z = m(2, 0) * corners[i].x + m(2, 1) * corners[i].y + m(2, 2);
    if (z <= kProjectionEps) return false;
    q[i] = apply_homography(h, corners[i]);
  }
  int sign = 0;
  for (int i = 0; i < 4; ++i) {
    const Point2& a = q[i];
    const Point2& b = q[(i + 1) % 4];
    const Point2& c = q[(i + 2) % 4];
    const double cross = (b.x - a.x) * (c.y - b.y) - (b.y - a.y) * (c.x - b.x);
    if (std::abs(cross) < 1e-12) return false;
    const int s = cross > 0 ? 1 : -1;
    if (sign == 0) sign = s;
    if (s != sign) return false;
  }
  return true;
}

double corner_error(const Homography& estimate, const Homography& truth, Size frame) {
  const double w = frame.width - 1, hgt = frame.height - 1;
  const std::array<Point2, 4> corners{{{0, 0}, {w, 0}, {w, hgt}, {0, hgt}}};
  double total = 0.0;
  for (const auto& c : corners) total += distance(apply_homography(estimate, c), apply_homography(truth, c));
  return total / 4.0;
}

}  // namespace retreg
