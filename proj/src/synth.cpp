#include "retreg/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <numeric>
#include <random>

#include "retreg/batch.hpp"
#include "retreg/error.hpp"
#include "retreg/util.hpp"

namespace retreg {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr int kPlacementAttempts = 20000;
constexpr double kBorderMargin = 8.0;  // matching-resolution pixels

// Independent RNG streams, so that changing one part of the generator does
// not reshuffle the others.
enum Stream : std::uint64_t {
  kTransform = 1,
  kKeypoints,
  kClasses,
  kStrokes,
  kDescriptors,
  kOutliers,
  kControlPoints,
};

std::mt19937_64 stream_rng(std::uint64_t seed, Stream s) { return std::mt19937_64(mix_seed(seed, s)); }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

bool inside(const Point2& p, Size frame, double margin) {
  return p.x >= margin && p.y >= margin && p.x <= frame.width - 1 - margin && p.y <= frame.height - 1 - margin;
}

bool far_from_all(const Point2& p, std::span<const Point2> others, double min_dist) {
  return std::all_of(others.begin(), others.end(), [&](const Point2& o) { return distance(p, o) >= min_dist; });
}

Homography sample_true_homography(const SynthConfig& cfg) {
  auto rng = stream_rng(cfg.seed, kTransform);
  AugmentConfig aug;
  const Homography affine = sample_affine(aug, cfg.native, rng);
  Eigen::Matrix3d persp = Eigen::Matrix3d::Identity();
  persp(2, 0) = uniform(rng, -cfg.projective, cfg.projective);
  persp(2, 1) = uniform(rng, -cfg.projective, cfg.projective);
  const Homography centre = Homography::translation((cfg.native.width - 1) / 2.0, (cfg.native.height - 1) / 2.0);
  return centre * Homography(persp) * centre.inverse() * affine;
}

// Integer position in `frame` satisfying `accept`, away from `taken`.
template <typename Accept>
Point2 place_point(std::mt19937_64& rng, Size frame, std::span<const Point2> taken, double min_dist,
                   Accept&& accept) {
  std::uniform_int_distribution<int> ux(static_cast<int>(kBorderMargin),
                                        frame.width - 1 - static_cast<int>(kBorderMargin));
  std::uniform_int_distribution<int> uy(static_cast<int>(kBorderMargin),
                                        frame.height - 1 - static_cast<int>(kBorderMargin));
  for (int attempt = 0; attempt < kPlacementAttempts; ++attempt) {
    const Point2 p{static_cast<double>(ux(rng)), static_cast<double>(uy(rng))};
    if (far_from_all(p, taken, min_dist) && accept(p)) return p;
  }
  throw Error(ErrorCode::InfeasibleOverlap, "cannot place keypoints with the requested overlap");
}

struct Stroke {
  std::array<Point2, 4> ctrl;  // cubic Bezier, native pixels
  double width = 3.0;
};

Point2 bezier(const Stroke& s, double t) {
  const double u = 1.0 - t;
  const double b0 = u * u * u, b1 = 3 * u * u * t, b2 = 3 * u * t * t, b3 = t * t * t;
  return {b0 * s.ctrl[0].x + b1 * s.ctrl[1].x + b2 * s.ctrl[2].x + b3 * s.ctrl[3].x,
          b0 * s.ctrl[0].y + b1 * s.ctrl[1].y + b2 * s.ctrl[2].y + b3 * s.ctrl[3].y};
}

// Branches radiating from a junction: four for a crossover, three for a bifurcation.
std::vector<Stroke> junction_strokes(const Point2& centre, KeypointClass cls, std::mt19937_64& rng) {
  const int branches = cls == KeypointClass::Crossover ? 4 : 3;
  const double base = uniform(rng, 0.0, 2.0 * kPi);
  std::vector<Stroke> out;
  for (int b = 0; b < branches; ++b) {
    const double angle = base + 2.0 * kPi * b / branches + uniform(rng, -0.3, 0.3);
    const double len = uniform(rng, 25.0, 60.0);
    const double bend = uniform(rng, -0.4, 0.4);
    Stroke s;
    s.width = uniform(rng, 2.0, 5.0);
    for (int i = 0; i < 4; ++i) {
      const double a = angle + bend * i / 3.0;
      const double r = len * i / 3.0;
      s.ctrl[i] = {centre.x + r * std::cos(a), centre.y + r * std::sin(a)};
    }
    out.push_back(s);
  }
  return out;
}

Stroke map_stroke(const Stroke& s, const Homography& h) {
  Stroke out = s;
  for (auto& p : out.ctrl) p = apply_homography(h, p);
  return out;
}

void rasterize(const Stroke& s, VesselMask& mask) {
  double len = 0.0;
  for (int i = 0; i < 3; ++i) len += distance(s.ctrl[i], s.ctrl[i + 1]);
  const int steps = std::max(2, static_cast<int>(std::ceil(len * 2.0)));
  const double r = s.width / 2.0;
  const int ri = static_cast<int>(std::ceil(r));
  for (int k = 0; k <= steps; ++k) {
    const Point2 c = bezier(s, static_cast<double>(k) / steps);
    const int cx = static_cast<int>(std::lround(c.x));
    const int cy = static_cast<int>(std::lround(c.y));
    for (int y = cy - ri; y <= cy + ri; ++y) {
      if (y < 0 || y >= mask.height) continue;
      for (int x = cx - ri; x <= cx + ri; ++x) {
        if (x < 0 || x >= mask.width) continue;
        if ((x - c.x) * (x - c.x) + (y - c.y) * (y - c.y) <= r * r) mask.set(x, y, true);
      }
    }
  }
}

// Smooth background shading defined over the whole fixed-view plane.
double background(const Point2& p) {
  return 0.55 + 0.12 * std::sin(p.x / 37.0) * std::cos(p.y / 53.0) + 0.08 * std::cos((p.x + p.y) / 71.0);
}

// `to_world` maps a pixel of this view to fixed-view native coordinates.
Image render_view(const VesselMask& mask, const Homography& to_world) {
  Image img(mask.width, mask.height, 3);
  for (int y = 0; y < mask.height; ++y) {
    for (int x = 0; x < mask.width; ++x) {
      const double g = mask.at(x, y) ? 0.22 : background(apply_homography(to_world, {double(x), double(y)}));
      img.at(x, y, 0) = static_cast<float>(0.95 * g);
      img.at(x, y, 1) = static_cast<float>(0.60 * g);
      img.at(x, y, 2) = static_cast<float>(0.35 * g);
    }
  }
  return img;
}

Descriptor random_unit(std::mt19937_64& rng, int dim) {
  std::normal_distribution<float> g;
  std::vector<float> v(static_cast<std::size_t>(dim));
  while (true) {
    for (auto& x : v) x = g(rng);
    const double n2 = std::inner_product(v.begin(), v.end(), v.begin(), 0.0);
    if (n2 > 1e-6) return l2_normalize(v);
  }
}

Descriptor perturb(const Descriptor& d, double sigma, std::mt19937_64& rng) {
  if (sigma <= 0.0) return d;
  std::normal_distribution<double> g(0.0, sigma);
  std::vector<float> v(d.v);
  for (auto& x : v) x = static_cast<float>(x + g(rng));
  return l2_normalize(v);
}

Tensor descriptor_map(Size frame, int dim, std::span<const Keypoint> kps, std::span<const Descriptor> descs) {
  Tensor t({static_cast<std::uint32_t>(frame.height), static_cast<std::uint32_t>(frame.width),
            static_cast<std::uint32_t>(dim)});
  for (std::size_t i = 0; i < kps.size(); ++i) {
    const int cx = static_cast<int>(std::lround(kps[i].pos.x));
    const int cy = static_cast<int>(std::lround(kps[i].pos.y));
    for (int y = std::max(0, cy - 1); y <= std::min(frame.height - 1, cy + 1); ++y)
      for (int x = std::max(0, cx - 1); x <= std::min(frame.width - 1, cx + 1); ++x)
        for (int k = 0; k < dim; ++k) t.at(y, x, k) = descs[i].v[k];
  }
  return t;
}

}  // namespace

void SynthConfig::validate() const {
  if (n_keypoints < 4) throw Error(ErrorCode::InvalidArgument, "need at least 4 keypoints");
  if (!(overlap_frac >= 0.0 && overlap_frac <= 1.0))
    throw Error(ErrorCode::InfeasibleOverlap, "overlap fraction must lie in [0,1]");
  if (!(outlier_frac >= 0.0 && outlier_frac <= 1.0))
    throw Error(ErrorCode::InvalidArgument, "outlier fraction must lie in [0,1]");
  if (desc_noise_sigma < 0.0) throw Error(ErrorCode::InvalidArgument, "descriptor noise must be >= 0");
  if (matching.width < 32 || matching.height < 32 || native.width < 32 || native.height < 32)
    throw Error(ErrorCode::ZeroDimension, "frames must be at least 32x32");
  if (desc_dim < 2) throw Error(ErrorCode::InvalidArgument, "descriptor dimension must be >= 2");
  if (n_control_points < 1) throw Error(ErrorCode::InvalidArgument, "need at least one control point");
}

SynthPair gen_synth_pair(const SynthConfig& cfg) {
  cfg.validate();
  SynthPair pair;
  pair.seed = cfg.seed;
  pair.overlap_frac = cfg.overlap_frac;
  pair.outlier_frac = cfg.outlier_frac;
  pair.true_h = sample_true_homography(cfg);
  const Homography h_match = scale_homography(pair.true_h, cfg.native, cfg.matching);

  const auto n = static_cast<std::size_t>(cfg.n_keypoints);
  const auto shared = static_cast<std::size_t>(std::lround(cfg.overlap_frac * cfg.n_keypoints));
  pair.shared_keypoints = shared;

  auto visible_in_moving = [&](const Point2& p) {
    return inside(apply_homography(h_match, p), cfg.matching, kBorderMargin);
  };
  auto kp_rng = stream_rng(cfg.seed, kKeypoints);
  std::vector<Point2> fixed_pos, moving_pos;
  for (std::size_t i = 0; i < shared; ++i) {
    const Point2 p = place_point(kp_rng, cfg.matching, fixed_pos, cfg.min_separation_px, [&](const Point2& q) {
      return visible_in_moving(q) &&
             far_from_all(apply_homography(h_match, q), moving_pos, cfg.min_separation_px);
    });
    fixed_pos.push_back(p);
    moving_pos.push_back(apply_homography(h_match, p));
  }
  for (std::size_t i = shared; i < n; ++i)
    fixed_pos.push_back(place_point(kp_rng, cfg.matching, fixed_pos, cfg.min_separation_px,
                                    [](const Point2&) { return true; }));
  for (std::size_t i = shared; i < n; ++i)
    moving_pos.push_back(place_point(kp_rng, cfg.matching, moving_pos, cfg.min_separation_px,
                                     [](const Point2&) { return true; }));

  // Shared keypoints keep their class in both views.
  auto cls_rng = stream_rng(cfg.seed, kClasses);
  std::bernoulli_distribution coin(0.5);
  std::vector<KeypointClass> fixed_cls(n), moving_cls(n);
  for (std::size_t i = 0; i < n; ++i) fixed_cls[i] = coin(cls_rng) ? KeypointClass::Crossover : KeypointClass::Bifurcation;
  for (std::size_t i = 0; i < n; ++i)
    moving_cls[i] = i < shared ? fixed_cls[i] : (coin(cls_rng) ? KeypointClass::Crossover : KeypointClass::Bifurcation);
  for (std::size_t i = 0; i < n; ++i) {
    pair.fixed.keypoints.push_back({fixed_pos[i], fixed_cls[i], 1.0f});
    pair.moving.keypoints.push_back({moving_pos[i], moving_cls[i], 1.0f});
  }

  DetectConfig det;
  det.gaussian_sigma_px = cfg.heatmap_sigma_px;
  pair.fixed.heatmaps = make_heatmap(pair.fixed.keypoints, cfg.matching, det);
  pair.moving.heatmaps = make_heatmap(pair.moving.keypoints, cfg.matching, det);

  // Vessels: shared junctions are drawn in the fixed view and carried into
  // the moving view by the planted transform; private junctions stay local.
  const double to_native_x = static_cast<double>(cfg.native.width) / cfg.matching.width;
  const double to_native_y = static_cast<double>(cfg.native.height) / cfg.matching.height;
  auto native_of = [&](const Point2& p) { return Point2{p.x * to_native_x, p.y * to_native_y}; };
  auto stroke_rng = stream_rng(cfg.seed, kStrokes);
  pair.fixed.mask = VesselMask(cfg.native.width, cfg.native.height);
  pair.moving.mask = VesselMask(cfg.native.width, cfg.native.height);
  for (std::size_t i = 0; i < n; ++i) {
    for (const auto& s : junction_strokes(native_of(fixed_pos[i]), fixed_cls[i], stroke_rng)) {
      rasterize(s, pair.fixed.mask);
      if (i < shared) rasterize(map_stroke(s, pair.true_h), pair.moving.mask);
    }
  }
  for (std::size_t i = shared; i < n; ++i)
    for (const auto& s : junction_strokes(native_of(moving_pos[i]), moving_cls[i], stroke_rng))
      rasterize(s, pair.moving.mask);
  pair.fixed.image = render_view(pair.fixed.mask, Homography::identity());
  pair.moving.image = render_view(pair.moving.mask, pair.true_h.inverse());

  auto desc_rng = stream_rng(cfg.seed, kDescriptors);
  std::vector<Descriptor> fixed_desc, moving_desc;
  for (std::size_t i = 0; i < n; ++i) {
    const Descriptor identity = random_unit(desc_rng, cfg.desc_dim);
    fixed_desc.push_back(perturb(identity, cfg.desc_noise_sigma, desc_rng));
    moving_desc.push_back(i < shared ? perturb(identity, cfg.desc_noise_sigma, desc_rng)
                                     : random_unit(desc_rng, cfg.desc_dim));
  }
  auto outlier_rng = stream_rng(cfg.seed, kOutliers);
  std::vector<std::size_t> shared_idx(shared);
  std::iota(shared_idx.begin(), shared_idx.end(), std::size_t{0});
  std::shuffle(shared_idx.begin(), shared_idx.end(), outlier_rng);
  const auto n_outliers = static_cast<std::size_t>(std::lround(cfg.outlier_frac * static_cast<double>(shared)));
  for (std::size_t i = 0; i < n_outliers; ++i) moving_desc[shared_idx[i]] = random_unit(outlier_rng, cfg.desc_dim);

  pair.fixed.descriptors = descriptor_map(cfg.matching, cfg.desc_dim, pair.fixed.keypoints, fixed_desc);
  pair.moving.descriptors = descriptor_map(cfg.matching, cfg.desc_dim, pair.moving.keypoints, moving_desc);

  // Control points live in the native-resolution overlap.
  auto cp_rng = stream_rng(cfg.seed, kControlPoints);
  const double margin = kBorderMargin * to_native_x;
  for (int i = 0; i < cfg.n_control_points; ++i) {
    bool placed = false;
    for (int attempt = 0; attempt < kPlacementAttempts && !placed; ++attempt) {
      const Point2 p{uniform(cp_rng, margin, cfg.native.width - 1 - margin),
                     uniform(cp_rng, margin, cfg.native.height - 1 - margin)};
      const Point2 q = apply_homography(pair.true_h, p);
      if (inside(q, cfg.native, margin)) {
        pair.cps.pairs.push_back({p, q});
        placed = true;
      }
    }
    if (!placed) throw Error(ErrorCode::InfeasibleOverlap, "no overlap region for control points");
  }
  return pair;
}

std::vector<std::string> export_synth_pair(const SynthPair& pair, const std::filesystem::path& dir,
                                           const std::string& stem, const std::string& category) {
  std::filesystem::create_directories(dir);
  const std::vector<std::string> names{
      stem + "_fixed.png",      stem + "_moving.png",      category,
      stem + "_heatmap_f.tns",  stem + "_heatmap_m.tns",   stem + "_desc_f.tns",
      stem + "_desc_m.tns",     stem + "_mask_f.png",      stem + "_mask_m.png",
      stem + "_control_points.txt"};
  write_png(dir / names[0], pair.fixed.image);
  write_png(dir / names[1], pair.moving.image);
  write_tensor(dir / names[3], pair.fixed.heatmaps.to_tensor());
  write_tensor(dir / names[4], pair.moving.heatmaps.to_tensor());
  write_tensor(dir / names[5], pair.fixed.descriptors);
  write_tensor(dir / names[6], pair.moving.descriptors);
  write_mask_png(dir / names[7], pair.fixed.mask);
  write_mask_png(dir / names[8], pair.moving.mask);
  std::ofstream cp(dir / names[9]);
  if (!cp) throw Error(ErrorCode::IoError, "cannot write control points under " + dir.string());
  cp << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [f, m] : pair.cps.pairs) cp << f.x << ' ' << f.y << ' ' << m.x << ' ' << m.y << '\n';
  return names;
}

double brute_force_ap(std::span<const double> distances, std::span<const bool> positive) {
  if (distances.size() != positive.size()) throw Error(ErrorCode::LengthMismatch, "distance/label lengths differ");
  std::vector<std::size_t> order(distances.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return distances[a] < distances[b]; });
  double sum = 0.0;
  std::size_t hits = 0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (!positive[order[rank]]) continue;
    ++hits;
    sum += static_cast<double>(hits) / static_cast<double>(rank + 1);
  }
  if (hits == 0) throw Error(ErrorCode::NoPositives, "average precision needs a positive");
  return sum / static_cast<double>(hits);
}

double brute_force_mean_ap(const EmbeddingSet& e) {
  const Eigen::MatrixXd u = e.z.rowwise().normalized();
  const auto n = static_cast<std::size_t>(u.rows());
  std::vector<double> per_anchor;
  for (std::size_t a = 0; a < n; ++a) {
    // std::vector<bool> has no contiguous storage to view as a span.
    auto flags = std::make_unique<bool[]>(n - 1);
    std::vector<double> d;
    d.reserve(n - 1);
    for (std::size_t b = 0; b < n; ++b) {
      if (b == a) continue;
      flags[d.size()] = e.sets.keypoint_of(a) == e.sets.keypoint_of(b);
      d.push_back((u.row(static_cast<Eigen::Index>(a)) - u.row(static_cast<Eigen::Index>(b))).norm());
    }
    per_anchor.push_back(brute_force_ap(d, std::span<const bool>(flags.get(), d.size())));
  }
  return pairwise_sum(per_anchor) / static_cast<double>(per_anchor.size());
}

double sweep_auc_oracle(std::span<const std::optional<double>> errors, double step, double max_error) {
  if (!(step > 0.0)) throw Error(ErrorCode::InvalidArgument, "step must be positive");
  if (errors.empty()) return 0.0;
  const auto n_steps = static_cast<long>(std::llround(max_error / step));
  auto success = [&](double t) {
    std::size_t ok = 0;
    for (const auto& e : errors) ok += e && *e <= t;
    return static_cast<double>(ok) / static_cast<double>(errors.size());
  };
  double area = 0.0;
  double prev = success(0.0);
  for (long i = 1; i <= n_steps; ++i) {
    const double cur = success(max_error * static_cast<double>(i) / static_cast<double>(n_steps));
    area += 0.5 * (prev + cur);
    prev = cur;
  }
  return area / static_cast<double>(n_steps);
}

EmbeddingSet random_embeddings(std::size_t views, std::size_t keypoints, std::size_t dim, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  EmbeddingSet e{Eigen::MatrixXd(static_cast<Eigen::Index>(views * keypoints), static_cast<Eigen::Index>(dim)),
                 make_index_sets(views, keypoints)};
  for (Eigen::Index i = 0; i < e.z.rows(); ++i)
    for (Eigen::Index j = 0; j < e.z.cols(); ++j) e.z(i, j) = g(rng);
  return e;
}

EmbeddingSet clustered_embeddings(std::size_t views, std::size_t keypoints, std::size_t dim, double noise_sigma,
                                  std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g;
  Eigen::MatrixXd base(static_cast<Eigen::Index>(keypoints), static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < base.rows(); ++i)
    for (Eigen::Index j = 0; j < base.cols(); ++j) base(i, j) = g(rng);
  base.rowwise().normalize();
  EmbeddingSet e{Eigen::MatrixXd(static_cast<Eigen::Index>(views * keypoints), static_cast<Eigen::Index>(dim)),
                 make_index_sets(views, keypoints)};
  for (std::size_t v = 0; v < views; ++v)
    for (std::size_t k = 0; k < keypoints; ++k)
      for (Eigen::Index j = 0; j < e.z.cols(); ++j)
        e.z(static_cast<Eigen::Index>(v * keypoints + k), j) = base(static_cast<Eigen::Index>(k), j) + noise_sigma * g(rng);
  return e;
}

}  // namespace retreg
