#include "retreg/batch.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "retreg/error.hpp"
#include "retreg/util.hpp"

namespace retreg {

void AugmentConfig::validate() const {
  auto fail = [](const char* what) { throw Error(ErrorCode::InvalidArgument, what); };
  if (rotation_deg < 0 || translation_frac < 0 || shear_deg < 0 || hue_shift < 0) fail("ranges must be >= 0");
  if (!(scale_min > 0 && scale_min <= scale_max)) fail("scale range");
  if (!(saturation_min >= 0 && saturation_min <= saturation_max)) fail("saturation range");
  if (!(value_min >= 0 && value_min <= value_max)) fail("value range");
  if (noise_sigma < 0) fail("noise sigma");
  if (noise_prob < 0 || noise_prob > 1) fail("noise probability must lie in [0,1]");
  if (n_views < 1) fail("need at least one augmented view");
}

AugmentConfig AugmentConfig::identity(int n_views) {
  AugmentConfig c;
  c.rotation_deg = c.translation_frac = c.shear_deg = c.hue_shift = 0.0;
  c.scale_min = c.scale_max = 1.0;
  c.saturation_min = c.saturation_max = 1.0;
  c.value_min = c.value_max = 1.0;
  c.noise_prob = 0.0;
  c.n_views = n_views;
  return c;
}

namespace {

double uniform(std::mt19937_64& rng, double lo, double hi) {
  if (lo == hi) return lo;
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

constexpr double kDeg = std::numbers::pi / 180.0;

}  // namespace

AffineParams sample_affine_params(const AugmentConfig& cfg, Size frame, std::mt19937_64& rng) {
  AffineParams p;
  p.rotation_deg = uniform(rng, -cfg.rotation_deg, cfg.rotation_deg);
  p.scale = uniform(rng, cfg.scale_min, cfg.scale_max);
  p.shear_deg = uniform(rng, -cfg.shear_deg, cfg.shear_deg);
  p.tx = uniform(rng, -cfg.translation_frac, cfg.translation_frac) * frame.width;
  p.ty = uniform(rng, -cfg.translation_frac, cfg.translation_frac) * frame.height;
  return p;
}

Homography compose_affine(const AffineParams& p, Point2 center) {
  const double th = p.rotation_deg * kDeg;
  Eigen::Matrix3d r = Eigen::Matrix3d::Identity();
  r(0, 0) = std::cos(th);
  r(0, 1) = -std::sin(th);
  r(1, 0) = std::sin(th);
  r(1, 1) = std::cos(th);
  Eigen::Matrix3d sh = Eigen::Matrix3d::Identity();
  sh(0, 1) = std::tan(p.shear_deg * kDeg);
  const Homography c = Homography::translation(center.x, center.y);
  return c * Homography(r) * Homography::scaling(p.scale, p.scale) * Homography(sh) *
         Homography::translation(p.tx, p.ty) * c.inverse();
}

Homography sample_affine(const AugmentConfig& cfg, Size frame, std::mt19937_64& rng) {
  return compose_affine(sample_affine_params(cfg, frame, rng), {(frame.width - 1) / 2.0, (frame.height - 1) / 2.0});
}

void apply_photometric(Image& img, const AugmentConfig& cfg, std::mt19937_64& rng) {
  const double dh = uniform(rng, -cfg.hue_shift, cfg.hue_shift);
  const double ss = uniform(rng, cfg.saturation_min, cfg.saturation_max);
  const double vs = uniform(rng, cfg.value_min, cfg.value_max);
  const std::size_t n = static_cast<std::size_t>(img.width) * img.height;
  const bool colour_identity = dh == 0.0 && ss == 1.0 && vs == 1.0;
  if (colour_identity) {
    // leave pixels untouched; the HSV round trip is not bit-exact
  } else if (img.channels == 3) {
    for (std::size_t i = 0; i < n; ++i) {
      float* p = &img.pixels[3 * i];
      float h, s, v;
      rgb_to_hsv(p[0], p[1], p[2], h, s, v);
      h = static_cast<float>(h + dh);
      s = std::clamp(static_cast<float>(s * ss), 0.0f, 1.0f);
      v = std::clamp(static_cast<float>(v * vs), 0.0f, 1.0f);
      hsv_to_rgb(h, s, v, p[0], p[1], p[2]);
    }
  } else {
    for (auto& v : img.pixels) v = std::clamp(static_cast<float>(v * vs), 0.0f, 1.0f);
  }
  const bool noisy = cfg.noise_prob > 0.0 && std::bernoulli_distribution(cfg.noise_prob)(rng);
  if (noisy && cfg.noise_sigma > 0.0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (auto& v : img.pixels) v = static_cast<float>(v + noise(rng));
  }
  clamp_unit(img);
}

MultiviewBatch build_batch_with_transforms(const Image& img, std::span<const Keypoint> kps,
                                           std::span<const Homography> transforms, const AugmentConfig& cfg) {
  cfg.validate();
  const Size frame{img.width, img.height};
  auto inside = [&](const Point2& p) {
    return p.x >= 0.0 && p.y >= 0.0 && p.x <= frame.width - 1 && p.y <= frame.height - 1;
  };

  MultiviewBatch batch;
  batch.view_transforms.assign(transforms.begin(), transforms.end());
  batch.keypoints_per_view.resize(transforms.size() + 1);

  // A keypoint leaving any view is dropped from all of them.
  for (const auto& kp : kps) {
    if (!inside(kp.pos)) continue;
    std::vector<Keypoint> mapped{kp};
    bool keep = true;
    for (const auto& t : transforms) {
      Keypoint q = kp;
      try {
        q.pos = apply_homography(t, kp.pos);
      } catch (const Error&) {
        keep = false;
        break;
      }
      if (!inside(q.pos)) {
        keep = false;
        break;
      }
      mapped.push_back(q);
    }
    if (!keep) continue;
    for (std::size_t v = 0; v < mapped.size(); ++v) batch.keypoints_per_view[v].push_back(mapped[v]);
  }
  if (batch.n_keypoints() < 2) {
    throw Error(ErrorCode::TooFewSurvivingKeypoints,
                std::to_string(batch.n_keypoints()) + " keypoints survive every view");
  }

  batch.images.reserve(transforms.size() + 1);
  batch.images.push_back(img);
  for (std::size_t k = 0; k < transforms.size(); ++k) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 2 * k + 1));
    Image view = warp_image(img, transforms[k], frame);
    apply_photometric(view, cfg, rng);
    batch.images.push_back(std::move(view));
  }
  return batch;
}

MultiviewBatch build_batch(const Image& img, std::span<const Keypoint> kps, const AugmentConfig& cfg) {
  cfg.validate();
  if (kps.size() < 2) throw Error(ErrorCode::TooFewSurvivingKeypoints, "need at least 2 keypoints");
  const Size frame{img.width, img.height};
  std::vector<Homography> transforms;
  transforms.reserve(static_cast<std::size_t>(cfg.n_views));
  for (int k = 0; k < cfg.n_views; ++k) {
    std::mt19937_64 rng(mix_seed(cfg.seed, 2 * static_cast<std::uint64_t>(k)));
    transforms.push_back(sample_affine(cfg, frame, rng));
  }
  return build_batch_with_transforms(img, kps, transforms, cfg);
}

void export_batch(const MultiviewBatch& batch, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  nlohmann::json transforms = nlohmann::json::array();
  for (std::size_t v = 0; v < batch.images.size(); ++v) {
    const std::string stem = "view_" + std::to_string(v);
    write_png(dir / (stem + ".png"), batch.images[v]);
    write_keypoints_csv(dir / (stem + "_keypoints.csv"), batch.keypoints_per_view[v]);
    const auto h = v == 0 ? Homography::identity() : batch.view_transforms[v - 1];
    transforms.push_back({{"view", v}, {"homography", h.row_major()}});
  }
  std::ofstream out(dir / "transforms.json");
  if (!out) throw Error(ErrorCode::IoError, "cannot write transforms.json");
  out << transforms.dump(2) << '\n';
}

IndexSets make_index_sets(std::size_t views, std::size_t keypoints) {
  IndexSets sets;
  sets.views = views;
  sets.keypoints = keypoints;
  const std::size_t total = views * keypoints;
  sets.positives.resize(total);
  sets.others.resize(total);
  for (std::size_t s = 0; s < total; ++s) {
    const std::size_t kp = s % keypoints;
    for (std::size_t v = 0; v < views; ++v) {
      const std::size_t p = v * keypoints + kp;
      if (p != s) sets.positives[s].push_back(p);
    }
    sets.others[s].reserve(total - 1);
    for (std::size_t a = 0; a < total; ++a)
      if (a != s) sets.others[s].push_back(a);
  }
  for (std::size_t i = 0; i < views; ++i) {
    for (std::size_t j = i + 1; j < views; ++j) {
      ViewPairTerms vp{i, j, {}};
      for (std::size_t kp = 0; kp < keypoints; ++kp) {
        PairTerm t;
        t.anchor = i * keypoints + kp;
        t.positive = j * keypoints + kp;
        for (std::size_t v : {i, j})
          for (std::size_t q = 0; q < keypoints; ++q)
            if (v * keypoints + q != t.anchor) t.candidates.push_back(v * keypoints + q);
        vp.terms.push_back(std::move(t));
      }
      sets.view_pairs.push_back(std::move(vp));
    }
  }
  return sets;
}

IndexSets index_sets(const MultiviewBatch& batch) {
  return make_index_sets(batch.keypoints_per_view.size(), batch.n_keypoints());
}

}  // namespace retreg
