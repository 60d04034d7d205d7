#include "retreg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "retreg/error.hpp"
#include "retreg/util.hpp"

namespace retreg {

double cp_error(const Homography& h, const ControlPointSet& cps) {
  std::vector<double> dists;
  dists.reserve(cps.pairs.size());
  for (std::size_t i = 0; i < cps.pairs.size(); ++i) {
    if (std::find(cps.exclusions.begin(), cps.exclusions.end(), i) != cps.exclusions.end()) continue;
    const auto& [fixed, moving] = cps.pairs[i];
    dists.push_back(distance(apply_homography(h, moving), fixed));
  }
  if (dists.empty()) throw Error(ErrorCode::AllPointsExcluded, "every control point is excluded");
  return pairwise_sum(dists) / static_cast<double>(dists.size());
}

double registration_score(std::span<const std::optional<double>> errors, double max_error) {
  if (errors.empty()) throw Error(ErrorCode::EmptyInput, "registration_score needs at least one pair");
  if (!(max_error > 0.0)) throw Error(ErrorCode::InvalidArgument, "max_error must be positive");
  std::vector<double> scores;
  scores.reserve(errors.size());
  for (const auto& e : errors) {
    if (!e || !std::isfinite(*e)) {
      scores.push_back(0.0);
      continue;
    }
    scores.push_back(std::clamp((max_error - *e) / max_error, 0.0, 1.0));
  }
  return pairwise_sum(scores) / static_cast<double>(scores.size());
}

std::vector<ScoredMatch> top_k_per_class(std::span<const ScoredMatch> matches, int k) {
  std::vector<ScoredMatch> out;
  for (KeypointClass cls : kKeypointClasses) {
    std::vector<ScoredMatch> of_class;
    for (const auto& m : matches)
      if (m.cls == cls) of_class.push_back(m);
    std::stable_sort(of_class.begin(), of_class.end(),
                     [](const ScoredMatch& a, const ScoredMatch& b) { return a.similarity > b.similarity; });
    const auto keep = std::min<std::size_t>(of_class.size(), static_cast<std::size_t>(std::max(k, 0)));
    out.insert(out.end(), of_class.begin(), of_class.begin() + static_cast<std::ptrdiff_t>(keep));
  }
  return out;
}

VtkrsResult vtkrs(std::span<const VtkrsPair> pairs, const RansacConfig& ransac, int k_min, int k_max,
                  double max_error) {
  if (pairs.empty()) throw Error(ErrorCode::EmptyInput, "vtkrs needs at least one pair");
  if (k_min < 1 || k_max < k_min) throw Error(ErrorCode::InvalidArgument, "invalid k range");
  VtkrsResult result;
  result.k_min = k_min;
  result.k_max = k_max;
  for (int k = k_min; k <= k_max; ++k) {
    std::vector<std::optional<double>> errors;
    errors.reserve(pairs.size());
    for (const auto& pair : pairs) {
      const auto kept = top_k_per_class(pair.matches, k);
      std::vector<Correspondence> corr;
      corr.reserve(kept.size());
      for (const auto& m : kept) corr.push_back({m.moving, m.fixed});
      RansacConfig cfg = ransac;
      cfg.seed = pair.seed;
      try {
        const auto fit = ransac_homography(corr, cfg);
        errors.push_back(cp_error(fit.model, pair.cps));
      } catch (const Error&) {
        errors.push_back(std::nullopt);
      }
    }
    result.per_k.push_back(registration_score(errors, max_error));
  }
  result.score = pairwise_sum(result.per_k) / static_cast<double>(result.per_k.size());
  return result;
}

namespace {

void require_same_dims(const VesselMask& a, const VesselMask& b) {
  if (a.width != b.width || a.height != b.height)
    throw Error(ErrorCode::DimMismatch, "mask dimensions differ");
}

}  // namespace

OverlapCounts count_overlap(const VesselMask& a, const VesselMask& b) {
  require_same_dims(a, b);
  OverlapCounts c;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    const bool va = a.values[i] != 0;
    const bool vb = b.values[i] != 0;
    c.a += va;
    c.b += vb;
    c.intersection += va && vb;
    c.union_ += va || vb;
  }
  return c;
}

OverlapCounts count_overlap(const VesselMask& a, const VesselMask& b, const VesselMask& region) {
  require_same_dims(a, b);
  require_same_dims(a, region);
  OverlapCounts c;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    if (region.values[i] == 0) continue;
    const bool va = a.values[i] != 0;
    const bool vb = b.values[i] != 0;
    c.a += va;
    c.b += vb;
    c.intersection += va && vb;
    c.union_ += va || vb;
  }
  return c;
}

double dice(const OverlapCounts& c) {
  if (c.a + c.b == 0) return 0.0;
  return 2.0 * static_cast<double>(c.intersection) / static_cast<double>(c.a + c.b);
}

double iou(const OverlapCounts& c) {
  if (c.union_ == 0) return 0.0;
  return static_cast<double>(c.intersection) / static_cast<double>(c.union_);
}

double iom(const OverlapCounts& c) {
  const std::size_t m = std::min(c.a, c.b);
  if (m == 0) return 0.0;
  return static_cast<double>(c.intersection) / static_cast<double>(m);
}

double dice(const VesselMask& a, const VesselMask& b) { return dice(count_overlap(a, b)); }
double iou(const VesselMask& a, const VesselMask& b) { return iou(count_overlap(a, b)); }
double iom(const VesselMask& a, const VesselMask& b) { return iom(count_overlap(a, b)); }

void SMConfig::validate() const {
  if (!(c4 > 0.0)) throw Error(ErrorCode::InvalidArgument, "c4 must be positive");
  if (c1 < 0.0 || c2 < 0.0 || c3 < 0.0) throw Error(ErrorCode::InvalidArgument, "stabilizers must be >= 0");
  if (window_sizes.empty()) throw Error(ErrorCode::InvalidArgument, "no window sizes");
  for (int w : window_sizes)
    if (w < 1 || w % 2 == 0) throw Error(ErrorCode::InvalidArgument, "window sizes must be odd and positive");
}

WindowStats window_stats(std::span<const float> x, std::span<const float> y) {
  if (x.size() != y.size() || x.empty()) throw Error(ErrorCode::DimMismatch, "window sizes differ");
  const double n = static_cast<double>(x.size());
  WindowStats s;
  for (std::size_t i = 0; i < x.size(); ++i) {
    s.mean_x += x[i];
    s.mean_y += y[i];
  }
  s.mean_x /= n;
  s.mean_y /= n;
  // Two passes keep exactly constant windows at exactly zero variance.
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - s.mean_x;
    const double dy = y[i] - s.mean_y;
    s.var_x += dx * dx;
    s.var_y += dy * dy;
    s.cov += dx * dy;
  }
  s.var_x /= n;
  s.var_y /= n;
  s.cov /= n;
  return s;
}

double structure_term(const WindowStats& s, const SMConfig& cfg) {
  const double v = s.cov / (std::sqrt(s.var_x) * std::sqrt(s.var_y) + cfg.c4);
  return std::clamp(v, -1.0, 1.0);
}

double structure_term(std::span<const float> x, std::span<const float> y, const SMConfig& cfg) {
  return structure_term(window_stats(x, y), cfg);
}

double classical_structure_term(std::span<const float> x, std::span<const float> y, double c3) {
  const auto s = window_stats(x, y);
  return (s.cov + c3) / (std::sqrt(s.var_x) * std::sqrt(s.var_y) + c3);
}

namespace {

double ssim_window(const WindowStats& s, const SMConfig& cfg) {
  const double lum = (2.0 * s.mean_x * s.mean_y + cfg.c1) / (s.mean_x * s.mean_x + s.mean_y * s.mean_y + cfg.c1);
  const double sx = std::sqrt(s.var_x);
  const double sy = std::sqrt(s.var_y);
  const double con = (2.0 * sx * sy + cfg.c2) / (s.var_x + s.var_y + cfg.c2);
  return lum * con * structure_term(s, cfg);
}

void require_comparable(const Image& a, const Image& b, const SMConfig& cfg, const VesselMask* valid) {
  cfg.validate();
  if (a.channels != 1 || b.channels != 1)
    throw Error(ErrorCode::UnsupportedFormat, "structure metrics need grayscale images");
  if (a.width != b.width || a.height != b.height) throw Error(ErrorCode::DimMismatch, "image dimensions differ");
  if (valid && (valid->width != a.width || valid->height != a.height))
    throw Error(ErrorCode::DimMismatch, "validity mask dimensions differ");
  const int largest = *std::max_element(cfg.window_sizes.begin(), cfg.window_sizes.end());
  if (a.width < largest || a.height < largest)
    throw Error(ErrorCode::ImageTooSmall, "image smaller than the largest window");
}

template <typename F>
std::optional<double> mean_over_windows(const Image& a, const Image& b, int window, const VesselMask* valid,
                                        F&& per_window) {
  if (window < 1 || window > a.width || window > a.height) return std::nullopt;
  const int stride = std::max(1, window / 2);
  std::vector<float> xs(static_cast<std::size_t>(window) * window);
  std::vector<float> ys(xs.size());
  std::vector<double> values;
  for (int y0 = 0; y0 + window <= a.height; y0 += stride) {
    for (int x0 = 0; x0 + window <= a.width; x0 += stride) {
      bool ok = true;
      std::size_t n = 0;
      for (int y = y0; y < y0 + window && ok; ++y) {
        for (int x = x0; x < x0 + window; ++x) {
          if (valid && !valid->at(x, y)) {
            ok = false;
            break;
          }
          xs[n] = a.at(x, y);
          ys[n] = b.at(x, y);
          ++n;
        }
      }
      if (ok) values.push_back(per_window(window_stats(xs, ys)));
    }
  }
  if (values.empty()) return std::nullopt;
  return pairwise_sum(values) / static_cast<double>(values.size());
}

template <typename F>
double mean_over_scales(const Image& a, const Image& b, const SMConfig& cfg, const VesselMask* valid,
                        F&& per_window) {
  require_comparable(a, b, cfg, valid);
  std::vector<double> scales;
  for (int w : cfg.window_sizes)
    if (auto m = mean_over_windows(a, b, w, valid, per_window)) scales.push_back(*m);
  if (scales.empty()) return 0.0;
  return pairwise_sum(scales) / static_cast<double>(scales.size());
}

}  // namespace

std::optional<double> sm_at_scale(const Image& a, const Image& b, int window, const SMConfig& cfg,
                                  const VesselMask* valid) {
  require_comparable(a, b, cfg, valid);
  return mean_over_windows(a, b, window, valid, [&](const WindowStats& s) { return structure_term(s, cfg); });
}

std::optional<double> ssim_at_scale(const Image& a, const Image& b, int window, const SMConfig& cfg,
                                    const VesselMask* valid) {
  require_comparable(a, b, cfg, valid);
  return mean_over_windows(a, b, window, valid, [&](const WindowStats& s) { return ssim_window(s, cfg); });
}

double sm_metric(const Image& a, const Image& b, const SMConfig& cfg, const VesselMask* valid) {
  return mean_over_scales(a, b, cfg, valid, [&](const WindowStats& s) { return structure_term(s, cfg); });
}

double ssim_metric(const Image& a, const Image& b, const SMConfig& cfg, const VesselMask* valid) {
  return mean_over_scales(a, b, cfg, valid, [&](const WindowStats& s) { return ssim_window(s, cfg); });
}

double normalize_report(double raw, std::size_t registered, std::size_t total, Direction direction) {
  if (total == 0 || registered > total) throw Error(ErrorCode::BadCounts, "need 0 <= registered <= total, total > 0");
  const double r = static_cast<double>(registered);
  const double t = static_cast<double>(total);
  if (registered == 0) return direction == Direction::HigherBetter ? 0.0 : 1.0;
  if (direction == Direction::HigherBetter) return raw * r / t;
  return (raw * r + 1.0 * (t - r)) / t;
}

namespace {

void require_pairs(std::span<const double> xs, std::span<const double> ys) {
  if (xs.size() != ys.size()) throw Error(ErrorCode::LengthMismatch, "sequences differ in length");
  if (xs.size() < 2) throw Error(ErrorCode::LengthMismatch, "need at least two observations");
}

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> xs, std::span<const double> ys) {
  require_pairs(xs, ys);
  const auto rx = average_ranks(xs);
  const auto ry = average_ranks(ys);
  const double n = static_cast<double>(rx.size());
  const double mean = (n + 1.0) / 2.0;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    const double dx = rx[i] - mean;
    const double dy = ry[i] - mean;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error(ErrorCode::ConstantInput, "rank correlation of a constant sequence");
  return sxy / std::sqrt(sxx * syy);
}

double kendall_tau(std::span<const double> xs, std::span<const double> ys) {
  require_pairs(xs, ys);
  // O(n^2); the inputs here are per-dataset summaries, never large.
  long long concordant_minus_discordant = 0;
  long long pairs_x = 0;  // pairs not tied in x
  long long pairs_y = 0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    for (std::size_t j = i + 1; j < xs.size(); ++j) {
      const int sx = (xs[i] < xs[j]) - (xs[i] > xs[j]);
      const int sy = (ys[i] < ys[j]) - (ys[i] > ys[j]);
      concordant_minus_discordant += sx * sy;
      pairs_x += sx != 0;
      pairs_y += sy != 0;
    }
  }
  if (pairs_x == 0 || pairs_y == 0) throw Error(ErrorCode::ConstantInput, "rank correlation of a constant sequence");
  return static_cast<double>(concordant_minus_discordant) /
         std::sqrt(static_cast<double>(pairs_x) * static_cast<double>(pairs_y));
}

}  // namespace retreg
