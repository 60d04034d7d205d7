#include "retreg/keypoints.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "retreg/error.hpp"

namespace retreg {

char class_code(KeypointClass c) { return c == KeypointClass::Crossover ? 'X' : 'B'; }

KeypointClass class_from_code(char code) {
  switch (code) {
    case 'X': return KeypointClass::Crossover;
    case 'B': return KeypointClass::Bifurcation;
    default: throw Error(ErrorCode::InvalidArgument, std::string("unknown keypoint class '") + code + "'");
  }
}

Tensor HeatmapSet::to_tensor() const {
  const auto h = static_cast<std::uint32_t>(height());
  const auto w = static_cast<std::uint32_t>(width());
  Tensor t({3, h, w});
  std::copy(crossover.data.begin(), crossover.data.end(), t.data.begin());
  std::copy(bifurcation.data.begin(), bifurcation.data.end(), t.data.begin() + h * w);
  std::copy(combined.data.begin(), combined.data.end(), t.data.begin() + 2 * h * w);
  return t;
}

HeatmapSet HeatmapSet::from_tensor(const Tensor& t) {
  if (t.rank() != 3 || t.dims[0] != 3) {
    throw Error(ErrorCode::DimMismatch, "heatmap tensor must have shape [3, H, W]");
  }
  const std::uint32_t h = t.dims[1], w = t.dims[2];
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  auto slice = [&](std::size_t k) {
    return Tensor({h, w}, std::vector<float>(t.data.begin() + k * plane, t.data.begin() + (k + 1) * plane));
  };
  return {slice(0), slice(1), slice(2)};
}

void DetectConfig::validate() const {
  if (!(intensity_threshold > 0.0f && intensity_threshold < 1.0f)) {
    throw Error(ErrorCode::InvalidArgument, "intensity threshold must lie in (0,1)");
  }
  if (nms_window < 3 || nms_window % 2 == 0) {
    throw Error(ErrorCode::InvalidArgument, "NMS window must be odd and >= 3");
  }
  if (!(gaussian_sigma_px > 0.0)) throw Error(ErrorCode::InvalidArgument, "sigma must be positive");
}

HeatmapSet make_heatmap(std::span<const Keypoint> keypoints, Size dims, const DetectConfig& cfg) {
  cfg.validate();
  if (dims.width <= 0 || dims.height <= 0) throw Error(ErrorCode::ZeroDimension, "heatmap dims");
  const auto h = static_cast<std::uint32_t>(dims.height);
  const auto w = static_cast<std::uint32_t>(dims.width);
  HeatmapSet hm{Tensor({h, w}), Tensor({h, w}), Tensor({h, w})};

  const double sigma = cfg.gaussian_sigma_px;
  const double inv_two_var = 1.0 / (2.0 * sigma * sigma);
  const int radius = static_cast<int>(std::ceil(4.0 * sigma));
  for (const auto& kp : keypoints) {
    const Point2 p = kp.pos;
    if (!(p.x >= 0.0 && p.y >= 0.0 && p.x <= dims.width - 1 && p.y <= dims.height - 1)) {
      throw Error(ErrorCode::OutOfBoundsKeypoint, "keypoint outside heatmap bounds");
    }
    Tensor& channel = kp.cls == KeypointClass::Crossover ? hm.crossover : hm.bifurcation;
    const int cx = static_cast<int>(std::lround(p.x));
    const int cy = static_cast<int>(std::lround(p.y));
    for (int y = std::max(0, cy - radius); y <= std::min(dims.height - 1, cy + radius); ++y) {
      for (int x = std::max(0, cx - radius); x <= std::min(dims.width - 1, cx + radius); ++x) {
        const double d2 = (x - p.x) * (x - p.x) + (y - p.y) * (y - p.y);
        const float v = static_cast<float>(std::exp(-d2 * inv_two_var));
        float& cell = channel.at(y, x);
        cell = std::max(cell, v);
      }
    }
  }
  for (std::size_t i = 0; i < hm.combined.data.size(); ++i) {
    hm.combined.data[i] = std::max(hm.crossover.data[i], hm.bifurcation.data[i]);
  }
  return hm;
}

double heatmap_mse(const HeatmapSet& pred, const HeatmapSet& truth) {
  if (pred.crossover.dims != truth.crossover.dims || pred.bifurcation.dims != truth.bifurcation.dims ||
      pred.combined.dims != truth.combined.dims || pred.crossover.dims != pred.combined.dims) {
    throw Error(ErrorCode::DimMismatch, "heatmap dims differ");
  }
  const std::array<std::pair<const Tensor*, const Tensor*>, 3> channels{{
      {&pred.crossover, &truth.crossover},
      {&pred.bifurcation, &truth.bifurcation},
      {&pred.combined, &truth.combined},
  }};
  double sum = 0.0;
  std::size_t count = 0;
  for (const auto& [p, t] : channels) {
    for (std::size_t i = 0; i < p->data.size(); ++i) {
      const double d = static_cast<double>(p->data[i]) - t->data[i];
      sum += d * d;
    }
    count += p->data.size();
  }
  return count ? sum / static_cast<double>(count) : 0.0;
}

namespace {

// Vertex offset of the parabola through log-values at -1, 0, +1.
double log_parabola_offset(float minus, float centre, float plus) {
  if (minus <= 0.0f || centre <= 0.0f || plus <= 0.0f) return 0.0;
  const double lm = std::log(minus), l0 = std::log(centre), lp = std::log(plus);
  const double denom = lm - 2.0 * l0 + lp;
  if (denom >= 0.0) return 0.0;
  return std::clamp(0.5 * (lm - lp) / denom, -0.5, 0.5);
}

}  // namespace

std::vector<Keypoint> extract_keypoints(const HeatmapSet& hm, const DetectConfig& cfg) {
  cfg.validate();
  const int half = cfg.nms_window / 2;
  std::vector<Keypoint> out;
  for (KeypointClass cls : kKeypointClasses) {
    const Tensor& t = hm.channel(cls);
    const int h = static_cast<int>(t.dims[0]);
    const int w = static_cast<int>(t.dims[1]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const float v = t.at(y, x);
        if (v < cfg.intensity_threshold) continue;
        bool is_max = true;
        for (int yy = std::max(0, y - half); yy <= std::min(h - 1, y + half) && is_max; ++yy) {
          for (int xx = std::max(0, x - half); xx <= std::min(w - 1, x + half); ++xx) {
            if ((xx != x || yy != y) && t.at(yy, xx) >= v) {
              is_max = false;
              break;
            }
          }
        }
        if (!is_max) continue;
        Point2 pos{static_cast<double>(x), static_cast<double>(y)};
        if (cfg.subpixel) {
          if (x > 0 && x < w - 1) pos.x += log_parabola_offset(t.at(y, x - 1), v, t.at(y, x + 1));
          if (y > 0 && y < h - 1) pos.y += log_parabola_offset(t.at(y - 1, x), v, t.at(y + 1, x));
        }
        out.push_back({pos, cls, v});
      }
    }
  }
  return out;
}

void write_keypoints_csv(const std::filesystem::path& path, std::span<const Keypoint> kps) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "x,y,class,score\n";
  for (const auto& k : kps) {
    out << k.pos.x << ',' << k.pos.y << ',' << class_code(k.cls) << ','
        << std::setprecision(std::numeric_limits<float>::max_digits10) << k.score
        << std::setprecision(std::numeric_limits<double>::max_digits10) << '\n';
  }
}

std::vector<Keypoint> read_keypoints_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<Keypoint> kps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("x,", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string x, y, cls, score;
    if (!std::getline(ss, x, ',') || !std::getline(ss, y, ',') || !std::getline(ss, cls, ',') ||
        !std::getline(ss, score, ',') || cls.size() != 1) {
      throw Error(ErrorCode::MissingColumn, path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    kps.push_back({{std::stod(x), std::stod(y)}, class_from_code(cls[0]), std::stof(score)});
  }
  return kps;
}

}  // namespace retreg
