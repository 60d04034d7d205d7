#include "retreg/descriptors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "retreg/error.hpp"

namespace retreg {

Descriptor l2_normalize(std::span<const float> v) {
  double sq = 0.0;
  for (float x : v) sq += static_cast<double>(x) * x;
  const double norm = std::sqrt(sq);
  if (!(norm > 1e-12)) throw Error(ErrorCode::ZeroVector, "cannot normalize a zero vector");
  Descriptor d;
  d.v.reserve(v.size());
  for (float x : v) d.v.push_back(static_cast<float>(x / norm));
  return d;
}

double cosine_sim(const Descriptor& a, const Descriptor& b) {
  if (a.dim() != b.dim()) throw Error(ErrorCode::DimMismatch, "descriptor dimensions differ");
  double dot = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i) dot += static_cast<double>(a.v[i]) * b.v[i];
  return std::clamp(dot, -1.0, 1.0);
}

std::vector<Descriptor> sample_descriptors(const Tensor& map, std::span<const Keypoint> kps) {
  if (map.rank() != 3) throw Error(ErrorCode::DimMismatch, "descriptor map must be [H, W, D]");
  const auto h = static_cast<long>(map.dims[0]);
  const auto w = static_cast<long>(map.dims[1]);
  const std::size_t d = map.dims[2];
  std::vector<Descriptor> out;
  out.reserve(kps.size());
  for (const auto& kp : kps) {
    const long x = std::lround(kp.pos.x);
    const long y = std::lround(kp.pos.y);
    if (!std::isfinite(kp.pos.x) || !std::isfinite(kp.pos.y) || x < 0 || y < 0 || x >= w || y >= h) {
      throw Error(ErrorCode::OutOfBounds, "keypoint outside descriptor map");
    }
    const float* base = &map.data[(static_cast<std::size_t>(y) * w + x) * d];
    out.push_back(l2_normalize({base, d}));
  }
  return out;
}

std::vector<std::pair<Eigen::Index, Eigen::Index>> mutual_argmax(const Eigen::MatrixXd& sim) {
  std::vector<std::pair<Eigen::Index, Eigen::Index>> out;
  if (sim.rows() == 0 || sim.cols() == 0) return out;
  // maxCoeff reports the first maximum, which gives lower-index tie-breaking.
  std::vector<Eigen::Index> best_col(sim.rows()), best_row(sim.cols());
  for (Eigen::Index r = 0; r < sim.rows(); ++r) sim.row(r).maxCoeff(&best_col[r]);
  for (Eigen::Index c = 0; c < sim.cols(); ++c) sim.col(c).maxCoeff(&best_row[c]);
  for (Eigen::Index r = 0; r < sim.rows(); ++r) {
    if (best_row[best_col[r]] == r) out.emplace_back(r, best_col[r]);
  }
  return out;
}

std::vector<Match> match_mutual(std::span<const Keypoint> fixed_kps, std::span<const Descriptor> fixed_descs,
                                std::span<const Keypoint> moving_kps, std::span<const Descriptor> moving_descs) {
  if (fixed_kps.size() != fixed_descs.size() || moving_kps.size() != moving_descs.size()) {
    throw Error(ErrorCode::LengthMismatch, "descriptor lists must align with keypoint lists");
  }
  std::vector<Match> matches;
  for (KeypointClass cls : kKeypointClasses) {
    std::vector<std::size_t> fi, mi;
    for (std::size_t i = 0; i < fixed_kps.size(); ++i)
      if (fixed_kps[i].cls == cls) fi.push_back(i);
    for (std::size_t j = 0; j < moving_kps.size(); ++j)
      if (moving_kps[j].cls == cls) mi.push_back(j);
    if (fi.empty() || mi.empty()) continue;

    const std::size_t dim = fixed_descs[fi[0]].dim();
    Eigen::MatrixXd a(static_cast<Eigen::Index>(fi.size()), static_cast<Eigen::Index>(dim));
    Eigen::MatrixXd b(static_cast<Eigen::Index>(mi.size()), static_cast<Eigen::Index>(dim));
    for (std::size_t r = 0; r < fi.size(); ++r) {
      const auto& v = fixed_descs[fi[r]].v;
      if (v.size() != dim) throw Error(ErrorCode::DimMismatch, "descriptor dimensions differ");
      for (std::size_t k = 0; k < dim; ++k) a(r, k) = v[k];
    }
    for (std::size_t r = 0; r < mi.size(); ++r) {
      const auto& v = moving_descs[mi[r]].v;
      if (v.size() != dim) throw Error(ErrorCode::DimMismatch, "descriptor dimensions differ");
      for (std::size_t k = 0; k < dim; ++k) b(r, k) = v[k];
    }
    const Eigen::MatrixXd sim = a * b.transpose();
    for (auto [r, c] : mutual_argmax(sim)) {
      matches.push_back({fi[r], mi[c], cls, std::clamp(sim(r, c), -1.0, 1.0)});
    }
  }
  std::sort(matches.begin(), matches.end(),
            [](const Match& x, const Match& y) { return x.fixed_idx < y.fixed_idx; });
  return matches;
}

void write_matches_csv(const std::filesystem::path& path, std::span<const Match> matches) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  out << "fixed_idx,moving_idx,class,similarity\n";
  for (const auto& m : matches) {
    out << m.fixed_idx << ',' << m.moving_idx << ',' << class_code(m.cls) << ',' << m.similarity << '\n';
  }
}

std::vector<Match> read_matches_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<Match> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || (lineno == 1 && line.rfind("fixed_idx", 0) == 0)) continue;
    std::stringstream ss(line);
    std::string f, m, c, s;
    if (!std::getline(ss, f, ',') || !std::getline(ss, m, ',') || !std::getline(ss, c, ',') ||
        !std::getline(ss, s, ',') || c.size() != 1) {
      throw Error(ErrorCode::MissingColumn, path.string() + ":" + std::to_string(lineno) + ": malformed row");
    }
    out.push_back({std::stoul(f), std::stoul(m), class_from_code(c[0]), std::stod(s)});
  }
  return out;
}

}  // namespace retreg
