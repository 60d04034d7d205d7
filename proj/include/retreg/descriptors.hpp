#pragma once

#include <Eigen/Core>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "retreg/keypoints.hpp"
#include "retreg/tensor.hpp"

namespace retreg {

/// Unit-norm feature vector.
struct Descriptor {
  std::vector<float> v;

  std::size_t dim() const { return v.size(); }
};

/// Throws ZeroVector when the norm is below 1e-12.
Descriptor l2_normalize(std::span<const float> v);

double cosine_sim(const Descriptor& a, const Descriptor& b);

/// Nearest-pixel lookup into a [H, W, D] descriptor map, followed by L2
/// normalization.
std::vector<Descriptor> sample_descriptors(const Tensor& map, std::span<const Keypoint> kps);

struct Match {
  std::size_t fixed_idx = 0;
  std::size_t moving_idx = 0;
  KeypointClass cls = KeypointClass::Crossover;
  double similarity = 0.0;

  bool operator==(const Match&) const = default;
};

/// (row, col) pairs that are each other's argmax in a similarity matrix.
/// Ties resolve toward the lower index.
std::vector<std::pair<Eigen::Index, Eigen::Index>> mutual_argmax(const Eigen::MatrixXd& sim);

/// Bidirectional nearest-neighbour matching by cosine similarity, run
/// independently within each keypoint class. No ratio test or cutoff.
std::vector<Match> match_mutual(std::span<const Keypoint> fixed_kps, std::span<const Descriptor> fixed_descs,
                                std::span<const Keypoint> moving_kps, std::span<const Descriptor> moving_descs);

void write_matches_csv(const std::filesystem::path& path, std::span<const Match> matches);
std::vector<Match> read_matches_csv(const std::filesystem::path& path);

}  // namespace retreg
