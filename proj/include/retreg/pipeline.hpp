#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "retreg/descriptors.hpp"
#include "retreg/error.hpp"
#include "retreg/geometry.hpp"
#include "retreg/image.hpp"
#include "retreg/keypoints.hpp"
#include "retreg/losses.hpp"
#include "retreg/metrics.hpp"

namespace retreg {

/// One row of a pairing file. Relative paths are resolved against the
/// directory holding the pairing file.
struct PairingRecord {
  std::string pair_id;
  std::filesystem::path fixed_path;
  std::filesystem::path moving_path;
  std::string category;
  std::optional<std::filesystem::path> heatmap_f, heatmap_m;
  std::optional<std::filesystem::path> desc_f, desc_m;
  std::optional<std::filesystem::path> mask_f, mask_m;
  std::optional<std::filesystem::path> control_points;
  std::optional<std::filesystem::path> exclusions;
  std::size_t row = 0;  // 1-based line number in the pairing file
};

struct IngestIssue {
  std::size_t row = 0;
  ErrorCode code = ErrorCode::MissingColumn;
  std::string message;
};

struct IngestResult {
  std::vector<PairingRecord> records;
  std::vector<IngestIssue> errors;     // rows that were skipped
  std::vector<std::string> warnings;  // e.g. unknown columns
};

/// Parses a pairing CSV whose header starts with fixed,moving,category and may
/// add heatmap_f, heatmap_m, desc_f, desc_m, mask_f, mask_m, control_points,
/// exclusions and pair_id. Unknown columns are ignored with a warning. A row
/// missing a required field is reported and skipped, or aborts the whole
/// ingest with MissingColumn when `strict`. Throws EmptyFile for a file
/// without a header.
IngestResult ingest_pairings(const std::filesystem::path& path, bool strict = false);

/// Control points, one pair per line as "x_f y_f x_m y_m".
ControlPointSet read_control_points(const std::filesystem::path& path);
void write_control_points(const std::filesystem::path& path, const ControlPointSet& cps);
/// Zero-based control point indices to ignore, whitespace separated.
std::vector<std::size_t> read_exclusions(const std::filesystem::path& path);

struct RunConfig {
  DetectConfig detect;
  RansacConfig ransac{.inlier_threshold_px = 3.0, .max_iterations = 2000, .seed = 0, .confidence = 0.999,
                      .min_inliers = 6, .hypothesis_filter = {}};
  // Reject minimal-sample hypotheses that fail passes_sanity_check.
  bool filter_hypotheses = true;
  LossConfig loss;
  SMConfig sm;
  Size matching{0, 0};  // 0 means: taken from the heatmaps
  Size native{0, 0};    // 0 means: taken from the fixed image
  int threads = 1;
  std::uint64_t seed = 0;
  std::optional<std::filesystem::path> overlay_dir;

  void validate() const;
};

enum class FailureReason { None, TooFewKeypoints, TooFewMatches, NoModelFound, SanityCheckFailed, InputError };
std::string_view to_string(FailureReason r);

inline constexpr std::array<std::string_view, 5> kMetricNames{"IoU", "DICE", "IoM", "SM", "SSIM"};
enum MetricIndex : std::size_t { kIoU, kDice, kIoM, kSM, kSSIM };

struct EvalRecord {
  std::string pair_id;
  std::string category;
  bool registered = false;
  FailureReason reason = FailureReason::None;
  std::string detail;
  std::optional<Homography> h;  // moving -> fixed, native resolution
  std::optional<double> cp_error_px;
  std::array<std::optional<double>, 5> metrics;  // indexed by MetricIndex
  std::size_t keypoints_fixed = 0;
  std::size_t keypoints_moving = 0;
  std::size_t matches = 0;
  std::size_t inliers = 0;
  std::vector<ScoredMatch> scored_matches;  // native resolution, for VTKRS
  std::optional<ControlPointSet> cps;
};

/// Everything register_pair needs, already in memory.
struct PairInputs {
  HeatmapSet heatmaps_f, heatmaps_m;
  Tensor desc_f, desc_m;
  std::optional<Image> image_f, image_m;
  std::optional<VesselMask> mask_f, mask_m;
  std::optional<ControlPointSet> cps;
};

PairInputs load_pair_inputs(const PairingRecord& rec);

/// Per-pair RANSAC seed: cfg.seed XOR hash(pair_id).
std::uint64_t pair_seed(const RunConfig& cfg, std::string_view pair_id);

/// extract -> describe -> mutual class-constrained match -> scale to native
/// resolution -> RANSAC -> sanity check -> metrics. Never throws for
/// registration failures; they are reported through `reason`.
EvalRecord register_pair_inputs(const PairInputs& in, const RunConfig& cfg, const std::string& pair_id,
                                const std::string& category = {});
EvalRecord register_pair(const PairingRecord& rec, const RunConfig& cfg);

/// Checkerboard of the fixed image and the moving image warped by `h`.
Image checkerboard_overlay(const Image& fixed, const Image& moving, const Homography& h, int tile = 32);

struct MetricTable {
  std::size_t total = 0;
  std::size_t registered = 0;
  std::array<std::optional<double>, 5> raw;
  std::array<std::optional<double>, 5> normalized;
  std::optional<double> mean_cp_error_px;
  std::optional<double> registration_score;
  std::optional<VtkrsResult> vtkrs;
};

struct DatasetReport {
  std::vector<EvalRecord> records;  // ordered by pair_id
  MetricTable overall;
  std::vector<std::pair<std::string, MetricTable>> by_category;  // ordered by category
};

/// Registration score and VTKRS use the pairs that carry control points.
MetricTable summarize(std::span<const EvalRecord> records, const RunConfig& cfg);

/// Registers every pairing on a pool of cfg.threads workers. The report does
/// not depend on the thread count.
DatasetReport evaluate_dataset(std::span<const PairingRecord> pairings, const RunConfig& cfg);

std::string report_json(const DatasetReport& report);
std::string record_json(const EvalRecord& record);
void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records);

}  // namespace retreg
