#include "retreg/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "retreg/error.hpp"
#include "retreg/util.hpp"

namespace retreg {

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(trim(cell));
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

enum class Column { Fixed, Moving, Category, HeatmapF, HeatmapM, DescF, DescM, MaskF, MaskM, ControlPoints, Exclusions, PairId };

const std::map<std::string, Column, std::less<>>& known_columns() {
  static const std::map<std::string, Column, std::less<>> cols{
      {"fixed", Column::Fixed},         {"moving", Column::Moving},
      {"category", Column::Category},   {"heatmap_f", Column::HeatmapF},
      {"heatmap_m", Column::HeatmapM},  {"desc_f", Column::DescF},
      {"desc_m", Column::DescM},        {"mask_f", Column::MaskF},
      {"mask_m", Column::MaskM},        {"control_points", Column::ControlPoints},
      {"exclusions", Column::Exclusions}, {"pair_id", Column::PairId},
  };
  return cols;
}

std::string default_pair_id(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%06zu", index);
  return buf;
}

}  // namespace

IngestResult ingest_pairings(const std::filesystem::path& path, bool strict) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  const std::filesystem::path base = path.parent_path();
  auto resolve = [&](const std::string& p) -> std::filesystem::path {
    std::filesystem::path fp(p);
    return fp.is_absolute() ? fp : base / fp;
  };

  IngestResult result;
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::optional<Column>> header;
  while (std::getline(in, line)) {
    ++lineno;
    if (!trim(line).empty()) break;
  }
  if (trim(line).empty()) throw Error(ErrorCode::EmptyFile, path.string() + " has no header");
  for (const auto& name : split_csv_line(line)) {
    const auto it = known_columns().find(name);
    if (it == known_columns().end()) {
      result.warnings.push_back("ignoring unknown column '" + name + "'");
      header.emplace_back();
    } else {
      header.emplace_back(it->second);
    }
  }
  for (Column required : {Column::Fixed, Column::Moving, Column::Category}) {
    if (std::find(header.begin(), header.end(), std::optional<Column>(required)) == header.end())
      throw Error(ErrorCode::MissingColumn, path.string() + ": header lacks fixed, moving or category");
  }

  std::size_t index = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(line);
    PairingRecord rec;
    rec.row = lineno;
    std::string problem;
    for (std::size_t c = 0; c < header.size(); ++c) {
      if (!header[c]) continue;
      const std::string value = c < cells.size() ? cells[c] : std::string();
      switch (*header[c]) {
        case Column::Fixed:
          if (value.empty()) problem = "missing fixed path";
          else rec.fixed_path = resolve(value);
          break;
        case Column::Moving:
          if (value.empty()) problem = "missing moving path";
          else rec.moving_path = resolve(value);
          break;
        case Column::Category: rec.category = value; break;
        case Column::PairId: rec.pair_id = value; break;
        default: {
          if (value.empty()) break;
          const auto p = resolve(value);
          switch (*header[c]) {
            case Column::HeatmapF: rec.heatmap_f = p; break;
            case Column::HeatmapM: rec.heatmap_m = p; break;
            case Column::DescF: rec.desc_f = p; break;
            case Column::DescM: rec.desc_m = p; break;
            case Column::MaskF: rec.mask_f = p; break;
            case Column::MaskM: rec.mask_m = p; break;
            case Column::ControlPoints: rec.control_points = p; break;
            case Column::Exclusions: rec.exclusions = p; break;
            default: break;
          }
        }
      }
    }
    if (!problem.empty()) {
      const std::string msg = path.string() + ":" + std::to_string(lineno) + ": " + problem;
      if (strict) throw Error(ErrorCode::MissingColumn, msg);
      result.errors.push_back({lineno, ErrorCode::MissingColumn, msg});
      ++index;
      continue;
    }
    if (rec.pair_id.empty()) rec.pair_id = default_pair_id(index);
    ++index;
    result.records.push_back(std::move(rec));
  }
  return result;
}

ControlPointSet read_control_points(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  ControlPointSet cps;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::istringstream ss(line);
    double xf, yf, xm, ym;
    if (!(ss >> xf >> yf >> xm >> ym))
      throw Error(ErrorCode::MissingColumn, path.string() + ":" + std::to_string(lineno) + ": need x_f y_f x_m y_m");
    cps.pairs.push_back({{xf, yf}, {xm, ym}});
  }
  return cps;
}

void write_control_points(const std::filesystem::path& path, const ControlPointSet& cps) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (const auto& [f, m] : cps.pairs) out << f.x << ' ' << f.y << ' ' << m.x << ' ' << m.y << '\n';
}

std::vector<std::size_t> read_exclusions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::vector<std::size_t> out;
  long long v;
  while (in >> v) {
    if (v < 0) throw Error(ErrorCode::InvalidArgument, path.string() + ": negative exclusion index");
    out.push_back(static_cast<std::size_t>(v));
  }
  if (!in.eof()) throw Error(ErrorCode::InvalidArgument, path.string() + ": exclusions must be integers");
  return out;
}

void RunConfig::validate() const {
  detect.validate();
  loss.validate();
  sm.validate();
  if (matching.width < 0 || matching.height < 0 || native.width < 0 || native.height < 0)
    throw Error(ErrorCode::InvalidArgument, "resolutions must be positive");
  if ((matching.width == 0) != (matching.height == 0) || (native.width == 0) != (native.height == 0))
    throw Error(ErrorCode::InvalidArgument, "give both width and height of a resolution");
  if (threads < 1) throw Error(ErrorCode::InvalidArgument, "threads must be >= 1");
  if (!(ransac.inlier_threshold_px > 0.0) || ransac.max_iterations < 1)
    throw Error(ErrorCode::InvalidArgument, "invalid RANSAC settings");
}

std::string_view to_string(FailureReason r) {
  switch (r) {
    case FailureReason::None: return "None";
    case FailureReason::TooFewKeypoints: return "TooFewKeypoints";
    case FailureReason::TooFewMatches: return "TooFewMatches";
    case FailureReason::NoModelFound: return "NoModelFound";
    case FailureReason::SanityCheckFailed: return "SanityCheckFailed";
    case FailureReason::InputError: return "InputError";
  }
  return "?";
}

PairInputs load_pair_inputs(const PairingRecord& rec) {
  if (!rec.heatmap_f || !rec.heatmap_m || !rec.desc_f || !rec.desc_m)
    throw Error(ErrorCode::MissingColumn, "pair " + rec.pair_id + " lacks heatmap or descriptor tensors");
  PairInputs in;
  in.heatmaps_f = HeatmapSet::from_tensor(read_tensor(*rec.heatmap_f));
  in.heatmaps_m = HeatmapSet::from_tensor(read_tensor(*rec.heatmap_m));
  in.desc_f = read_tensor(*rec.desc_f);
  in.desc_m = read_tensor(*rec.desc_m);
  in.image_f = read_png(rec.fixed_path);
  in.image_m = read_png(rec.moving_path);
  if (rec.mask_f && rec.mask_m) {
    in.mask_f = read_mask_png(*rec.mask_f);
    in.mask_m = read_mask_png(*rec.mask_m);
  }
  if (rec.control_points) {
    in.cps = read_control_points(*rec.control_points);
    if (rec.exclusions) in.cps->exclusions = read_exclusions(*rec.exclusions);
  }
  return in;
}

std::uint64_t pair_seed(const RunConfig& cfg, std::string_view pair_id) { return cfg.seed ^ hash_string(pair_id); }

namespace {

struct Described {
  std::vector<Keypoint> keypoints;
  std::vector<Descriptor> descriptors;
};

// Keypoints whose descriptor cannot be formed (zero vector, outside the map)
// are dropped rather than failing the pair.
Described describe(const std::vector<Keypoint>& kps, const Tensor& map) {
  Described out;
  for (const auto& kp : kps) {
    try {
      auto d = sample_descriptors(map, std::span<const Keypoint>(&kp, 1));
      out.keypoints.push_back(kp);
      out.descriptors.push_back(std::move(d.front()));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::ZeroVector && e.code() != ErrorCode::OutOfBounds) throw;
    }
  }
  return out;
}

Size size_of(const HeatmapSet& hm) { return {hm.width(), hm.height()}; }

void compute_metrics(EvalRecord& rec, const PairInputs& in, Size native, const SMConfig& sm) {
  if (!in.image_f || !in.image_m) return;
  const Homography& h = *rec.h;
  const auto warped = warp_image_with_validity(*in.image_m, h, native);
  // The moving image contributes only where it was resampled from real pixels.
  VesselMask valid = warped.valid;
  if (in.mask_f && in.mask_m) {
    const VesselMask moved = warp_mask(*in.mask_m, h, native);
    const OverlapCounts c = count_overlap(*in.mask_f, moved, valid);
    rec.metrics[kIoU] = iou(c);
    rec.metrics[kDice] = dice(c);
    rec.metrics[kIoM] = iom(c);
  }
  const Image gf = to_grayscale_checked(*in.image_f).image;
  const Image gm = to_grayscale_checked(warped.image).image;
  try {
    rec.metrics[kSM] = sm_metric(gf, gm, sm, &valid);
    rec.metrics[kSSIM] = ssim_metric(gf, gm, sm, &valid);
  } catch (const Error& e) {
    if (e.code() != ErrorCode::ImageTooSmall) throw;
  }
}

}  // namespace

EvalRecord register_pair_inputs(const PairInputs& in, const RunConfig& cfg, const std::string& pair_id,
                                const std::string& category) {
  cfg.validate();
  EvalRecord rec;
  rec.pair_id = pair_id;
  rec.category = category;
  rec.cps = in.cps;

  const Size matching = cfg.matching.width > 0 ? cfg.matching : size_of(in.heatmaps_f);
  if (size_of(in.heatmaps_f) != matching || size_of(in.heatmaps_m) != matching)
    throw Error(ErrorCode::DimMismatch, "heatmaps do not match the matching resolution");
  Size native = cfg.native;
  if (native.width == 0) native = in.image_f ? Size{in.image_f->width, in.image_f->height} : matching;
  if (in.image_f && (in.image_f->width != native.width || in.image_f->height != native.height))
    throw Error(ErrorCode::DimMismatch, "fixed image does not match the native resolution");
  if (in.image_m && (in.image_m->width != native.width || in.image_m->height != native.height))
    throw Error(ErrorCode::DimMismatch, "moving image does not match the native resolution");

  const Described f = describe(extract_keypoints(in.heatmaps_f, cfg.detect), in.desc_f);
  const Described m = describe(extract_keypoints(in.heatmaps_m, cfg.detect), in.desc_m);
  rec.keypoints_fixed = f.keypoints.size();
  rec.keypoints_moving = m.keypoints.size();
  if (f.keypoints.size() < 4 || m.keypoints.size() < 4) {
    rec.reason = FailureReason::TooFewKeypoints;
    rec.detail = std::to_string(rec.keypoints_fixed) + " fixed / " + std::to_string(rec.keypoints_moving) +
                 " moving keypoints";
    return rec;
  }

  const auto matches = match_mutual(f.keypoints, f.descriptors, m.keypoints, m.descriptors);
  rec.matches = matches.size();
  std::vector<Point2> fixed_pts, moving_pts;
  for (const auto& mt : matches) {
    fixed_pts.push_back(f.keypoints[mt.fixed_idx].pos);
    moving_pts.push_back(m.keypoints[mt.moving_idx].pos);
  }
  fixed_pts = scale_points(fixed_pts, matching, native);
  moving_pts = scale_points(moving_pts, matching, native);
  std::vector<Correspondence> corr;
  for (std::size_t i = 0; i < matches.size(); ++i) {
    corr.push_back({moving_pts[i], fixed_pts[i]});
    rec.scored_matches.push_back({fixed_pts[i], moving_pts[i], matches[i].cls, matches[i].similarity});
  }
  if (corr.size() < 4) {
    rec.reason = FailureReason::TooFewMatches;
    rec.detail = std::to_string(corr.size()) + " mutual matches";
    return rec;
  }

  RansacConfig rc = cfg.ransac;
  rc.seed = pair_seed(cfg, pair_id);
  if (cfg.filter_hypotheses) rc.hypothesis_filter = [native](const Homography& h) { return passes_sanity_check(h, native); };
  RansacResult fit;
  try {
    fit = ransac_homography(corr, rc);
  } catch (const Error& e) {
    rec.reason = FailureReason::NoModelFound;
    rec.detail = e.what();
    return rec;
  }
  rec.inliers = fit.inliers.size();
  if (!passes_sanity_check(fit.model, native)) {
    rec.reason = FailureReason::SanityCheckFailed;
    rec.detail = "estimated transform fails the plausibility test";
    return rec;
  }
  rec.registered = true;
  rec.h = fit.model;
  if (in.cps) rec.cp_error_px = cp_error(*rec.h, *in.cps);
  compute_metrics(rec, in, native, cfg.sm);
  return rec;
}

EvalRecord register_pair(const PairingRecord& rec, const RunConfig& cfg) {
  PairInputs in;
  try {
    in = load_pair_inputs(rec);
  } catch (const Error& e) {
    EvalRecord out;
    out.pair_id = rec.pair_id;
    out.category = rec.category;
    out.reason = FailureReason::InputError;
    out.detail = e.what();
    return out;
  }
  EvalRecord out;
  try {
    out = register_pair_inputs(in, cfg, rec.pair_id, rec.category);
  } catch (const Error& e) {
    out = EvalRecord{};
    out.pair_id = rec.pair_id;
    out.category = rec.category;
    out.reason = FailureReason::InputError;
    out.detail = e.what();
    return out;
  }
  if (cfg.overlay_dir && out.registered && in.image_f && in.image_m) {
    std::filesystem::create_directories(*cfg.overlay_dir);
    write_png(*cfg.overlay_dir / (rec.pair_id + "_overlay.png"), checkerboard_overlay(*in.image_f, *in.image_m, *out.h));
  }
  return out;
}

Image checkerboard_overlay(const Image& fixed, const Image& moving, const Homography& h, int tile) {
  if (tile < 1) throw Error(ErrorCode::InvalidArgument, "tile must be >= 1");
  if (fixed.channels != moving.channels) throw Error(ErrorCode::DimMismatch, "channel counts differ");
  const Image warped = warp_image(moving, h, {fixed.width, fixed.height});
  Image out = fixed;
  for (int y = 0; y < fixed.height; ++y)
    for (int x = 0; x < fixed.width; ++x)
      if (((x / tile) + (y / tile)) % 2 == 1)
        for (int c = 0; c < fixed.channels; ++c) out.at(x, y, c) = warped.at(x, y, c);
  return out;
}

MetricTable summarize(std::span<const EvalRecord> records, const RunConfig& cfg) {
  MetricTable t;
  t.total = records.size();
  std::vector<double> cp;
  std::array<std::vector<double>, 5> values;
  for (const auto& r : records) {
    if (!r.registered) continue;
    ++t.registered;
    for (std::size_t k = 0; k < values.size(); ++k)
      if (r.metrics[k]) values[k].push_back(*r.metrics[k]);
    if (r.cp_error_px) cp.push_back(*r.cp_error_px);
  }
  for (std::size_t k = 0; k < values.size(); ++k) {
    if (values[k].empty()) {
      if (t.total > 0 && t.registered == 0) t.normalized[k] = 0.0;
      continue;
    }
    t.raw[k] = pairwise_sum(values[k]) / static_cast<double>(values[k].size());
    t.normalized[k] = normalize_report(*t.raw[k], t.registered, t.total, Direction::HigherBetter);
  }
  if (!cp.empty()) t.mean_cp_error_px = pairwise_sum(cp) / static_cast<double>(cp.size());

  std::vector<std::optional<double>> errors;
  std::vector<VtkrsPair> vt;
  for (const auto& r : records) {
    if (!r.cps) continue;
    errors.push_back(r.registered ? r.cp_error_px : std::nullopt);
    vt.push_back({r.scored_matches, *r.cps, pair_seed(cfg, r.pair_id)});
  }
  if (!errors.empty()) {
    t.registration_score = registration_score(errors);
    RansacConfig rc;
    rc.inlier_threshold_px = cfg.ransac.inlier_threshold_px;
    rc.max_iterations = cfg.ransac.max_iterations;
    rc.confidence = cfg.ransac.confidence;
    t.vtkrs = vtkrs(vt, rc);
  }
  return t;
}

DatasetReport evaluate_dataset(std::span<const PairingRecord> pairings, const RunConfig& cfg) {
  cfg.validate();
  DatasetReport report;
  report.records.resize(pairings.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < pairings.size(); i = next++) report.records[i] = register_pair(pairings[i], cfg);
  };
  const auto n_threads = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), std::max<std::size_t>(pairings.size(), 1));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();

  std::stable_sort(report.records.begin(), report.records.end(),
                   [](const EvalRecord& a, const EvalRecord& b) { return a.pair_id < b.pair_id; });
  report.overall = summarize(report.records, cfg);
  std::map<std::string, std::vector<EvalRecord>> groups;
  for (const auto& r : report.records)
    if (!r.category.empty()) groups[r.category].push_back(r);
  for (const auto& [cat, recs] : groups) report.by_category.emplace_back(cat, summarize(recs, cfg));
  return report;
}

namespace {

using ojson = nlohmann::ordered_json;

ojson opt_json(const std::optional<double>& v) { return v ? ojson(*v) : ojson(nullptr); }

ojson table_json(const MetricTable& t) {
  ojson j;
  j["pairs_total"] = t.total;
  ojson raw, norm;
  raw["#Pairs"] = t.registered;
  norm["#Pairs"] = t.registered;
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) {
    raw[std::string(kMetricNames[k])] = opt_json(t.raw[k]);
    norm[std::string(kMetricNames[k])] = opt_json(t.normalized[k]);
  }
  j["raw"] = raw;
  j["normalized"] = norm;
  j["mean_cp_error_px"] = opt_json(t.mean_cp_error_px);
  j["registration_score"] = opt_json(t.registration_score);
  if (t.vtkrs) {
    j["vtkrs"] = t.vtkrs->score;
    j["vtkrs_per_k"] = t.vtkrs->per_k;
  } else {
    j["vtkrs"] = nullptr;
  }
  return j;
}

std::string fmt(const std::optional<double>& v) {
  if (!v) return {};
  std::ostringstream ss;
  ss << std::setprecision(std::numeric_limits<double>::max_digits10) << *v;
  return ss.str();
}

ojson record_to_json(const EvalRecord& r) {
  ojson p;
  p["pair_id"] = r.pair_id;
  p["category"] = r.category;
  p["registered"] = r.registered;
  p["reason"] = std::string(to_string(r.reason));
  p["cp_error_px"] = opt_json(r.cp_error_px);
  for (std::size_t k = 0; k < kMetricNames.size(); ++k) p[std::string(kMetricNames[k])] = opt_json(r.metrics[k]);
  p["matches"] = r.matches;
  p["inliers"] = r.inliers;
  if (r.h) {
    const auto rm = r.h->row_major();
    p["H"] = std::vector<double>(rm.begin(), rm.end());
  } else {
    p["H"] = nullptr;
  }
  return p;
}

}  // namespace

std::string record_json(const EvalRecord& record) {
  ojson j = record_to_json(record);
  j["detail"] = record.detail;
  return j.dump(2) + "\n";
}

std::string report_json(const DatasetReport& report) {
  ojson j = table_json(report.overall);
  ojson cats = ojson::object();
  for (const auto& [name, table] : report.by_category) cats[name] = table_json(table);
  j["categories"] = cats;
  ojson pairs = ojson::array();
  for (const auto& r : report.records) pairs.push_back(record_to_json(r));
  j["pairs"] = pairs;
  return j.dump(2) + "\n";
}

void write_records_csv(const std::filesystem::path& path, std::span<const EvalRecord> records) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out << "pair_id,category,registered,reason,cp_error_px";
  for (auto name : kMetricNames) out << ',' << name;
  out << ",keypoints_fixed,keypoints_moving,matches,inliers";
  for (int i = 0; i < 9; ++i) out << ",h" << i / 3 << i % 3;
  out << '\n';
  for (const auto& r : records) {
    out << r.pair_id << ',' << r.category << ',' << (r.registered ? 1 : 0) << ',' << to_string(r.reason) << ','
        << fmt(r.cp_error_px);
    for (const auto& m : r.metrics) out << ',' << fmt(m);
    out << ',' << r.keypoints_fixed << ',' << r.keypoints_moving << ',' << r.matches << ',' << r.inliers;
    if (r.h) {
      for (double v : r.h->row_major()) out << ',' << fmt(v);
    } else {
      for (int i = 0; i < 9; ++i) out << ',';
    }
    out << '\n';
  }
}

}  // namespace retreg
