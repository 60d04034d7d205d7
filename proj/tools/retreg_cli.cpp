// Command-line front end: keypoint extraction, matching, pair registration,
// dataset evaluation, loss checks, embedding training and synthetic data.

#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "retreg/descriptors.hpp"
#include "retreg/error.hpp"
#include "retreg/keypoints.hpp"
#include "retreg/losses.hpp"
#include "retreg/pipeline.hpp"
#include "retreg/synth.hpp"

using namespace retreg;
using ojson = nlohmann::ordered_json;

namespace {

void add_detect_flags(CLI::App* cmd, DetectConfig& d) {
  cmd->add_option("--threshold", d.intensity_threshold, "Heatmap intensity threshold")->capture_default_str();
  cmd->add_option("--nms-window", d.nms_window, "Non-maximum suppression window (odd)")->capture_default_str();
  cmd->add_flag("!--no-subpixel", d.subpixel, "Disable sub-pixel peak refinement");
}

void add_run_flags(CLI::App* cmd, RunConfig& cfg) {
  add_detect_flags(cmd, cfg.detect);
  cmd->add_option("--ransac-threshold", cfg.ransac.inlier_threshold_px, "RANSAC inlier threshold (native px)")
      ->capture_default_str();
  cmd->add_option("--ransac-iterations", cfg.ransac.max_iterations, "RANSAC iteration cap")->capture_default_str();
  cmd->add_option("--min-inliers", cfg.ransac.min_inliers, "Inliers needed to accept a model")->capture_default_str();
  cmd->add_flag("!--no-hypothesis-filter", cfg.filter_hypotheses, "Keep implausible minimal-sample hypotheses");
  cmd->add_option("--matching-width", cfg.matching.width, "Matching resolution width (0: from heatmaps)");
  cmd->add_option("--matching-height", cfg.matching.height, "Matching resolution height (0: from heatmaps)");
  cmd->add_option("--native-width", cfg.native.width, "Native resolution width (0: from fixed image)");
  cmd->add_option("--native-height", cfg.native.height, "Native resolution height (0: from fixed image)");
  cmd->add_option("--seed", cfg.seed, "Base seed")->capture_default_str();
}

void write_text(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path);
  out << text;
}

struct InstanceOptions {
  std::string loss = "fastap";
  std::uint64_t seed = 0;
  std::size_t views = 3;  // augmented views N; the batch holds N + 1
  std::size_t keypoints = 8;
  std::size_t dim = 16;
};

void add_instance_flags(CLI::App* cmd, InstanceOptions& o, LossConfig& loss) {
  cmd->add_option("--loss", o.loss, "supcon | mp-infonce | mp-npair | fastap")->capture_default_str();
  cmd->add_option("--seed", o.seed, "Instance seed")->capture_default_str();
  cmd->add_option("--views", o.views, "Augmented views N")->capture_default_str();
  cmd->add_option("--keypoints", o.keypoints, "Keypoints K")->capture_default_str();
  cmd->add_option("--dim", o.dim, "Embedding dimension D")->capture_default_str();
  cmd->add_option("--tau", loss.tau, "Temperature")->capture_default_str();
  cmd->add_option("--bins", loss.bins, "FastAP histogram bins Q")->capture_default_str();
}

LossKind require_loss(const std::string& name) {
  const auto kind = parse_loss_kind(name);
  if (!kind) throw Error(ErrorCode::InvalidArgument, "unknown loss '" + name + "'");
  return *kind;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retinal keypoint registration and contrastive-loss toolkit"};
  app.require_subcommand(1);

  // extract-keypoints
  std::string heatmap_path, out_path;
  DetectConfig detect;
  auto* extract = app.add_subcommand("extract-keypoints", "Local maxima of a [3,H,W] heatmap tensor");
  extract->add_option("--heatmap", heatmap_path, "Heatmap tensor")->required();
  extract->add_option("--out", out_path, "Keypoint CSV (default stdout)");
  add_detect_flags(extract, detect);

  // match
  std::string kps_f, kps_m, desc_f, desc_m;
  auto* match = app.add_subcommand("match", "Mutual class-constrained descriptor matching");
  match->add_option("--keypoints-f", kps_f, "Fixed keypoint CSV")->required();
  match->add_option("--keypoints-m", kps_m, "Moving keypoint CSV")->required();
  match->add_option("--desc-f", desc_f, "Fixed descriptor tensor [H,W,D]")->required();
  match->add_option("--desc-m", desc_m, "Moving descriptor tensor [H,W,D]")->required();
  match->add_option("--out", out_path, "Match CSV (default stdout)");

  // register
  PairingRecord single;
  std::string overlay_path;
  RunConfig run;
  auto* reg = app.add_subcommand("register", "Register one pair");
  reg->add_option("--fixed", single.fixed_path, "Fixed image PNG")->required();
  reg->add_option("--moving", single.moving_path, "Moving image PNG")->required();
  reg->add_option("--heatmap-f", single.heatmap_f, "Fixed heatmap tensor")->required();
  reg->add_option("--heatmap-m", single.heatmap_m, "Moving heatmap tensor")->required();
  reg->add_option("--desc-f", single.desc_f, "Fixed descriptor tensor")->required();
  reg->add_option("--desc-m", single.desc_m, "Moving descriptor tensor")->required();
  reg->add_option("--mask-f", single.mask_f, "Fixed vessel mask PNG");
  reg->add_option("--mask-m", single.mask_m, "Moving vessel mask PNG");
  reg->add_option("--control-points", single.control_points, "Control point file (x_f y_f x_m y_m per line)");
  reg->add_option("--exclusions", single.exclusions, "Control point indices to ignore");
  reg->add_option("--pair-id", single.pair_id, "Pair identifier (seeds RANSAC)")->capture_default_str();
  reg->add_option("--out", out_path, "Record JSON (default stdout)");
  reg->add_option("--overlay", overlay_path, "Write a checkerboard overlay PNG");
  add_run_flags(reg, run);

  // evaluate
  std::string pairings_path, out_json, out_csv, overlay_dir;
  bool strict = false;
  auto* eval = app.add_subcommand("evaluate", "Register every pair of a pairing file and summarize");
  eval->add_option("--pairings", pairings_path, "Pairing CSV")->required();
  eval->add_option("--out-json", out_json, "Summary JSON (default stdout)");
  eval->add_option("--out-csv", out_csv, "Per-pair CSV");
  eval->add_option("--overlay-dir", overlay_dir, "Directory for per-pair overlay PNGs");
  eval->add_option("--threads", run.threads, "Worker threads")->capture_default_str();
  eval->add_flag("--strict", strict, "Abort on the first malformed pairing row");
  add_run_flags(eval, run);

  // loss-check
  InstanceOptions inst;
  LossConfig loss_cfg;
  double eps = 1e-4;
  auto* lcheck = app.add_subcommand("loss-check", "Finite-difference check of a loss gradient");
  add_instance_flags(lcheck, inst, loss_cfg);
  lcheck->add_option("--eps", eps, "Finite-difference step")->capture_default_str();

  // train-embed
  OptimizeConfig opt;
  auto* train = app.add_subcommand("train-embed", "Optimize random embeddings with one loss");
  add_instance_flags(train, inst, loss_cfg);
  train->add_option("--steps", opt.steps, "Gradient steps")->capture_default_str();
  train->add_option("--lr", opt.learning_rate, "Learning rate")->capture_default_str();
  train->add_option("--momentum", opt.momentum, "Momentum")->capture_default_str();

  // synth-gen
  SynthConfig synth;
  std::string synth_dir, category = "synthetic";
  int count = 1;
  auto* sgen = app.add_subcommand("synth-gen", "Write synthetic pairs and a pairing file");
  sgen->add_option("--out-dir", synth_dir, "Output directory")->required();
  sgen->add_option("--count", count, "Number of pairs")->capture_default_str();
  sgen->add_option("--seed", synth.seed, "Seed of the first pair; pair i uses seed + i")->capture_default_str();
  sgen->add_option("--keypoints", synth.n_keypoints, "Keypoints per view")->capture_default_str();
  sgen->add_option("--overlap", synth.overlap_frac, "Shared keypoint fraction")->capture_default_str();
  sgen->add_option("--noise", synth.desc_noise_sigma, "Descriptor noise sigma")->capture_default_str();
  sgen->add_option("--outliers", synth.outlier_frac, "Outlier descriptor fraction")->capture_default_str();
  sgen->add_option("--category", category, "Category tag")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*extract) {
      const auto hm = HeatmapSet::from_tensor(read_tensor(heatmap_path));
      const auto kps = extract_keypoints(hm, detect);
      if (out_path.empty()) {
        for (const auto& k : kps) std::cout << k.pos.x << ',' << k.pos.y << ',' << class_code(k.cls) << ',' << k.score << '\n';
      } else {
        write_keypoints_csv(out_path, kps);
      }
    } else if (*match) {
      const auto kf = read_keypoints_csv(kps_f);
      const auto km = read_keypoints_csv(kps_m);
      const auto df = sample_descriptors(read_tensor(desc_f), kf);
      const auto dm = sample_descriptors(read_tensor(desc_m), km);
      const auto matches = match_mutual(kf, df, km, dm);
      if (out_path.empty()) {
        for (const auto& m : matches)
          std::cout << m.fixed_idx << ',' << m.moving_idx << ',' << class_code(m.cls) << ',' << m.similarity << '\n';
      } else {
        write_matches_csv(out_path, matches);
      }
    } else if (*reg) {
      if (single.pair_id.empty()) single.pair_id = "pair";
      const auto rec = register_pair(single, run);
      if (!overlay_path.empty() && rec.registered)
        write_png(overlay_path, checkerboard_overlay(read_png(single.fixed_path), read_png(single.moving_path), *rec.h));
      write_text(out_path, record_json(rec));
      return rec.registered ? 0 : 1;
    } else if (*eval) {
      const auto ingest = ingest_pairings(pairings_path, strict);
      for (const auto& w : ingest.warnings) std::cerr << "warning: " << w << '\n';
      for (const auto& e : ingest.errors) std::cerr << "skipped: " << e.message << '\n';
      if (!overlay_dir.empty()) run.overlay_dir = overlay_dir;
      const auto report = evaluate_dataset(ingest.records, run);
      write_text(out_json, report_json(report));
      if (!out_csv.empty()) write_records_csv(out_csv, report.records);
    } else if (*lcheck) {
      const LossKind kind = require_loss(inst.loss);
      const auto e = random_embeddings(inst.views + 1, inst.keypoints, inst.dim, inst.seed);
      const auto check = check_gradient(kind, e, loss_cfg, eps);
      ojson j;
      j["loss"] = std::string(to_string(kind));
      j["value"] = loss_value(kind, e, loss_cfg);
      j["max_fd_rel_error"] = check.max_rel_error;
      j["instance_seed"] = inst.seed;
      std::cout << j.dump(2) << '\n';
    } else if (*train) {
      const LossKind kind = require_loss(inst.loss);
      const auto e = random_embeddings(inst.views + 1, inst.keypoints, inst.dim, inst.seed);
      const auto result = optimize_embeddings(kind, e, loss_cfg, opt);
      ojson j;
      j["loss"] = std::string(to_string(kind));
      j["instance_seed"] = inst.seed;
      j["steps"] = opt.steps;
      j["initial_loss"] = result.loss_history.front();
      j["final_loss"] = result.loss_history.back();
      j["accuracy_view0_view1"] = matching_accuracy(result.embeddings, 0, 1);
      std::cout << j.dump(2) << '\n';
    } else if (*sgen) {
      std::filesystem::create_directories(synth_dir);
      std::ofstream csv(std::filesystem::path(synth_dir) / "pairings.csv");
      if (!csv) throw Error(ErrorCode::IoError, "cannot write pairings.csv");
      csv << "fixed,moving,category,heatmap_f,heatmap_m,desc_f,desc_m,mask_f,mask_m,control_points,pair_id\n";
      for (int i = 0; i < count; ++i) {
        SynthConfig c = synth;
        c.seed = synth.seed + static_cast<std::uint64_t>(i);
        char stem[32];
        std::snprintf(stem, sizeof stem, "pair%04d", i);
        const auto fields = export_synth_pair(gen_synth_pair(c), synth_dir, stem, category);
        for (const auto& f : fields) csv << f << ',';
        csv << stem << '\n';
      }
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
