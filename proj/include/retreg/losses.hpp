#pragma once

#include <Eigen/Core>
#include <optional>
#include <string_view>
#include <vector>

#include "retreg/batch.hpp"

namespace retreg {

/// Raw (pre-normalization) embeddings, one row per sample s = view * K + keypoint.
struct EmbeddingSet {
  Eigen::MatrixXd z;
  IndexSets sets;
};

struct LossConfig {
  double tau = 0.1;
  int bins = 10;  // FastAP histogram bins Q
  double distance_min = 0.0;
  double distance_max = 2.0;

  void validate() const;
};

struct LossResult {
  double value = 0.0;
  Eigen::MatrixXd gradient;  // d value / d z, same shape as z
};

enum class LossKind { SupCon, MpInfoNce, MpNPair, FastAp };

std::string_view to_string(LossKind kind);
std::optional<LossKind> parse_loss_kind(std::string_view name);

// Every loss L2-normalizes the rows of z before use and differentiates
// through that normalization.

/// Supervised contrastive loss, summed over anchors.
LossResult supcon_loss(const EmbeddingSet& e, const LossConfig& cfg);
/// Contribution of a single anchor to supcon_loss.
LossResult supcon_anchor_loss(const EmbeddingSet& e, std::size_t anchor, const LossConfig& cfg);
/// Pairwise-view InfoNCE: anchors of image i against candidates of images i and j > i.
LossResult mp_infonce_loss(const EmbeddingSet& e, const LossConfig& cfg);
/// mp_infonce_loss with the temperature fixed to 1.
LossResult mp_npair_loss(const EmbeddingSet& e, const LossConfig& cfg);
/// 1 - FastAP, with triangular soft binning of Euclidean distances.
LossResult fastap_loss(const EmbeddingSet& e, const LossConfig& cfg);

LossResult evaluate_loss(LossKind kind, const EmbeddingSet& e, const LossConfig& cfg);
double loss_value(LossKind kind, const EmbeddingSet& e, const LossConfig& cfg);

/// Soft distance histogram of one anchor, as consumed by FastAP.
struct HistogramBins {
  std::vector<double> counts;               // h_j
  std::vector<double> cumulative;           // H_j
  std::vector<double> positive_counts;      // h+_j
  std::vector<double> positive_cumulative;  // H+_j
  double positive_total = 0.0;              // M+ = |P(s)|
};
HistogramBins fastap_histogram(const EmbeddingSet& e, std::size_t anchor, const LossConfig& cfg);
/// Mean per-anchor FastAP (the quantity 1 - fastap_loss).
double fastap_score(const EmbeddingSet& e, const LossConfig& cfg);

struct GradientCheck {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t entries = 0;
  std::size_t kink_refinements = 0;  // step reductions forced by non-smooth points
};

/// Compares the analytic gradient with central finite differences of step
/// `eps`. The relative error of entry i is |a - f| / max(|a|, |f|, floor),
/// where floor = 1e-6 * max(1, max_i |f_i|). Where the forward and backward
/// one-sided differences disagree the step is reduced tenfold, at most three
/// times, so that the stencil stops straddling a kink.
GradientCheck check_gradient(LossKind kind, const EmbeddingSet& e, const LossConfig& cfg, double eps = 1e-4);

struct OptimizeConfig {
  int steps = 1000;
  double learning_rate = 0.1;
  double momentum = 0.9;
  int window = 50;
  double tolerance = 1e-6;
};

struct OptimizeResult {
  EmbeddingSet embeddings;
  std::vector<double> loss_history;  // loss before each step, plus the final loss
};

/// Momentum gradient descent on the raw embeddings. Throws Divergent when the
/// loss is non-finite or rises by more than `tolerance` over any `window` steps.
OptimizeResult optimize_embeddings(LossKind kind, EmbeddingSet initial, const LossConfig& cfg,
                                   const OptimizeConfig& opt);

/// Fraction of keypoints k for which (view_a, k) and (view_b, k) are mutual
/// nearest neighbours by cosine similarity.
double matching_accuracy(const EmbeddingSet& e, std::size_t view_a, std::size_t view_b);

}  // namespace retreg
