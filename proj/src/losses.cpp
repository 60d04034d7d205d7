#include "retreg/losses.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "retreg/descriptors.hpp"
#include "retreg/error.hpp"
#include "retreg/util.hpp"

namespace retreg {

void LossConfig::validate() const {
  if (!(tau > 0.0)) throw Error(ErrorCode::InvalidArgument, "temperature must be positive");
  if (bins < 2) throw Error(ErrorCode::InvalidArgument, "FastAP needs at least 2 bins");
  if (!(distance_max > distance_min)) throw Error(ErrorCode::InvalidArgument, "empty distance range");
}

std::string_view to_string(LossKind kind) {
  switch (kind) {
    case LossKind::SupCon: return "supcon";
    case LossKind::MpInfoNce: return "mp-infonce";
    case LossKind::MpNPair: return "mp-npair";
    case LossKind::FastAp: return "fastap";
  }
  return "unknown";
}

std::optional<LossKind> parse_loss_kind(std::string_view name) {
  for (auto k : {LossKind::SupCon, LossKind::MpInfoNce, LossKind::MpNPair, LossKind::FastAp}) {
    if (name == to_string(k)) return k;
  }
  return std::nullopt;
}

namespace {

struct Normalized {
  Eigen::MatrixXd u;
  Eigen::VectorXd norms;
};

Normalized normalize_rows(const EmbeddingSet& e) {
  if (e.z.rows() != static_cast<Eigen::Index>(e.sets.sample_count())) {
    throw Error(ErrorCode::DimMismatch, "embedding rows do not match the index sets");
  }
  if (e.z.rows() < 4) throw Error(ErrorCode::InvalidArgument, "need at least 4 samples");
  Normalized n{e.z, e.z.rowwise().norm()};
  for (Eigen::Index r = 0; r < n.u.rows(); ++r) {
    if (!(n.norms(r) > 1e-12)) throw Error(ErrorCode::ZeroVector, "zero embedding row");
    n.u.row(r) /= n.norms(r);
  }
  return n;
}

// Pulls d/du back through u = z / |z|.
Eigen::MatrixXd backprop_normalization(const Normalized& n, const Eigen::MatrixXd& grad_u) {
  Eigen::MatrixXd g(grad_u.rows(), grad_u.cols());
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    const double radial = grad_u.row(r).dot(n.u.row(r));
    g.row(r) = (grad_u.row(r) - radial * n.u.row(r)) / n.norms(r);
  }
  return g;
}

// Gradient of sum_{s,a} coeff(s,a) * (u_s . u_a) with respect to u.
Eigen::MatrixXd similarity_gradient(const Eigen::MatrixXd& coeff, const Eigen::MatrixXd& u) {
  return (coeff + coeff.transpose()) * u;
}

// One weighted term  lse_c(sim(anchor, c) / tau) - mean_p sim(anchor, p) / tau.
// Its derivative with respect to the similarities is accumulated into coeff.
double softmax_term(const Eigen::MatrixXd& sim, std::size_t anchor, std::span<const std::size_t> positives,
                    std::span<const std::size_t> candidates, double tau, double weight, Eigen::MatrixXd& coeff) {
  const auto s = static_cast<Eigen::Index>(anchor);
  double mx = -std::numeric_limits<double>::infinity();
  for (auto c : candidates) mx = std::max(mx, sim(s, static_cast<Eigen::Index>(c)) / tau);
  double denom = 0.0;
  for (auto c : candidates) denom += std::exp(sim(s, static_cast<Eigen::Index>(c)) / tau - mx);
  const double lse = mx + std::log(denom);
  for (auto c : candidates) {
    const auto ci = static_cast<Eigen::Index>(c);
    coeff(s, ci) += weight * std::exp(sim(s, ci) / tau - lse) / tau;
  }
  double mean_pos = 0.0;
  const double inv_p = 1.0 / static_cast<double>(positives.size());
  for (auto p : positives) {
    const auto pi = static_cast<Eigen::Index>(p);
    mean_pos += sim(s, pi) / tau * inv_p;
    coeff(s, pi) -= weight * inv_p / tau;
  }
  return weight * (lse - mean_pos);
}

LossResult finish(const Normalized& n, const Eigen::MatrixXd& coeff, std::vector<double>& terms) {
  LossResult r;
  r.value = pairwise_sum(terms);
  r.gradient = backprop_normalization(n, similarity_gradient(coeff, n.u));
  return r;
}

LossResult infonce_impl(const EmbeddingSet& e, double tau) {
  const Normalized n = normalize_rows(e);
  const Eigen::MatrixXd sim = n.u * n.u.transpose();
  Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(sim.rows(), sim.cols());
  const double pairs = static_cast<double>(e.sets.view_pairs.size());
  const double per_image = static_cast<double>(e.sets.keypoints);
  const double weight = 1.0 / (pairs * per_image);
  std::vector<double> terms;
  for (const auto& vp : e.sets.view_pairs) {
    for (const auto& t : vp.terms) {
      const std::size_t pos[1] = {t.positive};
      terms.push_back(softmax_term(sim, t.anchor, pos, t.candidates, tau, weight, coeff));
    }
  }
  return finish(n, coeff, terms);
}

struct Bins {
  double width;
  std::vector<double> centers;
};

Bins make_bins(const LossConfig& cfg) {
  Bins b;
  b.width = (cfg.distance_max - cfg.distance_min) / (cfg.bins - 1);
  for (int j = 0; j < cfg.bins; ++j) b.centers.push_back(cfg.distance_min + j * b.width);
  return b;
}

double clamp_distance(double d, const LossConfig& cfg) { return std::clamp(d, cfg.distance_min, cfg.distance_max); }

HistogramBins histogram_for(const Normalized& n, const IndexSets& sets, std::size_t anchor, const LossConfig& cfg,
                            const Bins& bins, std::vector<double>* distances = nullptr) {
  HistogramBins h;
  const std::size_t q = bins.centers.size();
  h.counts.assign(q, 0.0);
  h.positive_counts.assign(q, 0.0);
  const std::size_t kp = sets.keypoint_of(anchor);
  const auto s = static_cast<Eigen::Index>(anchor);
  for (std::size_t a : sets.others[anchor]) {
    const double d = clamp_distance((n.u.row(s) - n.u.row(static_cast<Eigen::Index>(a))).norm(), cfg);
    if (distances) distances->push_back(d);
    const bool positive = sets.keypoint_of(a) == kp;
    for (std::size_t j = 0; j < q; ++j) {
      const double w = std::max(0.0, 1.0 - std::abs(d - bins.centers[j]) / bins.width);
      h.counts[j] += w;
      if (positive) h.positive_counts[j] += w;
    }
  }
  h.cumulative.resize(q);
  h.positive_cumulative.resize(q);
  double c = 0.0, cp = 0.0;
  for (std::size_t j = 0; j < q; ++j) {
    c += h.counts[j];
    cp += h.positive_counts[j];
    h.cumulative[j] = c;
    h.positive_cumulative[j] = cp;
  }
  h.positive_total = static_cast<double>(sets.positives[anchor].size());
  return h;
}

constexpr double kEmptyBin = 1e-12;

double anchor_fastap(const HistogramBins& h) {
  double f = 0.0;
  for (std::size_t j = 0; j < h.counts.size(); ++j) {
    if (h.cumulative[j] < kEmptyBin) continue;
    f += h.positive_cumulative[j] * h.positive_counts[j] / h.cumulative[j];
  }
  return f / h.positive_total;
}

}  // namespace

LossResult supcon_loss(const EmbeddingSet& e, const LossConfig& cfg) {
  cfg.validate();
  const Normalized n = normalize_rows(e);
  const Eigen::MatrixXd sim = n.u * n.u.transpose();
  Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(sim.rows(), sim.cols());
  std::vector<double> terms;
  terms.reserve(e.sets.sample_count());
  for (std::size_t s = 0; s < e.sets.sample_count(); ++s) {
    terms.push_back(softmax_term(sim, s, e.sets.positives[s], e.sets.others[s], cfg.tau, 1.0, coeff));
  }
  return finish(n, coeff, terms);
}

LossResult supcon_anchor_loss(const EmbeddingSet& e, std::size_t anchor, const LossConfig& cfg) {
  cfg.validate();
  if (anchor >= e.sets.sample_count()) throw Error(ErrorCode::OutOfBounds, "anchor index");
  const Normalized n = normalize_rows(e);
  const Eigen::MatrixXd sim = n.u * n.u.transpose();
  Eigen::MatrixXd coeff = Eigen::MatrixXd::Zero(sim.rows(), sim.cols());
  std::vector<double> terms{
      softmax_term(sim, anchor, e.sets.positives[anchor], e.sets.others[anchor], cfg.tau, 1.0, coeff)};
  return finish(n, coeff, terms);
}

LossResult mp_infonce_loss(const EmbeddingSet& e, const LossConfig& cfg) {
  cfg.validate();
  return infonce_impl(e, cfg.tau);
}

LossResult mp_npair_loss(const EmbeddingSet& e, const LossConfig& cfg) {
  cfg.validate();
  return infonce_impl(e, 1.0);
}

HistogramBins fastap_histogram(const EmbeddingSet& e, std::size_t anchor, const LossConfig& cfg) {
  cfg.validate();
  if (anchor >= e.sets.sample_count()) throw Error(ErrorCode::OutOfBounds, "anchor index");
  return histogram_for(normalize_rows(e), e.sets, anchor, cfg, make_bins(cfg));
}

double fastap_score(const EmbeddingSet& e, const LossConfig& cfg) { return 1.0 - fastap_loss(e, cfg).value; }

LossResult fastap_loss(const EmbeddingSet& e, const LossConfig& cfg) {
  cfg.validate();
  const Normalized n = normalize_rows(e);
  const Bins bins = make_bins(cfg);
  const std::size_t q = bins.centers.size();
  const std::size_t total = e.sets.sample_count();
  const double inv_s = 1.0 / static_cast<double>(total);

  Eigen::MatrixXd grad_u = Eigen::MatrixXd::Zero(n.u.rows(), n.u.cols());
  std::vector<double> scores;
  scores.reserve(total);
  std::vector<double> d_count(q), d_pos(q), distances;
  for (std::size_t s = 0; s < total; ++s) {
    distances.clear();
    const HistogramBins h = histogram_for(n, e.sets, s, cfg, bins, &distances);
    scores.push_back(anchor_fastap(h));

    // dF/dh_k and dF/dh+_k through the cumulative sums (suffix accumulation).
    const double inv_m = 1.0 / h.positive_total;
    double suffix_pos = 0.0, suffix_all = 0.0;
    for (std::size_t k = q; k-- > 0;) {
      if (h.cumulative[k] >= kEmptyBin) {
        suffix_pos += h.positive_counts[k] / h.cumulative[k];
        suffix_all -= h.positive_cumulative[k] * h.positive_counts[k] / (h.cumulative[k] * h.cumulative[k]);
        d_pos[k] = inv_m * (h.positive_cumulative[k] / h.cumulative[k] + suffix_pos);
      } else {
        d_pos[k] = inv_m * suffix_pos;
      }
      d_count[k] = inv_m * suffix_all;
    }

    const std::size_t kp = e.sets.keypoint_of(s);
    const auto si = static_cast<Eigen::Index>(s);
    const auto& others = e.sets.others[s];
    for (std::size_t idx = 0; idx < others.size(); ++idx) {
      const std::size_t a = others[idx];
      const double d = distances[idx];
      const bool positive = e.sets.keypoint_of(a) == kp;
      double dfd = 0.0;
      for (std::size_t k = 0; k < q; ++k) {
        const double off = d - bins.centers[k];
        if (std::abs(off) >= bins.width || off == 0.0) continue;
        const double slope = (off > 0 ? -1.0 : 1.0) / bins.width;
        dfd += (d_count[k] + (positive ? d_pos[k] : 0.0)) * slope;
      }
      if (dfd == 0.0) continue;
      const auto ai = static_cast<Eigen::Index>(a);
      const Eigen::RowVectorXd diff = n.u.row(si) - n.u.row(ai);
      const double raw = diff.norm();
      if (raw < 1e-12 || raw > cfg.distance_max) continue;
      // loss = 1 - mean_s F_s
      const Eigen::RowVectorXd dd = (-inv_s * dfd / raw) * diff;
      grad_u.row(si) += dd;
      grad_u.row(ai) -= dd;
    }
  }
  LossResult r;
  r.value = 1.0 - pairwise_sum(scores) * inv_s;
  r.gradient = backprop_normalization(n, grad_u);
  return r;
}

LossResult evaluate_loss(LossKind kind, const EmbeddingSet& e, const LossConfig& cfg) {
  switch (kind) {
    case LossKind::SupCon: return supcon_loss(e, cfg);
    case LossKind::MpInfoNce: return mp_infonce_loss(e, cfg);
    case LossKind::MpNPair: return mp_npair_loss(e, cfg);
    case LossKind::FastAp: return fastap_loss(e, cfg);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown loss");
}

double loss_value(LossKind kind, const EmbeddingSet& e, const LossConfig& cfg) {
  return evaluate_loss(kind, e, cfg).value;
}

GradientCheck check_gradient(LossKind kind, const EmbeddingSet& e, const LossConfig& cfg, double eps) {
  const Eigen::MatrixXd analytic = evaluate_loss(kind, e, cfg).gradient;
  Eigen::MatrixXd numeric(analytic.rows(), analytic.cols());
  EmbeddingSet probe = e;
  GradientCheck out;
  const double f0 = loss_value(kind, e, cfg);
  for (Eigen::Index r = 0; r < probe.z.rows(); ++r) {
    for (Eigen::Index c = 0; c < probe.z.cols(); ++c) {
      const double orig = probe.z(r, c);
      auto f = [&](double offset) {
        probe.z(r, c) = orig + offset;
        const double v = loss_value(kind, probe, cfg);
        probe.z(r, c) = orig;
        return v;
      };
      // Piecewise-smooth losses (FastAP's triangular bins) have kinks. The
      // two second-order one-sided differences agree on smooth stretches, so
      // a disagreement means the stencil straddles a kink and the step shrinks.
      double h = eps;
      while (true) {
        const double p1 = f(h), m1 = f(-h), p2 = f(2.0 * h), m2 = f(-2.0 * h);
        const double forward = (-3.0 * f0 + 4.0 * p1 - p2) / (2.0 * h);
        const double backward = (3.0 * f0 - 4.0 * m1 + m2) / (2.0 * h);
        // five-point central stencil, O(h^4)
        numeric(r, c) = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * h);
        const double gap = std::abs(forward - backward);
        if (gap <= 1e-4 * std::max(std::abs(forward), std::abs(backward)) + 1e-9 || h <= eps * 1e-3) break;
        h /= 10.0;
        ++out.kink_refinements;
      }
    }
  }
  out.entries = static_cast<std::size_t>(analytic.size());
  const double floor = 1e-6 * std::max(1.0, numeric.cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic.data()[i], f = numeric.data()[i];
    const double abs_err = std::abs(a - f);
    out.max_abs_error = std::max(out.max_abs_error, abs_err);
    out.max_rel_error = std::max(out.max_rel_error, abs_err / std::max({std::abs(a), std::abs(f), floor}));
  }
  return out;
}

OptimizeResult optimize_embeddings(LossKind kind, EmbeddingSet initial, const LossConfig& cfg,
                                   const OptimizeConfig& opt) {
  if (opt.steps < 1 || !(opt.learning_rate > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "steps must be >= 1 and the learning rate > 0");
  }
  if (!initial.z.allFinite()) throw Error(ErrorCode::Divergent, "non-finite starting embeddings");
  OptimizeResult out{std::move(initial), {}};
  Eigen::MatrixXd velocity = Eigen::MatrixXd::Zero(out.embeddings.z.rows(), out.embeddings.z.cols());
  out.loss_history.reserve(static_cast<std::size_t>(opt.steps) + 1);
  auto record = [&](double value) {
    if (!std::isfinite(value)) throw Error(ErrorCode::Divergent, "loss became non-finite");
    const std::size_t t = out.loss_history.size();
    const auto w = static_cast<std::size_t>(opt.window);
    if (w > 0 && t >= w && value > out.loss_history[t - w] + opt.tolerance) {
      throw Error(ErrorCode::Divergent, "loss rose over a " + std::to_string(opt.window) + "-step window at step " +
                                            std::to_string(t));
    }
    out.loss_history.push_back(value);
  };
  for (int step = 0; step < opt.steps; ++step) {
    const LossResult r = evaluate_loss(kind, out.embeddings, cfg);
    record(r.value);
    velocity = opt.momentum * velocity - opt.learning_rate * r.gradient;
    out.embeddings.z += velocity;
  }
  record(loss_value(kind, out.embeddings, cfg));
  return out;
}

double matching_accuracy(const EmbeddingSet& e, std::size_t view_a, std::size_t view_b) {
  const std::size_t k = e.sets.keypoints;
  if (view_a >= e.sets.views || view_b >= e.sets.views) throw Error(ErrorCode::OutOfBounds, "view index");
  const auto kk = static_cast<Eigen::Index>(k);
  Eigen::MatrixXd a = e.z.middleRows(static_cast<Eigen::Index>(view_a * k), kk);
  Eigen::MatrixXd b = e.z.middleRows(static_cast<Eigen::Index>(view_b * k), kk);
  a.rowwise().normalize();
  b.rowwise().normalize();
  std::size_t correct = 0;
  for (auto [r, c] : mutual_argmax(a * b.transpose())) correct += r == c ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(k);
}

}  // namespace retreg
