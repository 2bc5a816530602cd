#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinybox/error.hpp"
#include "tinybox/geometry.hpp"
#include "tinybox/gradcheck.hpp"
#include "tinybox/rng.hpp"

namespace tinybox {

// Axis-aligned 2-D Gaussian for a box: mean at the center, per-axis standard
// deviation of half the extent. The covariance diag(w/2, h/2)^2 is never
// materialized; the distance below only needs sigma.
class GaussianBox {
 public:
  const std::array<double, 2>& mu() const { return mu_; }
  const std::array<double, 2>& sigma() const { return sigma_; }

 private:
  GaussianBox(double mx, double my, double sx, double sy) : mu_{mx, my}, sigma_{sx, sy} {}
  friend GaussianBox to_gaussian(const BBox& b);

  std::array<double, 2> mu_;
  std::array<double, 2> sigma_;
};

inline GaussianBox to_gaussian(const BBox& b) { return {b.cx, b.cy, 0.5 * b.w, 0.5 * b.h}; }

// Squared 2-Wasserstein distance between axis-aligned Gaussians:
// ||mu_a - mu_b||^2 + ||sigma_a - sigma_b||^2.
inline double wasserstein2_sq(const GaussianBox& a, const GaussianBox& b) {
  const double dx = a.mu()[0] - b.mu()[0];
  const double dy = a.mu()[1] - b.mu()[1];
  const double sx = a.sigma()[0] - b.sigma()[0];
  const double sy = a.sigma()[1] - b.sigma()[1];
  return dx * dx + dy * dy + sx * sx + sy * sy;
}

inline double nwd(const BBox& a, const BBox& b, double C) {
  detail::require(C > 0.0, ErrorKind::InvalidArgument, "NWD constant C must be positive");
  return std::exp(-std::sqrt(wasserstein2_sq(to_gaussian(a), to_gaussian(b))) / C);
}

/// 1 - NWD(pred, tgt) and its gradient w.r.t. the predicted box.
///
/// With W = sqrt(W2), dL/dθ = exp(-W/C)/C * dW/dθ and
///   dW/dcx = (cx - cx_t)/W,   dW/dw = (w - w_t)/(4W)   (likewise y, h).
/// The distance is a cone at W = 0; the gradient there is taken as zero.
inline LossValue nwd_loss(const BBox& pred, const BBox& tgt, double C) {
  detail::require(C > 0.0, ErrorKind::InvalidArgument, "NWD constant C must be positive");
  const double dx = pred.cx - tgt.cx, dy = pred.cy - tgt.cy;
  const double sx = 0.5 * (pred.w - tgt.w), sy = 0.5 * (pred.h - tgt.h);
  const double dist = std::sqrt(dx * dx + dy * dy + sx * sx + sy * sy);
  const double sim = std::exp(-dist / C);
  LossValue out;
  out.value = 1.0 - sim;
  if (dist > 0.0) {
    const double scale = sim / (C * dist);
    out.grad = {scale * dx, scale * dy, 0.5 * scale * sx, 0.5 * scale * sy};
  }
  return out;
}

// Inverse-area weight 1 / (A + epsilon). `area_scale` converts the box area
// into the units epsilon is expressed in (1 for normalized coordinates,
// 1/(image_size^2) for pixel coordinates against a normalized epsilon).
inline double size_weight(const BBox& b, double epsilon, double area_scale = 1.0) {
  detail::require(epsilon > 0.0, ErrorKind::InvalidArgument, "epsilon must be positive");
  return 1.0 / (b.area() * area_scale + epsilon);
}

enum class WeightMode {
  paper_literal,  // CIoU batch mean scaled by the scalar batch-mean weight
  per_box,        // each pair's CIoU scaled by its own weight
};

enum class WeightNormalization { none, batch_mean };

struct SalNwdConfig {
  double lambda = 0.5;
  double C = 12.8;
  double epsilon = 1e-4;
  WeightMode weight_mode = WeightMode::paper_literal;
  WeightNormalization weight_normalization = WeightNormalization::none;
  double area_scale = 1.0;
  CiouAlpha ciou_alpha = CiouAlpha::differentiated;

  void validate() const {
    detail::require(lambda >= 0.0 && lambda <= 1.0, ErrorKind::InvalidArgument,
                    "lambda must lie in [0, 1]");
    detail::require(C > 0.0, ErrorKind::InvalidArgument, "C must be positive");
    detail::require(epsilon > 0.0, ErrorKind::InvalidArgument, "epsilon must be positive");
    detail::require(area_scale > 0.0, ErrorKind::InvalidArgument, "area_scale must be positive");
  }
};

struct LossBreakdown {
  double nwd_term = 0.0;            // mean NWD loss over pairs
  double ciou_term = 0.0;           // mean unweighted CIoU loss over pairs
  double weighted_ciou_term = 0.0;  // the CIoU contribution before the (1 - lambda) factor
  double mean_weight = 0.0;         // batch mean of the target size weights
  double total = 0.0;
  std::vector<BoxGrad> grads;       // d total / d pred_i
};

/// Hybrid size-aware loss over pre-assigned (pred, tgt) pairs.
///
/// paper_literal: total = lambda * mean(L_nwd) + (1 - lambda) * mean(L_ciou) * w_bar
/// per_box:       total = mean_i[lambda * L_nwd_i + (1 - lambda) * w'_i * L_ciou_i]
///                with w'_i = w_i, or w_i / w_bar under batch_mean normalization.
///
/// Weights come from target areas only, so no gradient flows through them.
/// Reductions run in input order; the result does not depend on threading.
inline LossBreakdown sal_nwd_batch(std::span<const BBox> preds, std::span<const BBox> tgts,
                                   const SalNwdConfig& cfg = {}) {
  cfg.validate();
  if (preds.empty() || tgts.empty()) throw Error(ErrorKind::EmptyBatch, "no box pairs");
  if (preds.size() != tgts.size()) {
    throw Error(ErrorKind::LengthMismatch, std::to_string(preds.size()) + " predictions vs " +
                                               std::to_string(tgts.size()) + " targets");
  }
  const std::size_t n = preds.size();
  const double inv_n = 1.0 / static_cast<double>(n);

  std::vector<double> weights(n);
  double weight_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    weights[i] = size_weight(tgts[i], cfg.epsilon, cfg.area_scale);
    weight_sum += weights[i];
  }
  const double w_bar = weight_sum * inv_n;

  LossBreakdown out;
  out.mean_weight = w_bar;
  out.grads.resize(n);

  std::vector<LossValue> nwd_parts(n), ciou_parts(n);
  double nwd_sum = 0.0, ciou_sum = 0.0, weighted_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    nwd_parts[i] = nwd_loss(preds[i], tgts[i], cfg.C);
    ciou_parts[i] = overlap_loss(preds[i], tgts[i], OverlapVariant::CIoU, cfg.ciou_alpha);
    nwd_sum += nwd_parts[i].value;
    ciou_sum += ciou_parts[i].value;
  }
  out.nwd_term = nwd_sum * inv_n;
  out.ciou_term = ciou_sum * inv_n;

  const double lam = cfg.lambda;
  if (cfg.weight_mode == WeightMode::paper_literal) {
    out.weighted_ciou_term = out.ciou_term * w_bar;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 4; ++k)
        out.grads[i][k] = inv_n * (lam * nwd_parts[i].grad[k] +
                                   (1.0 - lam) * w_bar * ciou_parts[i].grad[k]);
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      double wi = weights[i];
      if (cfg.weight_normalization == WeightNormalization::batch_mean) wi /= w_bar;
      weighted_sum += wi * ciou_parts[i].value;
      for (int k = 0; k < 4; ++k)
        out.grads[i][k] =
            inv_n * (lam * nwd_parts[i].grad[k] + (1.0 - lam) * wi * ciou_parts[i].grad[k]);
    }
    out.weighted_ciou_term = weighted_sum * inv_n;
  }
  out.total = lam * out.nwd_term + (1.0 - lam) * out.weighted_ciou_term;
  return out;
}

struct GradCheckReport {
  std::size_t trials = 0;
  double max_rel_error = 0.0;
  std::size_t worst_trial = 0;
};

/// Compares sal_nwd_batch gradients with central finite differences of its
/// total over `n_trials` random batches (1..max_batch pairs each).
inline GradCheckReport sal_nwd_grad_check(const SalNwdConfig& cfg, std::size_t n_trials,
                                          std::uint64_t seed = 0, double step = 1e-5,
                                          std::size_t max_batch = 8) {
  detail::require(n_trials >= 1, ErrorKind::InvalidArgument, "n_trials must be >= 1");
  Rng rng(seed);
  GradCheckReport report;
  report.trials = n_trials;
  for (std::size_t t = 0; t < n_trials; ++t) {
    const std::size_t n = 1 + rng.below(max_batch);
    std::vector<BBox> preds, tgts;
    for (std::size_t i = 0; i < n; ++i) {
      auto [p, g] = sample_pair(rng);
      preds.push_back(p);
      tgts.push_back(g);
    }
    const LossBreakdown lb = sal_nwd_batch(preds, tgts, cfg);
    std::vector<double> analytic, params;
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < 4; ++k) {
        analytic.push_back(lb.grads[i][k]);
        params.push_back(k == 0 ? preds[i].cx : k == 1 ? preds[i].cy : k == 2 ? preds[i].w : preds[i].h);
      }
    const auto numeric = central_difference(
        [&](const std::vector<double>& x) {
          std::vector<BBox> moved;
          for (std::size_t i = 0; i < n; ++i)
            moved.emplace_back(x[4 * i], x[4 * i + 1], x[4 * i + 2], x[4 * i + 3]);
          return sal_nwd_batch(moved, tgts, cfg).total;
        },
        params, step);
    const double err = relative_error(analytic, numeric);
    if (err > report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_trial = t;
    }
  }
  return report;
}

}  // namespace tinybox
