#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "tinybox/error.hpp"
#include "tinybox/eval.hpp"
#include "tinybox/geometry.hpp"
#include "tinybox/prune.hpp"
#include "tinybox/report.hpp"
#include "tinybox/rng.hpp"
#include "tinybox/salnwd.hpp"

namespace tinybox {

// ---------------------------------------------------------------------------
// Synthetic tiny-object scenes

struct SceneSpec {
  int image_size = 1280;
  int n_objects = 200;
  double size_min = 4.0;   // pixels, side length
  double size_max = 128.0;
  double overlap_level = 0.3;  // probability an object is placed next to the previous one
  int class_count = 10;
  std::uint64_t seed = 0;
  // Share of objects with pixel area below 32 x 32.
  double small_fraction = 0.68;

  void validate() const {
    detail::require(size_min >= 2.0, ErrorKind::InvalidArgument, "size_min must be >= 2 px");
    detail::require(size_max > 32.0 && size_min < 32.0, ErrorKind::InvalidArgument,
                    "size range must straddle 32 px");
    detail::require(size_max <= image_size, ErrorKind::InvalidArgument, "objects larger than the image");
    detail::require(n_objects >= 0 && class_count >= 1, ErrorKind::InvalidArgument, "bad object or class count");
    detail::require(overlap_level >= 0.0 && overlap_level <= 1.0 && small_fraction >= 0.0 && small_fraction <= 1.0,
                    ErrorKind::InvalidArgument, "fractions must lie in [0, 1]");
  }
};

struct DetectionNoise {
  double center_jitter = 0.1;  // std-dev as a fraction of the box size
  double score_mean = 0.75;
  double score_noise = 0.15;
  double miss_rate = 0.0;
  int false_positives = 0;     // uniformly placed, per scene
};

struct Scene {
  std::vector<GroundTruth> objects;
  std::vector<Detection> detections;
};

inline std::string scene_image_id(std::uint64_t seed) { return "scene-" + std::to_string(seed); }

/// Boxes in normalized coordinates on a square image. Pixel areas are drawn
/// log-uniformly below 32^2 with probability small_fraction and above it
/// otherwise, aspect ratios log-uniformly in [1/2, 2].
inline std::vector<GroundTruth> gen_synthetic_scene(const SceneSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const double S = spec.image_size;
  const double split = 32.0 * 32.0;
  std::vector<GroundTruth> out;
  out.reserve(static_cast<std::size_t>(spec.n_objects));
  while (out.size() < static_cast<std::size_t>(spec.n_objects)) {
    const bool small = rng.uniform() < spec.small_fraction;
    const double lo = small ? spec.size_min * spec.size_min : split;
    const double hi = small ? split : spec.size_max * spec.size_max;
    const double area = std::exp(rng.uniform(std::log(lo), std::log(hi)));
    const double ar = std::exp(rng.uniform(std::log(0.5), std::log(2.0)));
    const double w = std::sqrt(area * ar), h = area / w;
    const bool adjacent = !out.empty() && rng.uniform() < spec.overlap_level;
    double cx = 0.0, cy = 0.0;
    if (adjacent) {
      const BBox& prev = out.back().box;
      const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
      const double reach = 0.5 * (prev.w * S + w) * rng.uniform(0.5, 1.0);
      cx = prev.cx * S + reach * std::cos(ang);
      cy = prev.cy * S + reach * std::sin(ang);
    } else {
      cx = rng.uniform(0.0, S);
      cy = rng.uniform(0.0, S);
    }
    if (w < 2.0 || h < 2.0) continue;
    cx = std::clamp(cx, 0.5 * w, S - 0.5 * w);
    cy = std::clamp(cy, 0.5 * h, S - 0.5 * h);
    GroundTruth g;
    g.image_id = scene_image_id(spec.seed);
    g.class_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(spec.class_count)));
    g.box = BBox(cx / S, cy / S, w / S, h / S);
    out.push_back(std::move(g));
  }
  return out;
}

// Detections derived from ground truth with jittered centers and noisy scores.
inline std::vector<Detection> jitter_detections(const std::vector<GroundTruth>& gts, const DetectionNoise& noise,
                                                std::uint64_t seed, int class_count = 10) {
  Rng rng(seed ^ 0x5eedULL);
  std::vector<Detection> out;
  for (const auto& g : gts) {
    if (g.ignored) continue;
    if (rng.uniform() < noise.miss_rate) continue;
    Detection d;
    d.image_id = g.image_id;
    d.class_id = g.class_id;
    d.box = BBox(g.box.cx + noise.center_jitter * g.box.w * rng.normal(),
                 g.box.cy + noise.center_jitter * g.box.h * rng.normal(), g.box.w, g.box.h);
    d.score = std::clamp(rng.normal(noise.score_mean, noise.score_noise), 0.0, 1.0);
    out.push_back(std::move(d));
  }
  const std::string image = gts.empty() ? scene_image_id(seed) : gts.front().image_id;
  for (int i = 0; i < noise.false_positives; ++i) {
    Detection d;
    d.image_id = image;
    d.class_id = static_cast<int>(rng.below(static_cast<std::uint64_t>(class_count)));
    const double s = rng.uniform(0.005, 0.03);
    d.box = BBox(rng.uniform(0.05, 0.95), rng.uniform(0.05, 0.95), s, s);
    d.score = std::clamp(rng.normal(noise.score_mean - 0.3, noise.score_noise), 0.0, 1.0);
    out.push_back(std::move(d));
  }
  return out;
}

inline Scene gen_scene_with_detections(const SceneSpec& spec, const DetectionNoise& noise) {
  Scene s;
  s.objects = gen_synthetic_scene(spec);
  s.detections = jitter_detections(s.objects, noise, spec.seed, spec.class_count);
  return s;
}

/// Densely packed tiny objects (12 px, rows at a 10 px pitch, so neighbours
/// overlap at IoU < 0.1). Each object gets a near-exact detection plus a
/// lower-scored re-detection offset along one axis so that its IoU with the
/// primary detection is about 0.52. NMS at IoU 0.4 or 0.5 removes those
/// re-detections; at 0.6 or 0.7 they survive as false positives whose scores
/// interleave with other objects' true positives.
inline Scene gen_crowded_duplicate_scene(std::uint64_t seed, int rows = 6, int cols = 10, int image_size = 640) {
  Rng rng(seed);
  Scene s;
  const double S = image_size, size = 12.0, pitch = 10.0, dup_shift = 3.8;
  const std::string image = "crowd-" + std::to_string(seed);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      const double cx = 100.0 + c * pitch, cy = 100.0 + r * 3.0 * pitch;
      GroundTruth g;
      g.image_id = image;
      g.class_id = static_cast<int>(rng.below(3));
      g.box = BBox(cx / S, cy / S, size / S, size / S);
      s.objects.push_back(g);

      const double px = cx + rng.uniform(-0.5, 0.5), py = cy + rng.uniform(-0.5, 0.5);
      const double primary_score = rng.uniform(0.5, 1.0);
      s.detections.push_back({image, g.class_id, BBox(px / S, py / S, size / S, size / S), primary_score});
      const bool horizontal = rng.uniform() < 0.5;
      const double sign = rng.uniform() < 0.5 ? -1.0 : 1.0;
      const double dx = horizontal ? sign * dup_shift : 0.0, dy = horizontal ? 0.0 : sign * dup_shift;
      s.detections.push_back({image, g.class_id, BBox((px + dx) / S, (py + dy) / S, size / S, size / S),
                              primary_score * rng.uniform(0.6, 0.95)});
    }
  return s;
}

// ---------------------------------------------------------------------------
// Toy box regression

enum class TrainLoss { iou, ciou, nwd, sal_nwd };

inline const char* to_string(TrainLoss l) {
  switch (l) {
    case TrainLoss::iou: return "iou";
    case TrainLoss::ciou: return "ciou";
    case TrainLoss::nwd: return "nwd";
    case TrainLoss::sal_nwd: return "sal_nwd";
  }
  return "?";
}

enum class InitOffset { nearby, distant };

struct TrainSpec {
  TrainLoss loss = TrainLoss::sal_nwd;
  double lambda = 0.5;
  double C = 12.8;
  double epsilon = 1e-4;
  int steps = 2000;
  double learning_rate = 0.001;
  InitOffset init_offset = InitOffset::distant;
  std::uint64_t seed = 0;
  // Geometry, in pixels.
  int image_size = 640;
  double target_size = 5.0;
  double nearby_offset = 2.0;
  double distant_offset = 15.0;
  int n_targets = 4;
  // Start the predictions exactly on their targets.
  bool start_on_target = false;
};

struct TrainTrace {
  std::vector<double> loss;          // before each update
  std::vector<double> center_error;  // mean, pixels, before each update
  std::vector<BBox> final_boxes;     // pixels
  std::vector<BBox> targets;         // pixels
  double final_center_error = 0.0;
  int steps_to_zero_loss = -1;       // first step whose loss is exactly 0
};

namespace detail {

inline double mean_center_error(const std::vector<BBox>& preds, const std::vector<BBox>& tgts,
                                const std::vector<std::size_t>& assign) {
  double s = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const BBox& t = tgts[assign[i]];
    s += std::hypot(preds[i].cx - t.cx, preds[i].cy - t.cy);
  }
  return s / static_cast<double>(preds.size());
}

}  // namespace detail

inline SalNwdConfig train_loss_config(const TrainSpec& spec) {
  SalNwdConfig cfg;
  cfg.lambda = spec.lambda;
  cfg.C = spec.C;
  cfg.epsilon = spec.epsilon;
  // Boxes live in pixels; epsilon is an area floor in normalized units.
  cfg.area_scale = 1.0 / (static_cast<double>(spec.image_size) * spec.image_size);
  return cfg;
}

/// Plain gradient descent on the predicted boxes themselves (no network).
/// Targets are target_size-pixel squares spread across the canvas; each
/// prediction starts offset from one of them in a random direction and is
/// assigned to the nearest target center once, at initialization.
inline TrainTrace toy_train(const TrainSpec& spec) {
  detail::require(spec.steps >= 1, ErrorKind::InvalidArgument, "steps must be >= 1");
  detail::require(spec.learning_rate > 0.0 && spec.n_targets >= 1, ErrorKind::InvalidArgument,
                  "learning rate and target count must be positive");
  Rng rng(spec.seed);
  const double S = spec.image_size;
  TrainTrace trace;
  std::vector<BBox> preds;
  for (int i = 0; i < spec.n_targets; ++i) {
    const double cx = S * (0.2 + 0.6 * (i + 0.5) / spec.n_targets);
    const double cy = S * rng.uniform(0.3, 0.7);
    trace.targets.emplace_back(cx, cy, spec.target_size, spec.target_size);
    const double off = spec.start_on_target ? 0.0
                       : spec.init_offset == InitOffset::nearby ? spec.nearby_offset
                                                                : spec.distant_offset;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    preds.emplace_back(cx + off * std::cos(ang), cy + off * std::sin(ang), spec.target_size, spec.target_size);
  }
  std::vector<std::size_t> assign(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < trace.targets.size(); ++t) {
      const double d = std::hypot(preds[i].cx - trace.targets[t].cx, preds[i].cy - trace.targets[t].cy);
      if (d < best) {
        best = d;
        assign[i] = t;
      }
    }
  }
  std::vector<BBox> matched(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) matched[i] = trace.targets[assign[i]];

  const SalNwdConfig cfg = train_loss_config(spec);
  const double inv_n = 1.0 / static_cast<double>(preds.size());
  for (int step = 0; step < spec.steps; ++step) {
    double loss = 0.0;
    std::vector<BoxGrad> grads(preds.size());
    if (spec.loss == TrainLoss::sal_nwd) {
      const LossBreakdown lb = sal_nwd_batch(preds, matched, cfg);
      loss = lb.total;
      grads = lb.grads;
    } else {
      for (std::size_t i = 0; i < preds.size(); ++i) {
        LossValue lv;
        if (spec.loss == TrainLoss::iou) lv = overlap_loss(preds[i], matched[i], OverlapVariant::IoU);
        else if (spec.loss == TrainLoss::ciou) lv = overlap_loss(preds[i], matched[i], OverlapVariant::CIoU);
        else lv = nwd_loss(preds[i], matched[i], spec.C);
        loss += lv.value * inv_n;
        for (int k = 0; k < 4; ++k) grads[i][k] = lv.grad[k] * inv_n;
      }
    }
    if (!std::isfinite(loss)) {
      throw Error(ErrorKind::DivergenceDetected, "non-finite loss at step " + std::to_string(step));
    }
    trace.loss.push_back(loss);
    trace.center_error.push_back(detail::mean_center_error(preds, matched, assign));
    if (loss == 0.0 && trace.steps_to_zero_loss < 0) trace.steps_to_zero_loss = step;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const BBox& p = preds[i];
      const double w = p.w - spec.learning_rate * grads[i][2];
      const double h = p.h - spec.learning_rate * grads[i][3];
      const double cx = p.cx - spec.learning_rate * grads[i][0];
      const double cy = p.cy - spec.learning_rate * grads[i][1];
      if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(cx) || !std::isfinite(cy)) {
        throw Error(ErrorKind::DivergenceDetected, "box collapsed at step " + std::to_string(step));
      }
      // far-field gradients stay finite, so a runaway step just flings the box away
      if (cx < -S || cx > 2.0 * S || cy < -S || cy > 2.0 * S) {
        throw Error(ErrorKind::DivergenceDetected, "box left the canvas at step " + std::to_string(step));
      }
      preds[i] = BBox(cx, cy, w, h);
    }
  }
  trace.final_boxes = preds;
  trace.final_center_error = detail::mean_center_error(preds, matched, assign);
  return trace;
}

// ---------------------------------------------------------------------------
// Sensitivity sweeps

/// Nearby and distant pair sets: target_size-pixel targets with predictions
/// displaced by the given offsets in `directions` evenly spaced directions.
struct LambdaScenario {
  int image_size = 640;
  double target_size = 5.0;
  double nearby_offset = 2.0;
  double distant_offset = 15.0;
  int directions = 8;
  SalNwdConfig base{};

  std::pair<std::vector<BBox>, std::vector<BBox>> pairs(double offset) const {
    std::vector<BBox> preds, tgts;
    const double c = 0.5 * image_size;
    for (int k = 0; k < directions; ++k) {
      const double ang = 2.0 * std::numbers::pi * k / directions;
      tgts.emplace_back(c, c, target_size, target_size);
      preds.emplace_back(c + offset * std::cos(ang), c + offset * std::sin(ang), target_size, target_size);
    }
    return {preds, tgts};
  }

  SalNwdConfig config(double lambda) const {
    SalNwdConfig cfg = base;
    cfg.lambda = lambda;
    cfg.area_scale = 1.0 / (static_cast<double>(image_size) * image_size);
    return cfg;
  }
};

struct LambdaSweepResult {
  SweepReport report;
  std::vector<double> nearby, distant;
  bool endpoints_ok = false;        // lambda 0 -> weighted CIoU only, lambda 1 -> NWD only
  double max_affinity_error = 0.0;  // relative deviation from the endpoint interpolation
};

inline LambdaSweepResult lambda_sweep(const LambdaScenario& sc, const std::vector<double>& lambdas) {
  LambdaSweepResult res;
  res.report.title = "lambda_sweep";
  res.report.columns = {"lambda", "loss_nearby", "loss_distant", "nwd_nearby", "nwd_distant",
                        "wciou_nearby", "wciou_distant"};
  const auto [np, nt] = sc.pairs(sc.nearby_offset);
  const auto [dp, dt] = sc.pairs(sc.distant_offset);
  const LossBreakdown n0 = sal_nwd_batch(np, nt, sc.config(0.0)), n1 = sal_nwd_batch(np, nt, sc.config(1.0));
  const LossBreakdown d0 = sal_nwd_batch(dp, dt, sc.config(0.0)), d1 = sal_nwd_batch(dp, dt, sc.config(1.0));
  res.endpoints_ok = n0.total == n0.weighted_ciou_term && d0.total == d0.weighted_ciou_term &&
                     n1.total == n1.nwd_term && d1.total == d1.nwd_term;
  for (double lam : lambdas) {
    const LossBreakdown n = sal_nwd_batch(np, nt, sc.config(lam));
    const LossBreakdown d = sal_nwd_batch(dp, dt, sc.config(lam));
    res.nearby.push_back(n.total);
    res.distant.push_back(d.total);
    const double n_interp = (1.0 - lam) * n0.total + lam * n1.total;
    const double d_interp = (1.0 - lam) * d0.total + lam * d1.total;
    res.max_affinity_error = std::max({res.max_affinity_error,
                                       std::abs(n.total - n_interp) / std::max(std::abs(n_interp), 1e-300),
                                       std::abs(d.total - d_interp) / std::max(std::abs(d_interp), 1e-300)});
    res.report.rows.push_back({lam, n.total, d.total, n.nwd_term, d.nwd_term, n.weighted_ciou_term,
                               d.weighted_ciou_term});
  }
  return res;
}

inline SweepReport theta_sweep(const FilterBank& bank, const std::vector<double>& thetas,
                               SurvivorRule rule = SurvivorRule::survivors_only) {
  SweepReport r;
  r.title = "theta_sweep";
  r.columns = {"theta", "sparsity_pct", "active", "filters"};
  const SimMatrix sim = cosine_similarity_matrix(bank);
  for (double th : thetas) {
    const PruneMask m = derive_mask(sim, th, rule);
    r.rows.push_back({th, sparsity(m), static_cast<std::int64_t>(m.active()), static_cast<std::int64_t>(m.size())});
  }
  return r;
}

/// theta sweep repeated over random Gaussian banks seeded base_seed,
/// base_seed + 1, ...
inline SweepReport theta_sweep_random(const Shape4& shape, const std::vector<double>& thetas, int seeds,
                                      std::uint64_t base_seed = 0) {
  SweepReport r;
  r.title = "theta_sweep_random";
  r.columns = {"theta", "mean_sparsity_pct", "min_sparsity_pct", "max_sparsity_pct", "zero_sparsity_seeds", "seeds"};
  std::vector<std::vector<double>> per(thetas.size());
  for (int s = 0; s < seeds; ++s) {
    const SimMatrix sim = cosine_similarity_matrix(random_gaussian_bank(shape, base_seed + static_cast<std::uint64_t>(s)));
    for (std::size_t t = 0; t < thetas.size(); ++t) per[t].push_back(sparsity(derive_mask(sim, thetas[t])));
  }
  for (std::size_t t = 0; t < thetas.size(); ++t) {
    double sum = 0.0;
    std::int64_t zeros = 0;
    for (double v : per[t]) {
      sum += v;
      zeros += v == 0.0;
    }
    const auto [mn, mx] = std::minmax_element(per[t].begin(), per[t].end());
    r.rows.push_back({thetas[t], seeds ? sum / seeds : 0.0, seeds ? *mn : 0.0, seeds ? *mx : 0.0, zeros,
                      static_cast<std::int64_t>(seeds)});
  }
  return r;
}

// Duplicated-filter bank: filters 2i and 2i+1 are identical random vectors.
inline FilterBank duplicated_pair_bank(const Shape4& shape, std::uint64_t seed) {
  detail::require(shape[0] % 2 == 0, ErrorKind::InvalidArgument, "need an even filter count");
  FilterBank fb = random_gaussian_bank(shape, seed);
  for (std::size_t i = 0; i < shape[0]; i += 2) {
    const auto src = fb.slice(i);
    auto dst = fb.slice(i + 1);
    std::copy(src.begin(), src.end(), dst.begin());
  }
  return fb;
}

struct LazySweepResult {
  SweepReport report;
  SparsityTrace trace;
};

inline LazySweepResult lazy_sweep(const DriftSpec& drift, const std::vector<int>& checkpoints, std::uint64_t seed) {
  for (int c : checkpoints)
    detail::require(c >= 1 && c <= drift.epochs, ErrorKind::InvalidArgument,
                    "checkpoint " + std::to_string(c) + " outside the simulated epochs");
  LazySweepResult res;
  res.trace = simulate_convergence(drift, seed);
  res.report.title = "lazy_sweep";
  res.report.columns = {"interval"};
  for (int c : checkpoints) res.report.columns.push_back("sparsity_ep" + std::to_string(c));
  res.report.columns.push_back("recomputations");
  for (std::size_t k = 0; k < res.trace.intervals.size(); ++k) {
    std::vector<Cell> row{static_cast<std::int64_t>(res.trace.intervals[k])};
    for (int c : checkpoints) row.emplace_back(res.trace.sparsity[k][static_cast<std::size_t>(c - 1)]);
    row.emplace_back(static_cast<std::int64_t>(res.trace.recompute_counts[k]));
    res.report.rows.push_back(std::move(row));
  }
  return res;
}

}  // namespace tinybox
