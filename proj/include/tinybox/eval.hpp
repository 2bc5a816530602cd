#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "tinybox/error.hpp"
#include "tinybox/geometry.hpp"
#include "tinybox/tensor.hpp"

namespace tinybox {

struct Detection {
  std::string image_id;
  int class_id = 0;
  BBox box;
  double score = 0.0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

// class_id -1 together with ignored = true marks a class-agnostic ignore
// region (it absorbs detections of any class).
struct GroundTruth {
  std::string image_id;
  int class_id = 0;
  BBox box;
  bool ignored = false;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct NmsConfig {
  double conf_threshold = 0.001;
  double iou_threshold = 0.7;

  void validate() const {
    detail::require(conf_threshold >= 0.0 && conf_threshold <= 1.0, ErrorKind::InvalidArgument,
                    "conf_threshold must lie in [0, 1]");
    detail::require(iou_threshold > 0.0 && iou_threshold < 1.0, ErrorKind::InvalidArgument,
                    "iou_threshold must lie in (0, 1)");
  }
};

namespace detail {

// Indices of `dets` ordered by score descending, ties in input order.
inline std::vector<std::size_t> score_order(const std::vector<Detection>& dets) {
  std::vector<std::size_t> idx(dets.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::size_t a, std::size_t b) { return dets[a].score > dets[b].score; });
  return idx;
}

inline std::string group_key(const std::string& image_id, int class_id) {
  return image_id + '\x1f' + std::to_string(class_id);
}

}  // namespace detail

/// Greedy per-(image, class) NMS. Detections scoring below conf_threshold are
/// dropped; the rest are visited by descending score and kept unless their IoU
/// with an already-kept detection of the same image and class exceeds
/// iou_threshold. Output is in visiting order.
inline std::vector<Detection> nms(const std::vector<Detection>& dets, const NmsConfig& cfg) {
  cfg.validate();
  std::unordered_map<std::string, std::vector<BBox>> kept_boxes;
  std::vector<Detection> kept;
  for (std::size_t i : detail::score_order(dets)) {
    const Detection& d = dets[i];
    if (d.score < cfg.conf_threshold) continue;
    auto& group = kept_boxes[detail::group_key(d.image_id, d.class_id)];
    const bool suppressed = std::any_of(group.begin(), group.end(),
                                        [&](const BBox& k) { return iou(k, d.box) > cfg.iou_threshold; });
    if (suppressed) continue;
    group.push_back(d.box);
    kept.push_back(d);
  }
  return kept;
}

enum class ApInterpolation {
  coco101,     // mean of the precision envelope sampled at recall 0, 0.01, ..., 1
  all_points,  // exact area under the precision envelope
};

// Restricts matching to objects whose area falls in [lo, hi) (in the units of
// box.area() * area_scale). Outside objects become ignored; unmatched
// detections outside the range are dropped rather than counted as false.
struct AreaRange {
  double lo = 0.0;
  double hi = 1e300;
  double area_scale = 1.0;

  bool contains(const BBox& b) const {
    const double a = b.area() * area_scale;
    return a >= lo && a < hi;
  }
};

/// Score-ordered outcome of matching one class's detections against its
/// ground truth. Detections that matched an ignored object are removed.
struct ClassMatch {
  std::vector<double> scores;  // descending
  std::vector<char> is_tp;
  std::size_t n_positives = 0;
};

/// Each detection, in score order, takes the highest-IoU unmatched
/// non-ignored object of its class in the same image with IoU >= iou_thr
/// (ties go to the earlier object). Failing that, a detection overlapping an
/// ignored object by iou_thr is dropped; otherwise it is a false positive.
inline ClassMatch match_class(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                              int class_id, double iou_thr, const std::optional<AreaRange>& area = {}) {
  struct Obj {
    const BBox* box;
    bool ignored;
    bool matched = false;
  };
  std::unordered_map<std::string, std::vector<Obj>> by_image;
  ClassMatch out;
  for (const auto& g : gts) {
    const bool agnostic_ignore = g.ignored && g.class_id < 0;
    if (g.class_id != class_id && !agnostic_ignore) continue;
    const bool ignored = g.ignored || (area && !area->contains(g.box));
    by_image[g.image_id].push_back({&g.box, ignored});
    if (!ignored) ++out.n_positives;
  }
  for (std::size_t i : detail::score_order(dets)) {
    const Detection& d = dets[i];
    if (d.class_id != class_id) continue;
    auto it = by_image.find(d.image_id);
    Obj* best = nullptr;
    bool hits_ignored = false;
    if (it != by_image.end()) {
      double best_iou = -1.0;
      for (auto& o : it->second) {
        const double v = iou(d.box, *o.box);
        if (v < iou_thr) continue;
        if (o.ignored) {
          hits_ignored = true;
          continue;
        }
        if (!o.matched && v > best_iou) {
          best_iou = v;
          best = &o;
        }
      }
    }
    if (best) {
      best->matched = true;
      out.scores.push_back(d.score);
      out.is_tp.push_back(1);
    } else if (!hits_ignored && !(area && !area->contains(d.box))) {
      out.scores.push_back(d.score);
      out.is_tp.push_back(0);
    }
  }
  return out;
}

struct PrPoint {
  double recall = 0.0;
  double precision = 0.0;
};

inline std::vector<PrPoint> pr_curve(const ClassMatch& m) {
  std::vector<PrPoint> pts;
  pts.reserve(m.is_tp.size());
  std::size_t tp = 0, fp = 0;
  for (char t : m.is_tp) {
    (t ? tp : fp) += 1;
    const double r = m.n_positives ? static_cast<double>(tp) / static_cast<double>(m.n_positives) : 0.0;
    pts.push_back({r, static_cast<double>(tp) / static_cast<double>(tp + fp)});
  }
  return pts;
}

// AP of one matched class; 0 when the class has no positives.
inline double ap_from_match(const ClassMatch& m, ApInterpolation interp = ApInterpolation::coco101) {
  if (m.n_positives == 0 || m.is_tp.empty()) return 0.0;
  std::vector<PrPoint> pts = pr_curve(m);
  for (std::size_t i = pts.size() - 1; i > 0; --i)
    pts[i - 1].precision = std::max(pts[i - 1].precision, pts[i].precision);
  if (interp == ApInterpolation::all_points) {
    double ap = 0.0, prev_r = 0.0;
    for (const auto& p : pts) {
      ap += (p.recall - prev_r) * p.precision;
      prev_r = p.recall;
    }
    return ap;
  }
  double sum = 0.0;
  std::size_t idx = 0;
  for (int k = 0; k <= 100; ++k) {
    const double r = static_cast<double>(k) / 100.0;
    while (idx < pts.size() && pts[idx].recall < r) ++idx;
    if (idx == pts.size()) break;
    sum += pts[idx].precision;
  }
  return sum / 101.0;
}

inline double average_precision(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                int class_id, double iou_thr,
                                ApInterpolation interp = ApInterpolation::coco101) {
  detail::require(iou_thr > 0.0 && iou_thr < 1.0, ErrorKind::InvalidArgument, "iou_thr must lie in (0, 1)");
  return ap_from_match(match_class(dets, gts, class_id, iou_thr), interp);
}

// 0.50, 0.55, ..., 0.95
inline std::array<double, 10> coco_iou_thresholds() {
  std::array<double, 10> t{};
  for (int i = 0; i < 10; ++i) t[i] = static_cast<double>(50 + 5 * i) / 100.0;
  return t;
}

// Classes with at least one non-ignored object, ascending.
inline std::vector<int> gt_classes(const std::vector<GroundTruth>& gts) {
  std::vector<int> cls;
  for (const auto& g : gts)
    if (!g.ignored && g.class_id >= 0) cls.push_back(g.class_id);
  std::sort(cls.begin(), cls.end());
  cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
  return cls;
}

struct ConfusionMatrix {
  std::size_t classes = 0;  // K; index K is background
  Matrix counts;            // (K+1) x (K+1), rows = true class, cols = predicted
  Matrix normalized;        // rows scaled to sum 1 where the row has support
};

namespace detail {

inline ConfusionMatrix confusion_from(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                      double iou_thr, std::size_t K) {
  ConfusionMatrix cm;
  cm.classes = K;
  cm.counts = Matrix(K + 1, K + 1);
  struct Pair {
    double iou;
    std::size_t g, d;
  };
  std::vector<Pair> pairs;
  std::unordered_map<std::string, std::vector<std::size_t>> gts_by_image;
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!gts[g].ignored) gts_by_image[gts[g].image_id].push_back(g);
  for (std::size_t d = 0; d < dets.size(); ++d) {
    auto it = gts_by_image.find(dets[d].image_id);
    if (it == gts_by_image.end()) continue;
    for (std::size_t g : it->second) {
      const double v = iou(gts[g].box, dets[d].box);
      if (v >= iou_thr) pairs.push_back({v, g, d});
    }
  }
  std::stable_sort(pairs.begin(), pairs.end(), [](const Pair& a, const Pair& b) {
    if (a.iou != b.iou) return a.iou > b.iou;
    if (a.g != b.g) return a.g < b.g;
    return a.d < b.d;
  });
  std::vector<char> g_used(gts.size(), 0), d_used(dets.size(), 0);
  for (const auto& p : pairs) {
    if (g_used[p.g] || d_used[p.d]) continue;
    g_used[p.g] = d_used[p.d] = 1;
    cm.counts(static_cast<std::size_t>(gts[p.g].class_id), static_cast<std::size_t>(dets[p.d].class_id)) += 1.0;
  }
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (!gts[g].ignored && !g_used[g]) cm.counts(static_cast<std::size_t>(gts[g].class_id), K) += 1.0;
  for (std::size_t d = 0; d < dets.size(); ++d) {
    if (d_used[d]) continue;
    const bool in_ignore = std::any_of(gts.begin(), gts.end(), [&](const GroundTruth& g) {
      return g.ignored && g.image_id == dets[d].image_id && iou(g.box, dets[d].box) >= iou_thr;
    });
    if (!in_ignore) cm.counts(K, static_cast<std::size_t>(dets[d].class_id)) += 1.0;
  }
  cm.normalized = cm.counts;
  for (std::size_t r = 0; r <= K; ++r) {
    double s = 0.0;
    for (std::size_t c = 0; c <= K; ++c) s += cm.counts(r, c);
    if (s > 0.0)
      for (std::size_t c = 0; c <= K; ++c) cm.normalized(r, c) = cm.counts(r, c) / s;
  }
  return cm;
}

inline std::size_t infer_class_count(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
  int mx = -1;
  for (const auto& g : gts)
    if (!g.ignored) mx = std::max(mx, g.class_id);
  for (const auto& d : dets) mx = std::max(mx, d.class_id);
  return static_cast<std::size_t>(mx + 1);
}

inline void check_inputs(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
  for (const auto& d : dets) {
    require(d.score >= 0.0 && d.score <= 1.0, ErrorKind::InvalidArgument, "detection score outside [0, 1]");
    require(d.class_id >= 0, ErrorKind::InvalidArgument, "negative detection class");
  }
  for (const auto& g : gts)
    require(g.ignored || g.class_id >= 0, ErrorKind::InvalidArgument, "negative class on a non-ignored object");
}

}  // namespace detail

/// Class-agnostic matching after NMS: pairs with IoU >= iou_thr are taken
/// greedily by descending IoU, one-to-one. Matched pairs count at
/// [true][predicted], missed objects at [true][background], unmatched
/// detections at [background][predicted].
inline ConfusionMatrix confusion_matrix(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                        const NmsConfig& cfg, double iou_thr,
                                        std::optional<std::size_t> class_count = {}) {
  detail::check_inputs(dets, gts);
  const auto kept = nms(dets, cfg);
  return detail::confusion_from(kept, gts, iou_thr, class_count.value_or(detail::infer_class_count(dets, gts)));
}

struct EvalOptions {
  // Operating point for recall and the confusion matrix.
  double conf_threshold = 0.001;
  ApInterpolation interpolation = ApInterpolation::coco101;
  // When set, small/medium/large AP@[.5:.95] use the 32^2 / 96^2 pixel-area
  // cutoffs with boxes scaled by these image dimensions.
  std::optional<std::pair<double, double>> image_size;
  std::optional<std::size_t> class_count;
};

struct EvalResult {
  double map50 = 0.0;
  double map5095 = 0.0;
  double recall = 0.0;
  std::map<int, double> per_class_ap50;
  std::map<int, double> per_class_ap5095;
  std::map<int, std::vector<PrPoint>> pr_curves;  // at IoU 0.5
  ConfusionMatrix confusion;
  std::optional<std::array<double, 3>> map5095_by_area;  // small, medium, large
};

inline EvalResult map_eval(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                           const EvalOptions& opt = {}) {
  detail::check_inputs(dets, gts);
  const std::vector<int> classes = gt_classes(gts);
  if (classes.empty()) throw Error(ErrorKind::EmptyGroundTruth, "no non-ignored ground truth");
  const auto thresholds = coco_iou_thresholds();

  EvalResult res;
  double sum50 = 0.0, sum5095 = 0.0;
  for (int c : classes) {
    double ap_sum = 0.0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      const ClassMatch m = match_class(dets, gts, c, thresholds[t]);
      const double ap = ap_from_match(m, opt.interpolation);
      if (t == 0) {
        res.per_class_ap50[c] = ap;
        res.pr_curves[c] = pr_curve(m);
      }
      ap_sum += ap;
    }
    res.per_class_ap5095[c] = ap_sum / static_cast<double>(thresholds.size());
    sum50 += res.per_class_ap50[c];
    sum5095 += res.per_class_ap5095[c];
  }
  res.map50 = sum50 / static_cast<double>(classes.size());
  res.map5095 = sum5095 / static_cast<double>(classes.size());

  std::vector<Detection> operating;
  for (const auto& d : dets)
    if (d.score >= opt.conf_threshold) operating.push_back(d);
  std::size_t matched = 0, positives = 0;
  for (int c : classes) {
    const ClassMatch m = match_class(operating, gts, c, 0.5);
    positives += m.n_positives;
    for (char t : m.is_tp) matched += static_cast<std::size_t>(t);
  }
  res.recall = positives ? static_cast<double>(matched) / static_cast<double>(positives) : 0.0;
  res.confusion =
      detail::confusion_from(operating, gts, 0.5, opt.class_count.value_or(detail::infer_class_count(dets, gts)));

  if (opt.image_size) {
    const double scale = opt.image_size->first * opt.image_size->second;
    const std::array<AreaRange, 3> ranges{AreaRange{0.0, 32.0 * 32.0, scale},
                                          AreaRange{32.0 * 32.0, 96.0 * 96.0, scale},
                                          AreaRange{96.0 * 96.0, 1e300, scale}};
    std::array<double, 3> by_area{};
    for (std::size_t r = 0; r < 3; ++r) {
      double acc = 0.0;
      std::size_t n = 0;
      for (int c : classes) {
        double ap_sum = 0.0;
        bool has = false;
        for (double t : thresholds) {
          const ClassMatch m = match_class(dets, gts, c, t, ranges[r]);
          has = m.n_positives > 0;
          ap_sum += ap_from_match(m, opt.interpolation);
        }
        if (!has) continue;
        acc += ap_sum / static_cast<double>(thresholds.size());
        ++n;
      }
      by_area[r] = n ? acc / static_cast<double>(n) : 0.0;
    }
    res.map5095_by_area = by_area;
  }
  return res;
}

struct GridCell {
  double conf = 0.0;
  double iou = 0.0;
  double map50 = 0.0;
};

/// Evaluates mAP@50 after NMS for every (conf, iou) cell and returns the
/// cells best-first; equal scores order by conf, then iou, ascending.
inline std::vector<GridCell> grid_search_nms(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                             const std::vector<double>& conf_grid,
                                             const std::vector<double>& iou_grid, const EvalOptions& opt = {}) {
  detail::require(!conf_grid.empty() && !iou_grid.empty(), ErrorKind::InvalidArgument, "empty NMS grid");
  std::vector<GridCell> cells;
  for (double c : conf_grid)
    for (double u : iou_grid) {
      const auto kept = nms(dets, NmsConfig{c, u});
      EvalOptions o = opt;
      o.image_size.reset();
      cells.push_back({c, u, map_eval(kept, gts, o).map50});
    }
  std::stable_sort(cells.begin(), cells.end(), [](const GridCell& a, const GridCell& b) {
    if (a.map50 != b.map50) return a.map50 > b.map50;
    if (a.conf != b.conf) return a.conf < b.conf;
    return a.iou < b.iou;
  });
  return cells;
}

struct F1Curve {
  std::vector<double> thresholds;
  std::map<int, std::vector<double>> per_class;
  std::vector<double> macro;
  double best_threshold = 0.0;
  double best_f1 = 0.0;
};

/// F1 at each confidence cut. Greedy matching in score order means the
/// matches among detections scoring >= t are exactly the prefix of the full
/// matching, so one pass per class serves every threshold. Ties for the best
/// macro F1 resolve to the lowest threshold.
inline F1Curve f1_confidence_sweep(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts,
                                   double iou_thr, const std::vector<double>& grid) {
  detail::require(!grid.empty(), ErrorKind::InvalidArgument, "empty confidence grid");
  detail::check_inputs(dets, gts);
  const std::vector<int> classes = gt_classes(gts);
  if (classes.empty()) throw Error(ErrorKind::EmptyGroundTruth, "no non-ignored ground truth");
  F1Curve out;
  out.thresholds = grid;
  out.macro.assign(grid.size(), 0.0);
  for (int c : classes) {
    const ClassMatch m = match_class(dets, gts, c, iou_thr);
    auto& curve = out.per_class[c];
    for (std::size_t g = 0; g < grid.size(); ++g) {
      std::size_t tp = 0, fp = 0;
      for (std::size_t i = 0; i < m.scores.size() && m.scores[i] >= grid[g]; ++i) (m.is_tp[i] ? tp : fp) += 1;
      const double p = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
      const double r = static_cast<double>(tp) / static_cast<double>(m.n_positives);
      const double f1 = p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
      curve.push_back(f1);
      out.macro[g] += f1;
    }
  }
  for (auto& v : out.macro) v /= static_cast<double>(classes.size());
  out.best_f1 = -1.0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    const bool better = out.macro[g] > out.best_f1 ||
                        (out.macro[g] == out.best_f1 && grid[g] < out.best_threshold);
    if (better) {
      out.best_f1 = out.macro[g];
      out.best_threshold = grid[g];
    }
  }
  return out;
}

}  // namespace tinybox
