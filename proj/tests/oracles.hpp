#pragma once
// Independent reference implementations. These deliberately avoid the
// library's code paths: plain loops, corner arithmetic, no shared helpers
// beyond the value types.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "tinybox/tinybox.hpp"

namespace oracle {

using tinybox::BBox;
using tinybox::Detection;
using tinybox::FeatureMap;
using tinybox::GroundTruth;

inline double box_iou(const BBox& a, const BBox& b) {
  const double ax1 = a.cx - a.w / 2, ax2 = a.cx + a.w / 2, ay1 = a.cy - a.h / 2, ay2 = a.cy + a.h / 2;
  const double bx1 = b.cx - b.w / 2, bx2 = b.cx + b.w / 2, by1 = b.cy - b.h / 2, by2 = b.cy + b.h / 2;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  return inter / (a.w * a.h + b.w * b.h - inter);
}

// Scalar NWD straight from the definition.
inline double nwd_scalar(double cx1, double cy1, double w1, double h1, double cx2, double cy2, double w2, double h2,
                         double C) {
  const double w2sq = (cx1 - cx2) * (cx1 - cx2) + (cy1 - cy2) * (cy1 - cy2) + (w1 / 2 - w2 / 2) * (w1 / 2 - w2 / 2) +
                      (h1 / 2 - h2 / 2) * (h1 / 2 - h2 / 2);
  return std::exp(-std::sqrt(w2sq) / C);
}

// --- AP -------------------------------------------------------------------

// Greedy matching for one class at one threshold; returns TP flags in score
// order (stable on ties) and the positive count. No ignored objects.
struct Ranked {
  std::vector<int> tp;
  int positives = 0;
};

inline Ranked rank_class(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts, int cls,
                         double thr) {
  Ranked r;
  std::vector<int> gt_idx;
  for (std::size_t g = 0; g < gts.size(); ++g)
    if (gts[g].class_id == cls) gt_idx.push_back(static_cast<int>(g));
  r.positives = static_cast<int>(gt_idx.size());

  std::vector<int> order;
  for (std::size_t d = 0; d < dets.size(); ++d)
    if (dets[d].class_id == cls) order.push_back(static_cast<int>(d));
  // insertion sort: descending score, input order on ties
  for (std::size_t i = 1; i < order.size(); ++i)
    for (std::size_t j = i; j > 0 && dets[order[j]].score > dets[order[j - 1]].score; --j)
      std::swap(order[j], order[j - 1]);

  std::set<int> used;
  for (int d : order) {
    int best = -1;
    double best_iou = -1;
    for (int g : gt_idx) {
      if (used.count(g) || gts[g].image_id != dets[d].image_id) continue;
      const double v = box_iou(dets[d].box, gts[g].box);
      if (v >= thr && v > best_iou) {
        best_iou = v;
        best = g;
      }
    }
    if (best >= 0) used.insert(best);
    r.tp.push_back(best >= 0 ? 1 : 0);
  }
  return r;
}

// 101-point interpolated AP: at each recall level r, the best precision at
// any rank whose recall reaches r.
inline double ap101(const Ranked& r) {
  if (r.positives == 0 || r.tp.empty()) return 0.0;
  std::vector<double> rec, prec;
  int tp = 0;
  for (std::size_t i = 0; i < r.tp.size(); ++i) {
    tp += r.tp[i];
    rec.push_back(static_cast<double>(tp) / r.positives);
    prec.push_back(static_cast<double>(tp) / static_cast<double>(i + 1));
  }
  double sum = 0;
  for (int k = 0; k <= 100; ++k) {
    const double level = k / 100.0;
    double best = 0;
    bool any = false;
    for (std::size_t i = 0; i < rec.size(); ++i)
      if (rec[i] >= level) {
        best = any ? std::max(best, prec[i]) : prec[i];
        any = true;
      }
    sum += best;
  }
  return sum / 101.0;
}

struct MapResult {
  double map50 = 0;
  double map5095 = 0;
};

inline MapResult brute_map(const std::vector<Detection>& dets, const std::vector<GroundTruth>& gts) {
  std::set<int> classes;
  for (const auto& g : gts) classes.insert(g.class_id);
  MapResult m;
  double s50 = 0, s5095 = 0;
  for (int c : classes) {
    double acc = 0;
    for (int t = 0; t < 10; ++t) {
      const double ap = ap101(rank_class(dets, gts, c, (50 + 5 * t) / 100.0));
      if (t == 0) s50 += ap;
      acc += ap;
    }
    s5095 += acc / 10.0;
  }
  m.map50 = s50 / static_cast<double>(classes.size());
  m.map5095 = s5095 / static_cast<double>(classes.size());
  return m;
}

// --- convolution ----------------------------------------------------------

// Depthwise pass as C separate single-channel conv2d calls, then a 1x1
// conv2d for the pointwise mix.
inline FeatureMap two_stage_dsconv(const FeatureMap& x, const tinybox::DSConvParams& p) {
  using namespace tinybox;
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), k = p.depthwise.dim(2);
  const ConvSpec one{1, 1, k, p.stride, p.padding};
  const std::size_t Ho = one.out_extent(H), Wo = one.out_extent(W);
  FeatureMap mid({N, C, Ho, Wo});
  for (std::size_t c = 0; c < C; ++c) {
    FeatureMap xc({N, 1, H, W});
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) xc(n, 0, i, j) = x(n, c, i, j);
    FilterBank kc({1, 1, k, k});
    for (std::size_t i = 0; i < k; ++i)
      for (std::size_t j = 0; j < k; ++j) kc(0, 0, i, j) = p.depthwise(c, 0, i, j);
    std::vector<double> bc;
    if (!p.depthwise_bias.empty()) bc.push_back(p.depthwise_bias[c]);
    const FeatureMap yc = conv2d(xc, kc, bc, one);
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < Ho; ++i)
        for (std::size_t j = 0; j < Wo; ++j) mid(n, c, i, j) = yc(n, 0, i, j);
  }
  const ConvSpec pw{C, p.pointwise.dim(0), 1, 1, 0};
  return conv2d(mid, p.pointwise, p.pointwise_bias, pw);
}

}  // namespace oracle
