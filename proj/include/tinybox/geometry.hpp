#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "tinybox/error.hpp"

namespace tinybox {

// Gradient of a scalar w.r.t. a box's (cx, cy, w, h), in that order.
using BoxGrad = std::array<double, 4>;

struct CornerBox {
  double x1, y1, x2, y2;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
};

/// Axis-aligned box in center format. Units are whatever the caller uses
/// (normalized or pixels); nothing in the library assumes one or the other.
/// Degenerate boxes (w <= 0 or h <= 0, or non-finite fields) are rejected.
struct BBox {
  double cx = 0.0, cy = 0.0, w = 1.0, h = 1.0;

  BBox() = default;
  BBox(double cx_, double cy_, double w_, double h_) : cx(cx_), cy(cy_), w(w_), h(h_) {
    if (!(w > 0.0) || !(h > 0.0) || !std::isfinite(w) || !std::isfinite(h) ||
        !std::isfinite(cx) || !std::isfinite(cy)) {
      throw Error(ErrorKind::NonPositiveSize,
                  "box (" + std::to_string(cx) + ", " + std::to_string(cy) + ", " +
                      std::to_string(w) + ", " + std::to_string(h) + ") is degenerate");
    }
  }

  static BBox from_corners(const CornerBox& c) {
    return BBox(0.5 * (c.x1 + c.x2), 0.5 * (c.y1 + c.y2), c.x2 - c.x1, c.y2 - c.y1);
  }

  double area() const { return w * h; }

  friend bool operator==(const BBox&, const BBox&) = default;
};

inline CornerBox to_corners(const BBox& b) {
  return {b.cx - 0.5 * b.w, b.cy - 0.5 * b.h, b.cx + 0.5 * b.w, b.cy + 0.5 * b.h};
}

inline double iou(const BBox& a, const BBox& b) {
  const CornerBox ca = to_corners(a), cb = to_corners(b);
  const double iw = std::max(0.0, std::min(ca.x2, cb.x2) - std::max(ca.x1, cb.x1));
  const double ih = std::max(0.0, std::min(ca.y2, cb.y2) - std::max(ca.y1, cb.y1));
  const double inter = iw * ih;
  if (inter <= 0.0) return 0.0;
  return inter / (a.area() + b.area() - inter);
}

enum class OverlapVariant { IoU, GIoU, DIoU, CIoU };

inline const char* to_string(OverlapVariant v) {
  switch (v) {
    case OverlapVariant::IoU: return "iou";
    case OverlapVariant::GIoU: return "giou";
    case OverlapVariant::DIoU: return "diou";
    case OverlapVariant::CIoU: return "ciou";
  }
  return "?";
}

// How the CIoU trade-off weight alpha = v / (1 - IoU + v) enters the gradient.
//   differentiated: alpha is a function of the prediction like everything
//                   else, so the gradient is the exact derivative of the value.
//   constant:       alpha is frozen (the convention of the original CIoU
//                   formulation); the gradient then omits v * d(alpha).
enum class CiouAlpha { differentiated, constant };

struct LossValue {
  double value = 0.0;
  BoxGrad grad{0.0, 0.0, 0.0, 0.0};
};

namespace detail {

// One axis of the overlap geometry: prediction interval [p1, p2] against
// target [t1, t2]. Derivatives are with respect to the prediction's center
// and size along this axis.
struct AxisOverlap {
  double inter = 0.0, d_inter_dc = 0.0, d_inter_ds = 0.0;
  double encl = 0.0, d_encl_dc = 0.0, d_encl_ds = 0.0;

  AxisOverlap(double p1, double p2, double t1, double t2) {
    // An edge exactly on the target's edge sits on a kink; take the mean of
    // the two one-sided rates there (zero gradient for identical boxes).
    inter = std::min(p2, t2) - std::max(p1, t1);
    double d1 = 0.0, d2 = 0.0;
    if (inter > 0.0) {
      d1 = p1 > t1 ? -1.0 : p1 == t1 ? -0.5 : 0.0;
      d2 = p2 < t2 ? 1.0 : p2 == t2 ? 0.5 : 0.0;
    } else {
      inter = 0.0;
    }
    d_inter_dc = d1 + d2;
    d_inter_ds = 0.5 * (d2 - d1);

    encl = std::max(p2, t2) - std::min(p1, t1);
    const double e1 = p1 < t1 ? -1.0 : p1 == t1 ? -0.5 : 0.0;
    const double e2 = p2 > t2 ? 1.0 : p2 == t2 ? 0.5 : 0.0;
    d_encl_dc = e1 + e2;
    d_encl_ds = 0.5 * (e2 - e1);
  }
};

}  // namespace detail

/// Overlap-family regression loss 1 - metric(pred, tgt) with its closed-form
/// gradient w.r.t. the predicted (cx, cy, w, h).
///
///   IoU : 1 - I/U
///   GIoU: 1 - I/U + (A_c - U)/A_c           (A_c: enclosing-box area)
///   DIoU: 1 - I/U + rho^2/c^2                (c: enclosing-box diagonal)
///   CIoU: DIoU + alpha * v,  v = (4/pi^2)(atan(w_t/h_t) - atan(w/h))^2,
///                            alpha = v / (1 - I/U + v)
///
/// For IoU on disjoint boxes the whole gradient is exactly zero, not merely
/// small: the intersection and all its partials vanish identically.
/// Where a predicted edge coincides with a target edge the loss has a kink and
/// the returned gradient is a subgradient (see AxisOverlap).
inline LossValue overlap_loss(const BBox& pred, const BBox& tgt, OverlapVariant variant,
                              CiouAlpha alpha_mode = CiouAlpha::differentiated) {
  const CornerBox p = to_corners(pred), t = to_corners(tgt);
  const detail::AxisOverlap ax(p.x1, p.x2, t.x1, t.x2);
  const detail::AxisOverlap ay(p.y1, p.y2, t.y1, t.y2);

  const double inter = ax.inter * ay.inter;
  const BoxGrad d_inter{ay.inter * ax.d_inter_dc, ax.inter * ay.d_inter_dc,
                        ay.inter * ax.d_inter_ds, ax.inter * ay.d_inter_ds};

  const double uni = pred.area() + tgt.area() - inter;
  const BoxGrad d_area{0.0, 0.0, pred.h, pred.w};
  BoxGrad d_uni{};
  for (int i = 0; i < 4; ++i) d_uni[i] = d_area[i] - d_inter[i];

  const double iou_val = std::min(1.0, inter / uni);  // rounding can spill past 1
  BoxGrad d_iou{};
  for (int i = 0; i < 4; ++i) d_iou[i] = (d_inter[i] * uni - inter * d_uni[i]) / (uni * uni);

  LossValue out;
  out.value = 1.0 - iou_val;
  for (int i = 0; i < 4; ++i) out.grad[i] = -d_iou[i];
  if (variant == OverlapVariant::IoU) return out;

  if (variant == OverlapVariant::GIoU) {
    const double encl = ax.encl * ay.encl;
    const BoxGrad d_encl{ay.encl * ax.d_encl_dc, ax.encl * ay.d_encl_dc,
                         ay.encl * ax.d_encl_ds, ax.encl * ay.d_encl_ds};
    out.value += std::max(0.0, encl - uni) / encl;
    // d/dθ [1 - U/A_c]
    for (int i = 0; i < 4; ++i)
      out.grad[i] -= (d_uni[i] * encl - uni * d_encl[i]) / (encl * encl);
    return out;
  }

  // DIoU and CIoU share the normalized center-distance penalty.
  const double dx = pred.cx - tgt.cx, dy = pred.cy - tgt.cy;
  const double rho2 = dx * dx + dy * dy;
  const double c2 = ax.encl * ax.encl + ay.encl * ay.encl;
  const BoxGrad d_rho2{2.0 * dx, 2.0 * dy, 0.0, 0.0};
  const BoxGrad d_c2{2.0 * ax.encl * ax.d_encl_dc, 2.0 * ay.encl * ay.d_encl_dc,
                     2.0 * ax.encl * ax.d_encl_ds, 2.0 * ay.encl * ay.d_encl_ds};
  out.value += rho2 / c2;
  for (int i = 0; i < 4; ++i) out.grad[i] += (d_rho2[i] * c2 - rho2 * d_c2[i]) / (c2 * c2);
  if (variant == OverlapVariant::DIoU) return out;

  constexpr double k = 4.0 / (std::numbers::pi * std::numbers::pi);
  const double delta = std::atan(tgt.w / tgt.h) - std::atan(pred.w / pred.h);
  const double v = k * delta * delta;
  const double r2 = pred.w * pred.w + pred.h * pred.h;
  const BoxGrad d_v{0.0, 0.0, -2.0 * k * delta * pred.h / r2, 2.0 * k * delta * pred.w / r2};

  const double denom = 1.0 - iou_val + v;
  const double alpha = denom > 0.0 ? v / denom : 0.0;
  out.value += alpha * v;
  for (int i = 0; i < 4; ++i) {
    double g = alpha * d_v[i];
    if (alpha_mode == CiouAlpha::differentiated && denom > 0.0) {
      const double d_denom = -d_iou[i] + d_v[i];
      const double d_alpha = (d_v[i] * denom - v * d_denom) / (denom * denom);
      g += v * d_alpha;
    }
    out.grad[i] += g;
  }
  return out;
}

// metric(variant) = 1 - loss; IoU in [0,1], GIoU and DIoU in (-1,1].
inline double overlap_metric(const BBox& pred, const BBox& tgt, OverlapVariant variant) {
  return 1.0 - overlap_loss(pred, tgt, variant).value;
}

}  // namespace tinybox
