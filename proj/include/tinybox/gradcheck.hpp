#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "tinybox/geometry.hpp"
#include "tinybox/rng.hpp"

namespace tinybox {

// Central finite differences of a scalar function of n parameters:
//   g_i = (f(x + h e_i) - f(x - h e_i)) / 2h
// f receives the perturbed parameter vector by const reference.
template <typename Fn>
std::vector<double> central_difference(Fn&& f, std::vector<double> x, double step = 1e-5) {
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x[i];
    x[i] = saved + step;
    const double up = f(static_cast<const std::vector<double>&>(x));
    x[i] = saved - step;
    const double down = f(static_cast<const std::vector<double>&>(x));
    x[i] = saved;
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

// max_i |a_i - b_i| / max(max_i |a_i|, max_i |b_i|). Two all-zero vectors
// compare equal (error 0).
inline double relative_error(std::span<const double> a, std::span<const double> b) {
  double diff = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - b[i]));
    scale = std::max({scale, std::abs(a[i]), std::abs(b[i])});
  }
  if (scale == 0.0) return diff;
  return diff / scale;
}

/// True when some predicted edge lies within `margin` of a target edge along
/// the same axis. The overlap losses are piecewise smooth with kinks exactly
/// on those coincidences, and a central difference straddling one measures a
/// one-sided average rather than the derivative.
inline bool near_kink(const BBox& pred, const BBox& tgt, double margin) {
  const CornerBox p = to_corners(pred), t = to_corners(tgt);
  const double xs_p[] = {p.x1, p.x2}, xs_t[] = {t.x1, t.x2};
  const double ys_p[] = {p.y1, p.y2}, ys_t[] = {t.y1, t.y2};
  for (double a : xs_p)
    for (double b : xs_t)
      if (std::abs(a - b) < margin) return true;
  for (double a : ys_p)
    for (double b : ys_t)
      if (std::abs(a - b) < margin) return true;
  return false;
}

struct PairSampler {
  double min_size = 0.005;
  double max_size = 0.2;
  // Predicted center offset, in units of the target's size.
  double max_offset = 3.0;
  double kink_margin = 1e-4;
};

// Random (pred, tgt) pair in normalized coordinates, resampled until it is
// clear of the kink set. Offsets up to several box sizes give a mix of
// overlapping and disjoint pairs.
inline std::pair<BBox, BBox> sample_pair(Rng& rng, const PairSampler& s = {}) {
  for (;;) {
    const double tw = rng.uniform(s.min_size, s.max_size);
    const double th = rng.uniform(s.min_size, s.max_size);
    const BBox tgt(rng.uniform(0.2, 0.8), rng.uniform(0.2, 0.8), tw, th);
    const double pw = tw * rng.uniform(0.5, 2.0);
    const double ph = th * rng.uniform(0.5, 2.0);
    const BBox pred(tgt.cx + rng.uniform(-s.max_offset, s.max_offset) * tw,
                    tgt.cy + rng.uniform(-s.max_offset, s.max_offset) * th, pw, ph);
    if (!near_kink(pred, tgt, s.kink_margin)) return {pred, tgt};
  }
}

// Random disjoint pair (interiors do not intersect), also clear of kinks.
inline std::pair<BBox, BBox> sample_disjoint_pair(Rng& rng, const PairSampler& s = {}) {
  for (;;) {
    auto pair = sample_pair(rng, s);
    if (iou(pair.first, pair.second) == 0.0) return pair;
  }
}

}  // namespace tinybox
