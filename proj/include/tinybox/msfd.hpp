#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tinybox/error.hpp"
#include "tinybox/rng.hpp"
#include "tinybox/tensor.hpp"

// Reference (naive) forward kernels for the stride-4 detection branch:
// depthwise-separable convolution, squeeze-and-excitation, and
// upsample-concat fusion, plus exact parameter and MAC accounting.
// Throughput is not a goal here; semantics and counts are.

namespace tinybox {

enum class ConvKind { standard, depthwise_separable };

struct ConvSpec {
  std::size_t c_in = 1, c_out = 1;
  std::size_t k = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
  ConvKind kind = ConvKind::standard;

  void validate() const {
    detail::require(c_in >= 1 && c_out >= 1, ErrorKind::InvalidArgument, "channel counts must be >= 1");
    detail::require(k % 2 == 1, ErrorKind::InvalidArgument, "kernel size must be odd");
    detail::require(stride >= 1, ErrorKind::InvalidArgument, "stride must be >= 1");
  }

  std::size_t out_extent(std::size_t in) const {
    detail::require(in + 2 * padding >= k, ErrorKind::ShapeMismatch, "input smaller than kernel");
    return (in + 2 * padding - k) / stride + 1;
  }
};

/// Direct cross-correlation, zero padding. `bias` may be empty.
inline FeatureMap conv2d(const FeatureMap& x, const FilterBank& w, std::span<const double> bias,
                         const ConvSpec& spec) {
  spec.validate();
  if (x.dim(1) != spec.c_in || w.shape() != Shape4{spec.c_out, spec.c_in, spec.k, spec.k} ||
      (!bias.empty() && bias.size() != spec.c_out)) {
    throw Error(ErrorKind::ShapeMismatch, "conv2d: input " + shape_string(x.shape()) + ", weights " +
                                              shape_string(w.shape()));
  }
  const std::size_t H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = spec.out_extent(H), Wo = spec.out_extent(W);
  const auto pad = static_cast<std::ptrdiff_t>(spec.padding);
  FeatureMap y({x.dim(0), spec.c_out, Ho, Wo});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t co = 0; co < spec.c_out; ++co)
      for (std::size_t oy = 0; oy < Ho; ++oy)
        for (std::size_t ox = 0; ox < Wo; ++ox) {
          double acc = bias.empty() ? 0.0 : bias[co];
          for (std::size_t ci = 0; ci < spec.c_in; ++ci)
            for (std::size_t ky = 0; ky < spec.k; ++ky) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * spec.stride + ky) - pad;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
              for (std::size_t kx = 0; kx < spec.k; ++kx) {
                const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * spec.stride + kx) - pad;
                if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
                acc += w(co, ci, ky, kx) * x(n, ci, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
              }
            }
          y(n, co, oy, ox) = acc;
        }
  return y;
}

struct DSConvParams {
  FilterBank depthwise;  // (C, 1, k, k)
  std::vector<double> depthwise_bias;
  FilterBank pointwise;  // (C_out, C, 1, 1)
  std::vector<double> pointwise_bias;
  std::size_t stride = 1;
  std::size_t padding = 1;

  std::size_t channels() const { return depthwise.dim(0); }
  std::size_t out_channels() const { return pointwise.dim(0); }
  std::size_t kernel() const { return depthwise.dim(2); }
};

/// Per-channel k x k pass followed by a 1 x 1 channel mix, in one sweep:
/// each output pixel's depthwise column is built, then projected.
inline FeatureMap depthwise_separable(const FeatureMap& x, const DSConvParams& p) {
  const std::size_t C = p.channels(), Co = p.out_channels(), k = p.kernel();
  if (x.dim(1) != C || p.depthwise.dim(1) != 1 || p.depthwise.dim(3) != k || k % 2 == 0 ||
      p.pointwise.shape() != Shape4{Co, C, 1, 1} ||
      (!p.depthwise_bias.empty() && p.depthwise_bias.size() != C) ||
      (!p.pointwise_bias.empty() && p.pointwise_bias.size() != Co)) {
    throw Error(ErrorKind::ShapeMismatch, "depthwise_separable: input " + shape_string(x.shape()) +
                                              ", depthwise " + shape_string(p.depthwise.shape()) +
                                              ", pointwise " + shape_string(p.pointwise.shape()));
  }
  const ConvSpec geom{C, Co, k, p.stride, p.padding};
  const std::size_t H = x.dim(2), W = x.dim(3);
  const std::size_t Ho = geom.out_extent(H), Wo = geom.out_extent(W);
  const auto pad = static_cast<std::ptrdiff_t>(p.padding);
  FeatureMap y({x.dim(0), Co, Ho, Wo});
  std::vector<double> column(C);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t oy = 0; oy < Ho; ++oy)
      for (std::size_t ox = 0; ox < Wo; ++ox) {
        for (std::size_t c = 0; c < C; ++c) {
          double acc = p.depthwise_bias.empty() ? 0.0 : p.depthwise_bias[c];
          for (std::size_t ky = 0; ky < k; ++ky) {
            const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * p.stride + ky) - pad;
            if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(H)) continue;
            for (std::size_t kx = 0; kx < k; ++kx) {
              const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * p.stride + kx) - pad;
              if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(W)) continue;
              acc += p.depthwise(c, 0, ky, kx) * x(n, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix));
            }
          }
          column[c] = acc;
        }
        for (std::size_t co = 0; co < Co; ++co) {
          double acc = p.pointwise_bias.empty() ? 0.0 : p.pointwise_bias[co];
          for (std::size_t c = 0; c < C; ++c) acc += p.pointwise(co, c, 0, 0) * column[c];
          y(n, co, oy, ox) = acc;
        }
      }
  return y;
}

struct SEParams {
  std::size_t channels = 64;
  std::size_t reduction = 4;
  Matrix fc1;  // hidden x channels
  std::vector<double> b1;
  Matrix fc2;  // channels x hidden
  std::vector<double> b2;

  std::size_t hidden() const { return std::max<std::size_t>(1, channels / reduction); }

  // All weights and biases zero: every gate is sigmoid(0) = 0.5.
  static SEParams zeros(std::size_t channels, std::size_t reduction = 4) {
    detail::require(channels >= 1 && reduction >= 1, ErrorKind::InvalidArgument, "bad SE geometry");
    SEParams p;
    p.channels = channels;
    p.reduction = reduction;
    p.fc1 = Matrix(p.hidden(), channels);
    p.b1.assign(p.hidden(), 0.0);
    p.fc2 = Matrix(channels, p.hidden());
    p.b2.assign(channels, 0.0);
    return p;
  }
};

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

// Per-image channel gates sigmoid(fc2(relu(fc1(avgpool(x))))), shape (N, C).
inline Matrix se_gates(const FeatureMap& x, const SEParams& p) {
  if (x.dim(1) != p.channels || p.fc1.rows != p.hidden() || p.fc1.cols != p.channels ||
      p.fc2.rows != p.channels || p.fc2.cols != p.hidden() || p.b1.size() != p.hidden() ||
      p.b2.size() != p.channels) {
    throw Error(ErrorKind::ShapeMismatch, "se_block: input " + shape_string(x.shape()) + " vs " +
                                              std::to_string(p.channels) + " channels");
  }
  const std::size_t C = p.channels, Hd = p.hidden();
  const double plane = static_cast<double>(x.dim(2) * x.dim(3));
  Matrix gates(x.dim(0), C);
  std::vector<double> pooled(C), mid(Hd);
  for (std::size_t n = 0; n < x.dim(0); ++n) {
    for (std::size_t c = 0; c < C; ++c) {
      double s = 0.0;
      for (std::size_t i = 0; i < x.dim(2); ++i)
        for (std::size_t j = 0; j < x.dim(3); ++j) s += x(n, c, i, j);
      pooled[c] = s / plane;
    }
    for (std::size_t h = 0; h < Hd; ++h) {
      double acc = p.b1[h];
      for (std::size_t c = 0; c < C; ++c) acc += p.fc1(h, c) * pooled[c];
      mid[h] = std::max(0.0, acc);
    }
    for (std::size_t c = 0; c < C; ++c) {
      double acc = p.b2[c];
      for (std::size_t h = 0; h < Hd; ++h) acc += p.fc2(c, h) * mid[h];
      gates(n, c) = sigmoid(acc);
    }
  }
  return gates;
}

inline FeatureMap se_block(const FeatureMap& x, const SEParams& p) {
  const Matrix gates = se_gates(x, p);
  FeatureMap y = x;
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t i = 0; i < x.dim(2); ++i)
        for (std::size_t j = 0; j < x.dim(3); ++j) y(n, c, i, j) *= gates(n, c);
  return y;
}

inline FeatureMap relu(FeatureMap x) {
  for (auto& v : x.storage()) v = std::max(0.0, v);
  return x;
}

enum class UpsampleMode { nearest, bilinear };

inline FeatureMap upsample(const FeatureMap& x, std::size_t factor, UpsampleMode mode = UpsampleMode::nearest) {
  detail::require(factor >= 1, ErrorKind::InvalidArgument, "upsample factor must be >= 1");
  const std::size_t H = x.dim(2), W = x.dim(3);
  FeatureMap y({x.dim(0), x.dim(1), H * factor, W * factor});
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c)
      for (std::size_t i = 0; i < H * factor; ++i)
        for (std::size_t j = 0; j < W * factor; ++j) {
          if (mode == UpsampleMode::nearest) {
            y(n, c, i, j) = x(n, c, i / factor, j / factor);
            continue;
          }
          // Half-pixel centers, edge-clamped.
          const double sy = std::clamp((static_cast<double>(i) + 0.5) / factor - 0.5, 0.0, static_cast<double>(H - 1));
          const double sx = std::clamp((static_cast<double>(j) + 0.5) / factor - 0.5, 0.0, static_cast<double>(W - 1));
          const auto y0 = static_cast<std::size_t>(sy), x0 = static_cast<std::size_t>(sx);
          const std::size_t y1 = std::min(y0 + 1, H - 1), x1 = std::min(x0 + 1, W - 1);
          const double fy = sy - static_cast<double>(y0), fx = sx - static_cast<double>(x0);
          y(n, c, i, j) = (1 - fy) * ((1 - fx) * x(n, c, y0, x0) + fx * x(n, c, y0, x1)) +
                          fy * ((1 - fx) * x(n, c, y1, x0) + fx * x(n, c, y1, x1));
        }
  return y;
}

inline FeatureMap concat_channels(const FeatureMap& a, const FeatureMap& b) {
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3)) {
    throw Error(ErrorKind::ShapeMismatch, "concat: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
  FeatureMap y({a.dim(0), a.dim(1) + b.dim(1), a.dim(2), a.dim(3)});
  const std::size_t plane = a.dim(2) * a.dim(3);
  for (std::size_t n = 0; n < a.dim(0); ++n) {
    auto dst = y.slice(n);
    const auto sa = a.slice(n), sb = b.slice(n);
    std::copy(sa.begin(), sa.end(), dst.begin());
    std::copy(sb.begin(), sb.end(), dst.begin() + static_cast<std::ptrdiff_t>(a.dim(1) * plane));
  }
  return y;
}

struct MSFDParams {
  DSConvParams block1;
  DSConvParams block2;
  SEParams se;
  FilterBank fuse;  // (C_head, C_mid + C_p3, k, k)
  std::vector<double> fuse_bias;
  std::size_t upsample_factor = 2;
  UpsampleMode upsample_mode = UpsampleMode::nearest;

  std::size_t head_channels() const { return fuse.dim(0); }
};

struct MSFDWidths {
  std::size_t p2_channels = 64;
  std::size_t mid_channels = 64;
  std::size_t p3_channels = 128;
  std::size_t head_channels = 64;
  std::size_t dw_kernel = 3;
  std::size_t fuse_kernel = 3;
  std::size_t se_reduction = 4;
};

namespace detail {
inline FilterBank random_bank(const Shape4& s, Rng& rng, double scale) {
  FilterBank fb(s);
  for (auto& v : fb.storage()) v = scale * rng.normal();
  return fb;
}
inline std::vector<double> random_vec(std::size_t n, Rng& rng, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}
inline DSConvParams random_dsconv(std::size_t c_in, std::size_t c_out, std::size_t k, Rng& rng) {
  DSConvParams p;
  p.depthwise = random_bank({c_in, 1, k, k}, rng, 1.0 / static_cast<double>(k));
  p.depthwise_bias = random_vec(c_in, rng, 0.1);
  p.pointwise = random_bank({c_out, c_in, 1, 1}, rng, 1.0 / std::sqrt(static_cast<double>(c_in)));
  p.pointwise_bias = random_vec(c_out, rng, 0.1);
  p.padding = k / 2;
  return p;
}
}  // namespace detail

// Randomly initialized branch with the given widths (same-padded convs).
inline MSFDParams make_msfd_params(const MSFDWidths& w = {}, std::uint64_t seed = 0) {
  Rng rng(seed);
  MSFDParams p;
  p.block1 = detail::random_dsconv(w.p2_channels, w.mid_channels, w.dw_kernel, rng);
  p.block2 = detail::random_dsconv(w.mid_channels, w.mid_channels, w.dw_kernel, rng);
  p.se = SEParams::zeros(w.mid_channels, w.se_reduction);
  const double s1 = 1.0 / std::sqrt(static_cast<double>(w.mid_channels));
  for (auto& v : p.se.fc1.values) v = s1 * rng.normal();
  for (auto& v : p.se.fc2.values) v = s1 * rng.normal();
  const std::size_t fan = w.mid_channels + w.p3_channels;
  p.fuse = detail::random_bank({w.head_channels, fan, w.fuse_kernel, w.fuse_kernel}, rng,
                               1.0 / std::sqrt(static_cast<double>(fan * w.fuse_kernel * w.fuse_kernel)));
  p.fuse_bias = detail::random_vec(w.head_channels, rng, 0.1);
  return p;
}

inline Shape4 msfd_output_shape(const Shape4& p2, const Shape4& p3, const MSFDParams& params) {
  if (p3[0] != p2[0] || p3[2] * params.upsample_factor != p2[2] || p3[3] * params.upsample_factor != p2[3]) {
    throw Error(ErrorKind::ShapeMismatch, "P3 " + shape_string(p3) + " is not half the resolution of P2 " +
                                              shape_string(p2));
  }
  if (p2[1] != params.block1.channels()) {
    throw Error(ErrorKind::ShapeMismatch, "P2 channels do not match the first block");
  }
  if (params.fuse.dim(1) != params.block2.out_channels() + p3[1]) {
    throw Error(ErrorKind::ShapeMismatch, "fusion conv input width does not match concat width");
  }
  return {p2[0], params.head_channels(), p2[2], p2[3]};
}

/// p2 -> dsconv -> relu -> dsconv -> relu -> SE, concatenated with the
/// upsampled p3, then a same-padded fusion conv. Output is at p2 resolution.
inline FeatureMap msfd_forward(const FeatureMap& p2, const FeatureMap& p3, const MSFDParams& params) {
  msfd_output_shape(p2.shape(), p3.shape(), params);
  FeatureMap a = relu(depthwise_separable(p2, params.block1));
  a = relu(depthwise_separable(a, params.block2));
  a = se_block(a, params.se);
  const FeatureMap fused = concat_channels(a, upsample(p3, params.upsample_factor, params.upsample_mode));
  const std::size_t k = params.fuse.dim(2);
  const ConvSpec spec{fused.dim(1), params.head_channels(), k, 1, k / 2};
  return conv2d(fused, params.fuse, params.fuse_bias, spec);
}

inline std::size_t count_params(const DSConvParams& p) {
  return p.depthwise.size() + p.depthwise_bias.size() + p.pointwise.size() + p.pointwise_bias.size();
}

inline std::size_t count_params(const SEParams& p) {
  return p.fc1.values.size() + p.b1.size() + p.fc2.values.size() + p.b2.size();
}

inline std::size_t count_params(const MSFDParams& p) {
  return count_params(p.block1) + count_params(p.block2) + count_params(p.se) + p.fuse.size() +
         p.fuse_bias.size();
}

/// Multiply-accumulates for one image (biases not counted).
///   standard:            k^2 * C_in * C_out * H_out * W_out
///   depthwise_separable: (k^2 * C_in + C_in * C_out) * H_out * W_out
inline std::uint64_t flop_count(const ConvSpec& spec, std::size_t H, std::size_t W) {
  spec.validate();
  const std::uint64_t out = static_cast<std::uint64_t>(spec.out_extent(H)) * spec.out_extent(W);
  const std::uint64_t k2 = static_cast<std::uint64_t>(spec.k) * spec.k;
  if (spec.kind == ConvKind::standard) return k2 * spec.c_in * spec.c_out * out;
  return (k2 * spec.c_in + static_cast<std::uint64_t>(spec.c_in) * spec.c_out) * out;
}

// standard / depthwise-separable MAC ratio for the same geometry.
inline double flop_ratio(ConvSpec spec, std::size_t H, std::size_t W) {
  spec.kind = ConvKind::standard;
  const double standard = static_cast<double>(flop_count(spec, H, W));
  spec.kind = ConvKind::depthwise_separable;
  return standard / static_cast<double>(flop_count(spec, H, W));
}

}  // namespace tinybox
