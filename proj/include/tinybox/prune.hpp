#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>
#include <string>
#include <vector>

#include "tinybox/error.hpp"
#include "tinybox/rng.hpp"
#include "tinybox/tensor.hpp"

namespace tinybox {

/// Filter bank (C_out, C_in, k, k) as a C_out x (C_in*k*k) matrix. Row i is
/// filter i in row-major (C_in, k, k) order, i.e. the bank's own storage order.
inline Matrix flatten_filters(const FilterBank& fb) {
  const std::size_t c_out = fb.dim(0);
  const std::size_t fan_in = fb.dim(1) * fb.dim(2) * fb.dim(3);
  Matrix m(c_out, fan_in);
  for (std::size_t i = 0; i < c_out; ++i) {
    const auto src = fb.slice(i);
    double norm2 = 0.0;
    for (std::size_t j = 0; j < fan_in; ++j) {
      m(i, j) = src[j];
      norm2 += src[j] * src[j];
    }
    if (!(norm2 > 0.0)) throw Error(ErrorKind::ZeroFilter, "filter " + std::to_string(i) + " has zero norm");
  }
  return m;
}

inline FilterBank unflatten_filters(const Matrix& m, const Shape4& shape) {
  if (m.rows != shape[0] || m.cols != shape[1] * shape[2] * shape[3]) {
    throw Error(ErrorKind::ShapeMismatch,
                std::to_string(m.rows) + "x" + std::to_string(m.cols) + " matrix vs " + shape_string(shape));
  }
  return FilterBank(shape, m.values);
}

// Pairwise cosine similarity of filters. Symmetric, unit diagonal, entries
// clamped to [-1, 1].
class SimMatrix {
 public:
  static SimMatrix from_values(Matrix values) {
    detail::require(values.rows == values.cols, ErrorKind::ShapeMismatch, "similarity matrix must be square");
    for (std::size_t i = 0; i < values.rows; ++i) {
      detail::require(std::abs(values(i, i) - 1.0) <= 1e-9, ErrorKind::InvalidArgument, "diagonal must be 1");
      for (std::size_t j = 0; j < values.cols; ++j) {
        detail::require(values(i, j) == values(j, i), ErrorKind::InvalidArgument, "matrix must be symmetric");
        detail::require(values(i, j) >= -1.0 && values(i, j) <= 1.0, ErrorKind::InvalidArgument,
                        "entries must lie in [-1, 1]");
      }
    }
    return SimMatrix(std::move(values));
  }

  std::size_t size() const { return values_.rows; }
  double operator()(std::size_t i, std::size_t j) const { return values_(i, j); }
  const Matrix& values() const { return values_; }

 private:
  explicit SimMatrix(Matrix m) : values_(std::move(m)) {}
  friend SimMatrix cosine_similarity_matrix(const FilterBank& fb);

  Matrix values_;
};

inline SimMatrix cosine_similarity_matrix(const FilterBank& fb) {
  const Matrix flat = flatten_filters(fb);
  const std::size_t n = flat.rows;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (double v : flat.row(i)) s += v * v;
    norms[i] = std::sqrt(s);
  }
  Matrix sim(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    sim(i, i) = 1.0;
    const auto wi = flat.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      const auto wj = flat.row(j);
      double dot = 0.0;
      for (std::size_t k = 0; k < flat.cols; ++k) dot += wi[k] * wj[k];
      const double s = std::clamp(dot / (norms[i] * norms[j]), -1.0, 1.0);
      sim(i, j) = s;
      sim(j, i) = s;
    }
  }
  return SimMatrix(std::move(sim));
}

class PruneMask {
 public:
  explicit PruneMask(std::size_t n) : bits_(n, 1) {
    detail::require(n >= 1, ErrorKind::InvalidArgument, "mask length must be >= 1");
  }
  explicit PruneMask(std::vector<std::uint8_t> bits) : bits_(std::move(bits)) {
    detail::require(!bits_.empty(), ErrorKind::InvalidArgument, "mask length must be >= 1");
    for (auto& b : bits_) b = b ? 1 : 0;
    detail::require(active() >= 1, ErrorKind::InvalidArgument, "mask must keep at least one filter");
  }

  std::size_t size() const { return bits_.size(); }
  bool operator[](std::size_t i) const { return bits_[i] != 0; }
  const std::vector<std::uint8_t>& bits() const { return bits_; }
  std::size_t active() const { return static_cast<std::size_t>(std::count(bits_.begin(), bits_.end(), 1)); }
  std::size_t masked() const { return size() - active(); }
  bool all_ones() const { return masked() == 0; }

  void clear(std::size_t i) {
    if (bits_[i] && active() == 1) throw Error(ErrorKind::InvalidArgument, "cannot mask the last active filter");
    bits_[i] = 0;
  }

  friend bool operator==(const PruneMask&, const PruneMask&) = default;

 private:
  std::vector<std::uint8_t> bits_;
};

// Which pairs in the upper-triangle scan may clear a bit.
//   survivors_only: pair (i, j) counts only while filter i is still unmasked.
//   any_pair:       every pair with S_ij > theta clears j, regardless of i.
enum class SurvivorRule { survivors_only, any_pair };

/// Scans pairs (i, j), i < j, in row-major order and masks filter j when
/// S_ij > theta (strict). Filter 0 is never masked, so the mask keeps at
/// least one filter under either rule.
inline PruneMask derive_mask(const SimMatrix& sim, double theta,
                             SurvivorRule rule = SurvivorRule::survivors_only) {
  detail::require(theta > 0.0 && theta < 1.0, ErrorKind::InvalidArgument, "theta must lie in (0, 1)");
  PruneMask mask(sim.size());
  for (std::size_t i = 0; i < sim.size(); ++i) {
    if (rule == SurvivorRule::survivors_only && !mask[i]) continue;
    for (std::size_t j = i + 1; j < sim.size(); ++j)
      if (sim(i, j) > theta) mask.clear(j);
  }
  return mask;
}

// Percentage of masked filters, 100 * zeros / length.
inline double sparsity(const PruneMask& m) {
  return 100.0 * static_cast<double>(m.masked()) / static_cast<double>(m.size());
}

/// y = x ⊙ reshape(m, [1, C, 1, 1]): channels with a cleared bit become zero,
/// every other value is copied unchanged.
inline FeatureMap apply_mask(const FeatureMap& x, const PruneMask& m) {
  if (x.dim(1) != m.size()) {
    throw Error(ErrorKind::ShapeMismatch, "feature map has " + std::to_string(x.dim(1)) +
                                              " channels, mask has " + std::to_string(m.size()));
  }
  FeatureMap y = x;
  const std::size_t plane = x.dim(2) * x.dim(3);
  for (std::size_t n = 0; n < x.dim(0); ++n)
    for (std::size_t c = 0; c < x.dim(1); ++c) {
      if (m[c]) continue;
      auto* p = &y(n, c, 0, 0);
      std::fill(p, p + plane, 0.0);
    }
  return y;
}

struct PruneState {
  PruneMask mask{1};
  double theta = 0.85;
  int warmup_epochs = 10;
  int interval = 5;
  std::optional<int> last_update_epoch;
  std::optional<int> last_epoch;  // most recent epoch passed to schedule_step
  int recompute_count = 0;
  SurvivorRule rule = SurvivorRule::survivors_only;

  static PruneState initial(std::size_t c_out, double theta = 0.85, int warmup = 10, int interval = 5) {
    detail::require(theta > 0.0 && theta < 1.0, ErrorKind::InvalidArgument, "theta must lie in (0, 1)");
    detail::require(warmup >= 0, ErrorKind::InvalidArgument, "warm-up must be >= 0");
    detail::require(interval >= 1, ErrorKind::InvalidArgument, "interval must be >= 1");
    PruneState st;
    st.mask = PruneMask(c_out);
    st.theta = theta;
    st.warmup_epochs = warmup;
    st.interval = interval;
    return st;
  }
};

// Epochs are 1-based. Recomputation happens at epoch e iff e > W and
// (e - W) mod N == 0.
inline bool is_update_epoch(int epoch, int warmup, int interval) {
  return epoch > warmup && (epoch - warmup) % interval == 0;
}

/// Advances the pruning schedule to `epoch` given the current weights.
/// During warm-up the mask is forced to all-ones; afterwards it is recomputed
/// from `fb` on update epochs and carried over otherwise.
inline PruneState schedule_step(PruneState st, int epoch, const FilterBank& fb) {
  detail::require(epoch >= 1, ErrorKind::InvalidArgument, "epochs are 1-based");
  if (st.last_epoch && epoch < *st.last_epoch) {
    throw Error(ErrorKind::NonMonotoneEpoch,
                "epoch " + std::to_string(epoch) + " after " + std::to_string(*st.last_epoch));
  }
  detail::require(fb.dim(0) == st.mask.size(), ErrorKind::ShapeMismatch, "filter count differs from mask length");
  st.last_epoch = epoch;
  if (epoch <= st.warmup_epochs) {
    st.mask = PruneMask(fb.dim(0));
  } else if (is_update_epoch(epoch, st.warmup_epochs, st.interval)) {
    st.mask = derive_mask(cosine_similarity_matrix(fb), st.theta, st.rule);
    st.last_update_epoch = epoch;
    ++st.recompute_count;
  }
  return st;
}

/// Synthetic stand-in for training: each filter drifts from a random start
/// toward one of a few random prototypes, so redundancy forms over time.
///
///   filter_i(e) = (1 - a(e)) * start_i + a(e) * (proto_{i mod P} + noise * n_i)
///   a(e) = min(1, drift_rate * min(e, freeze_epoch))
///
/// The bank stops changing after freeze_epoch.
struct DriftSpec {
  std::size_t filters = 64;
  std::size_t prototypes = 16;
  std::size_t c_in = 16;
  std::size_t kernel = 3;
  double drift_rate = 0.05;
  double noise = 0.0;
  int epochs = 50;
  int freeze_epoch = 20;
  double theta = 0.85;
  int warmup_epochs = 10;
  std::vector<int> intervals{1, 3, 5, 10};
};

struct SparsityTrace {
  std::vector<int> intervals;
  // sparsity[k][e - 1]: percentage for intervals[k] after epoch e.
  std::vector<std::vector<double>> sparsity;
  std::vector<int> recompute_counts;
  std::vector<PruneMask> final_masks;
};

inline FilterBank drifted_bank(const DriftSpec& spec, const std::vector<double>& start,
                               const std::vector<double>& targets, int epoch) {
  const double a = std::min(1.0, spec.drift_rate * static_cast<double>(std::min(epoch, spec.freeze_epoch)));
  std::vector<double> w(start.size());
  for (std::size_t i = 0; i < w.size(); ++i) w[i] = (1.0 - a) * start[i] + a * targets[i];
  return FilterBank({spec.filters, spec.c_in, spec.kernel, spec.kernel}, std::move(w));
}

inline SparsityTrace simulate_convergence(const DriftSpec& spec, std::uint64_t seed) {
  detail::require(spec.filters >= 1 && spec.prototypes >= 1, ErrorKind::InvalidArgument, "empty drift spec");
  detail::require(spec.epochs >= 1, ErrorKind::InvalidArgument, "epochs must be >= 1");
  Rng rng(seed);
  const std::size_t fan_in = spec.c_in * spec.kernel * spec.kernel;
  std::vector<double> protos(spec.prototypes * fan_in);
  for (auto& v : protos) v = rng.normal();
  std::vector<double> start(spec.filters * fan_in), targets(spec.filters * fan_in);
  for (auto& v : start) v = rng.normal();
  for (std::size_t i = 0; i < spec.filters; ++i) {
    const std::size_t p = i % spec.prototypes;
    for (std::size_t k = 0; k < fan_in; ++k)
      targets[i * fan_in + k] = protos[p * fan_in + k] + spec.noise * rng.normal();
  }

  SparsityTrace trace;
  trace.intervals = spec.intervals;
  std::vector<PruneState> states;
  for (int n : spec.intervals)
    states.push_back(PruneState::initial(spec.filters, spec.theta, spec.warmup_epochs, n));
  trace.sparsity.assign(spec.intervals.size(), {});
  for (int e = 1; e <= spec.epochs; ++e) {
    const FilterBank bank = drifted_bank(spec, start, targets, e);
    for (std::size_t k = 0; k < states.size(); ++k) {
      states[k] = schedule_step(std::move(states[k]), e, bank);
      trace.sparsity[k].push_back(sparsity(states[k].mask));
    }
  }
  for (const auto& st : states) {
    trace.recompute_counts.push_back(st.recompute_count);
    trace.final_masks.push_back(st.mask);
  }
  return trace;
}

inline FilterBank random_gaussian_bank(const Shape4& shape, std::uint64_t seed) {
  Rng rng(seed);
  FilterBank fb(shape);
  for (auto& v : fb.storage()) v = rng.normal();
  return fb;
}

}  // namespace tinybox
