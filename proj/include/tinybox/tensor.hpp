#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tinybox/error.hpp"

namespace tinybox {

using Shape4 = std::array<std::size_t, 4>;

inline std::string shape_string(const Shape4& s) {
  return "(" + std::to_string(s[0]) + "," + std::to_string(s[1]) + "," + std::to_string(s[2]) +
         "," + std::to_string(s[3]) + ")";
}

/// Dense row-major 4-D array. Used both for filter banks (C_out, C_in, k, k)
/// and feature maps (N, C, H, W). All dimensions must be >= 1.
template <typename T>
class Tensor4 {
 public:
  Tensor4() = default;

  explicit Tensor4(const Shape4& shape, T fill = T{}) : shape_(shape) {
    check_shape(shape);
    data_.assign(shape[0] * shape[1] * shape[2] * shape[3], fill);
  }

  Tensor4(const Shape4& shape, std::vector<T> data) : shape_(shape), data_(std::move(data)) {
    check_shape(shape);
    if (data_.size() != shape[0] * shape[1] * shape[2] * shape[3]) {
      throw Error(ErrorKind::ShapeMismatch, "data length " + std::to_string(data_.size()) +
                                                " does not match shape " + shape_string(shape));
    }
  }

  const Shape4& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_[i]; }
  std::size_t size() const { return data_.size(); }

  T& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) {
    return data_[index(a, b, c, d)];
  }
  const T& operator()(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return data_[index(a, b, c, d)];
  }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  // Contiguous slice for the leading index (one filter, or one image).
  std::span<const T> slice(std::size_t a) const {
    const std::size_t stride = shape_[1] * shape_[2] * shape_[3];
    return std::span<const T>(data_).subspan(a * stride, stride);
  }
  std::span<T> slice(std::size_t a) {
    const std::size_t stride = shape_[1] * shape_[2] * shape_[3];
    return std::span<T>(data_).subspan(a * stride, stride);
  }

  friend bool operator==(const Tensor4&, const Tensor4&) = default;

 private:
  static void check_shape(const Shape4& s) {
    for (std::size_t d : s)
      if (d < 1) throw Error(ErrorKind::ShapeMismatch, "zero dimension in " + shape_string(s));
  }

  std::size_t index(std::size_t a, std::size_t b, std::size_t c, std::size_t d) const {
    return ((a * shape_[1] + b) * shape_[2] + c) * shape_[3] + d;
  }

  Shape4 shape_{1, 1, 1, 1};
  std::vector<T> data_ = std::vector<T>(1);
};

using FilterBank = Tensor4<double>;
using FeatureMap = Tensor4<double>;

// Row-major 2-D matrix.
struct Matrix {
  std::size_t rows = 0, cols = 0;
  std::vector<double> values;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  double& operator()(std::size_t r, std::size_t c) { return values[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return values[r * cols + c]; }
  std::span<const double> row(std::size_t r) const {
    return std::span<const double>(values).subspan(r * cols, cols);
  }
};

}  // namespace tinybox
