#pragma once

#include <Eigen/Core>

#include <cmath>
#include <vector>

#include "strm/rng.hpp"

namespace strm::nn {

template <typename S>
using Mat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>;
template <typename S>
using Vec = Eigen::Matrix<S, Eigen::Dynamic, 1>;

/// Batch of feature maps stored channels-first per pixel: a C x (N*H*W)
/// matrix whose column n*H*W + y*W + x holds the channel vector of pixel
/// (x, y) of image n. The memory of image n is therefore contiguous and can be
/// viewed as a (C*H*W) x 1 feature vector without copying.
template <typename S>
struct FeatureMap {
  Mat<S> data;
  int height = 0;
  int width = 0;
  int count = 0;

  int channels() const { return static_cast<int>(data.rows()); }
  int pixels() const { return height * width; }

  /// (C*H*W) x N view, one column per image.
  Eigen::Map<const Mat<S>> flat() const {
    return {data.data(), static_cast<Eigen::Index>(channels()) * pixels(), count};
  }

  static FeatureMap from_flat(const Mat<S>& flat, int channels, int height, int width) {
    FeatureMap f;
    f.height = height;
    f.width = width;
    f.count = static_cast<int>(flat.cols());
    f.data = Eigen::Map<const Mat<S>>(flat.data(), channels, flat.cols() * height * width);
    return f;
  }
};

template <typename S>
S sigmoid(S x) {
  return S(1) / (S(1) + std::exp(-x));
}

/// Elementwise logistic function (vectorized).
template <typename Derived>
auto logistic(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (S(1) / (S(1) + (-x.array()).exp())).matrix();
}

template <typename Derived>
auto silu(const Eigen::MatrixBase<Derived>& x) {
  using S = typename Derived::Scalar;
  return (x.array() / (S(1) + (-x.array()).exp())).matrix();
}

/// d silu / dx evaluated at pre-activation x, multiplied into upstream grad.
template <typename S>
Mat<S> silu_backward(const Mat<S>& pre, const Mat<S>& grad_out) {
  const auto s = (S(1) / (S(1) + (-pre.array()).exp())).eval();
  return (grad_out.array() * s * (S(1) + pre.array() * (S(1) - s))).matrix();
}

/// Fan-in scaled uniform init: U(-a, a) with a = sqrt(3 / fan_in).
template <typename S>
void init_uniform(Mat<S>& m, double fan_in, Rng& rng) {
  const double a = std::sqrt(3.0 / fan_in);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(rng.uniform(-a, a));
}

template <typename S>
bool all_finite(const Mat<S>& m) {
  return m.allFinite();
}

}  // namespace strm::nn
