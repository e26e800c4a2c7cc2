#pragma once

#include <algorithm>
#include <cassert>
#include <functional>
#include <string>

#include "strm/nn/tensor.hpp"

namespace strm::nn {

/// Callback used to enumerate parameters in a fixed order.
template <typename S>
using ParamVisitor = std::function<void(const std::string& name, Mat<S>& value)>;

// ---------------------------------------------------------------------------
// Linear

template <typename S>
struct Linear {
  Mat<S> weight;  // out x in
  Mat<S> bias;    // out x 1

  Linear() = default;
  Linear(int in, int out) : weight(Mat<S>::Zero(out, in)), bias(Mat<S>::Zero(out, 1)) {}

  int in_features() const { return static_cast<int>(weight.cols()); }
  int out_features() const { return static_cast<int>(weight.rows()); }

  void init(Rng& rng) {
    init_uniform(weight, in_features(), rng);
    bias.setZero();
  }

  template <typename Derived>
  Mat<S> forward(const Eigen::MatrixBase<Derived>& x) const {
    Mat<S> y = weight * x;
    y.colwise() += bias.col(0);
    return y;
  }

  /// Accumulates into `grad`; returns dL/dx.
  template <typename Derived>
  Mat<S> backward(const Eigen::MatrixBase<Derived>& x, const Mat<S>& dy, Linear& grad, bool need_dx = true) const {
    grad.weight.noalias() += dy * x.transpose();
    grad.bias.col(0) += dy.rowwise().sum();
    if (!need_dx) return {};
    return weight.transpose() * dy;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// 3x3 convolution geometry (padding 1)

struct ConvGeometry {
  int in_h = 0, in_w = 0;    // the larger ("image") side
  int out_h = 0, out_w = 0;  // the sampled side
  int stride = 1;

  static ConvGeometry for_input(int h, int w, int stride) {
    return {h, w, (h - 1) / stride + 1, (w - 1) / stride + 1, stride};
  }
};

/// Gathers 3x3 neighborhoods: (C*H_in*W_in per image) -> (9C) x (N*H_out*W_out).
/// Row block k = ky*3 + kx holds the C channels of the tap.
template <typename S>
Mat<S> im2col(const Mat<S>& x, int count, const ConvGeometry& g) {
  const Eigen::Index c = x.rows();
  const Eigen::Index in_px = static_cast<Eigen::Index>(g.in_h) * g.in_w;
  const Eigen::Index out_px = static_cast<Eigen::Index>(g.out_h) * g.out_w;
  Mat<S> cols(9 * c, static_cast<Eigen::Index>(count) * out_px);
  const S* src = x.data();
  S* dst = cols.data();
  for (int n = 0; n < count; ++n) {
    const S* img = src + n * in_px * c;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox, dst += 9 * c) {
        const int ix0 = ox * g.stride - 1;
        const bool inner_x = ix0 >= 0 && ix0 + 2 < g.in_w;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * g.stride - 1 + ky;
          if (inner_x && iy >= 0 && iy < g.in_h) {
            // The three taps of this row are adjacent pixels: one contiguous copy.
            std::copy_n(img + (static_cast<Eigen::Index>(iy) * g.in_w + ix0) * c, 3 * c, dst + ky * 3 * c);
            continue;
          }
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ix0 + kx;
            S* block = dst + (ky * 3 + kx) * c;
            if (iy < 0 || iy >= g.in_h || ix < 0 || ix >= g.in_w) {
              std::fill_n(block, c, S(0));
            } else {
              std::copy_n(img + (static_cast<Eigen::Index>(iy) * g.in_w + ix) * c, c, block);
            }
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col (scatter-add).
template <typename S>
Mat<S> col2im(const Mat<S>& cols, int count, const ConvGeometry& g) {
  const Eigen::Index c = cols.rows() / 9;
  const Eigen::Index in_px = static_cast<Eigen::Index>(g.in_h) * g.in_w;
  Mat<S> x = Mat<S>::Zero(c, static_cast<Eigen::Index>(count) * in_px);
  const S* src = cols.data();
  S* dst = x.data();
  for (int n = 0; n < count; ++n) {
    S* img = dst + n * in_px * c;
    for (int oy = 0; oy < g.out_h; ++oy) {
      for (int ox = 0; ox < g.out_w; ++ox, src += 9 * c) {
        const int ix0 = ox * g.stride - 1;
        const bool inner_x = ix0 >= 0 && ix0 + 2 < g.in_w;
        for (int ky = 0; ky < 3; ++ky) {
          const int iy = oy * g.stride - 1 + ky;
          if (iy < 0 || iy >= g.in_h) continue;
          if (inner_x) {
            const S* row = src + ky * 3 * c;
            S* out = img + (static_cast<Eigen::Index>(iy) * g.in_w + ix0) * c;
            for (Eigen::Index k = 0; k < 3 * c; ++k) out[k] += row[k];
            continue;
          }
          for (int kx = 0; kx < 3; ++kx) {
            const int ix = ix0 + kx;
            if (ix < 0 || ix >= g.in_w) continue;
            const S* block = src + (ky * 3 + kx) * c;
            S* out = img + (static_cast<Eigen::Index>(iy) * g.in_w + ix) * c;
            for (Eigen::Index k = 0; k < c; ++k) out[k] += block[k];
          }
        }
      }
    }
  }
  return x;
}

// ---------------------------------------------------------------------------
// Conv2d, kernel 3, padding 1

template <typename S>
struct Conv2d {
  Mat<S> weight;  // out x 9*in
  Mat<S> bias;    // out x 1
  int stride = 2;

  Conv2d() = default;
  Conv2d(int in, int out, int stride_) : weight(Mat<S>::Zero(out, 9 * in)), bias(Mat<S>::Zero(out, 1)), stride(stride_) {}

  int in_channels() const { return static_cast<int>(weight.cols() / 9); }
  int out_channels() const { return static_cast<int>(weight.rows()); }

  void init(Rng& rng) {
    init_uniform(weight, 9.0 * in_channels(), rng);
    bias.setZero();
  }

  struct Cache {
    Mat<S> cols;
    ConvGeometry geom;
    int count = 0;
  };

  FeatureMap<S> forward(const FeatureMap<S>& x, Cache* cache) const {
    const ConvGeometry g = ConvGeometry::for_input(x.height, x.width, stride);
    Mat<S> cols = im2col(x.data, x.count, g);
    FeatureMap<S> y;
    y.height = g.out_h;
    y.width = g.out_w;
    y.count = x.count;
    y.data.noalias() = weight * cols;
    y.data.colwise() += bias.col(0);
    if (cache != nullptr) {
      cache->cols = std::move(cols);
      cache->geom = g;
      cache->count = x.count;
    }
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy, Conv2d& grad, bool need_dx = true) const {
    grad.weight.noalias() += dy * cache.cols.transpose();
    grad.bias.col(0) += dy.rowwise().sum();
    if (!need_dx) return {};
    const Mat<S> dcols = weight.transpose() * dy;
    return col2im(dcols, cache.count, cache.geom);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// Transposed conv, kernel 3: the adjoint of Conv2d with padding 1. Stride 2
// doubles the spatial size exactly.

template <typename S>
struct ConvTranspose2d {
  Mat<S> weight;  // in x 9*out
  Mat<S> bias;    // out x 1
  int stride = 2;

  ConvTranspose2d() = default;
  ConvTranspose2d(int in, int out, int stride_)
      : weight(Mat<S>::Zero(in, 9 * out)), bias(Mat<S>::Zero(out, 1)), stride(stride_) {}

  int in_channels() const { return static_cast<int>(weight.rows()); }
  int out_channels() const { return static_cast<int>(weight.cols() / 9); }

  void init(Rng& rng) {
    init_uniform(weight, 9.0 * in_channels() / (stride * stride), rng);
    bias.setZero();
  }

  struct Cache {
    ConvGeometry geom;
    int count = 0;
  };

  FeatureMap<S> forward(const FeatureMap<S>& x, Cache* cache) const {
    const ConvGeometry g{x.height * stride, x.width * stride, x.height, x.width, stride};
    const Mat<S> cols = weight.transpose() * x.data;
    FeatureMap<S> y;
    y.height = g.in_h;
    y.width = g.in_w;
    y.count = x.count;
    y.data = col2im(cols, x.count, g);
    y.data.colwise() += bias.col(0);
    if (cache != nullptr) {
      cache->geom = g;
      cache->count = x.count;
    }
    return y;
  }

  /// `x` is the forward input.
  Mat<S> backward(const Cache& cache, const Mat<S>& x, const Mat<S>& dy, ConvTranspose2d& grad) const {
    const Mat<S> dcols = im2col(dy, cache.count, cache.geom);
    grad.weight.noalias() += x * dcols.transpose();
    grad.bias.col(0) += dy.rowwise().sum();
    return weight * dcols;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

// ---------------------------------------------------------------------------
// LayerNorm over rows (features) of each column

template <typename S>
struct LayerNorm {
  Mat<S> gamma;  // d x 1
  Mat<S> beta;   // d x 1
  static constexpr double kEps = 1e-5;

  LayerNorm() = default;
  explicit LayerNorm(int d) : gamma(Mat<S>::Ones(d, 1)), beta(Mat<S>::Zero(d, 1)) {}

  struct Cache {
    Mat<S> xhat;
    Vec<S> inv_std;
  };

  Mat<S> forward(const Mat<S>& x, Cache* cache) const {
    const Eigen::Index d = x.rows();
    Mat<S> xhat(x.rows(), x.cols());
    Vec<S> inv_std(x.cols());
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const S mean = x.col(j).mean();
      const S var = (x.col(j).array() - mean).square().sum() / static_cast<S>(d);
      inv_std(j) = S(1) / std::sqrt(var + static_cast<S>(kEps));
      xhat.col(j) = (x.col(j).array() - mean) * inv_std(j);
    }
    Mat<S> y = (xhat.array().colwise() * gamma.col(0).array()).matrix();
    y.colwise() += beta.col(0);
    if (cache != nullptr) {
      cache->xhat = std::move(xhat);
      cache->inv_std = std::move(inv_std);
    }
    return y;
  }

  Mat<S> backward(const Cache& cache, const Mat<S>& dy, LayerNorm& grad) const {
    const auto d = static_cast<S>(dy.rows());
    grad.gamma.col(0) += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
    grad.beta.col(0) += dy.rowwise().sum();
    const Mat<S> dxhat = (dy.array().colwise() * gamma.col(0).array()).matrix();
    Mat<S> dx(dy.rows(), dy.cols());
    for (Eigen::Index j = 0; j < dy.cols(); ++j) {
      const S mean_g = dxhat.col(j).sum() / d;
      const S mean_gx = dxhat.col(j).dot(cache.xhat.col(j)) / d;
      dx.col(j) = cache.inv_std(j) * (dxhat.col(j).array() - mean_g - cache.xhat.col(j).array() * mean_gx);
    }
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    f(prefix + ".gamma", gamma);
    f(prefix + ".beta", beta);
  }
};

}  // namespace strm::nn
