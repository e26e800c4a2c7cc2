#pragma once

#include <algorithm>
#include <cmath>

#include "strm/model.hpp"

namespace strm {

struct LossBreakdown {
  double recon = 0.0;
  double kl = 0.0;
  double coord = 0.0;
  double beta = 0.0;
  double total = 0.0;
};

/// How the KL term reduces over latent dimensions.
enum class KlReduction { kSum, kMean };

/// Mean squared error over every element (batch, timestep, pixel, channel).
template <typename S>
double recon_loss(const nn::Mat<S>& pred, const nn::Mat<S>& target) {
  return static_cast<double>((pred - target).squaredNorm()) / static_cast<double>(pred.size());
}

/// Mean over columns of 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar).
template <typename S>
double kl_loss(const nn::Mat<S>& mu, const nn::Mat<S>& logvar, KlReduction reduction = KlReduction::kSum) {
  const auto per = (mu.array().square() + logvar.array().exp() - S(1) - logvar.array()).template cast<double>();
  double kl = 0.5 * per.sum() / static_cast<double>(mu.cols());
  if (reduction == KlReduction::kMean) kl /= static_cast<double>(mu.rows());
  return kl;
}

/// Mean over columns of the Euclidean distance between 2-row coordinate matrices.
template <typename S>
double coord_loss(const nn::Mat<S>& pred, const nn::Mat<S>& truth) {
  return (pred - truth).template cast<double>().colwise().norm().sum() / static_cast<double>(pred.cols());
}

/// Linear ramp from 0 to 1 over `anneal_steps`; 1 when the horizon is 0.
inline double beta_schedule(long long step, long long anneal_steps) {
  if (anneal_steps <= 0) return 1.0;
  return std::clamp(static_cast<double>(step) / static_cast<double>(anneal_steps), 0.0, 1.0);
}

template <typename S>
struct LossTargets {
  nn::Mat<S> gmp;     // 3 x (N*Hg*Wg)
  nn::Mat<S> coords;  // 2 x N
};

/// recon * [enabled] + beta * kl + coord, optionally with output gradients.
template <typename S>
LossBreakdown total_loss(const ForwardResult<S>& out, const LossTargets<S>& targets, double beta,
                         bool reconstruction_enabled, OutputGrads<S>* grads = nullptr,
                         KlReduction reduction = KlReduction::kSum) {
  LossBreakdown lb;
  lb.beta = beta;
  const bool use_recon = reconstruction_enabled && out.recon.size() > 0;
  if (use_recon) lb.recon = recon_loss(out.recon, targets.gmp);
  lb.kl = kl_loss(out.mu, out.logvar, reduction);
  lb.coord = coord_loss(out.coords, targets.coords);
  lb.total = (use_recon ? lb.recon : 0.0) + beta * lb.kl + lb.coord;

  if (grads != nullptr) {
    const auto n = static_cast<S>(out.mu.cols());
    if (use_recon) {
      grads->recon = (out.recon - targets.gmp) * (S(2) / static_cast<S>(out.recon.size()));
    } else {
      grads->recon.resize(0, 0);
    }
    S kl_scale = static_cast<S>(beta) / n;
    if (reduction == KlReduction::kMean) kl_scale /= static_cast<S>(out.mu.rows());
    grads->mu = out.mu * kl_scale;
    grads->logvar = ((out.logvar.array().exp() - S(1)) * (S(0.5) * kl_scale)).matrix();
    grads->coords.resize(2, out.coords.cols());
    for (Eigen::Index j = 0; j < out.coords.cols(); ++j) {
      const auto diff = (out.coords.col(j) - targets.coords.col(j)).eval();
      const S norm = diff.norm();
      grads->coords.col(j) = norm > S(0) ? (diff / (norm * n)).eval() : decltype(diff)::Zero(2).eval();
    }
  }
  return lb;
}

}  // namespace strm
