#pragma once

// Independent reference computations shared by the unit and acceptance tests.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "strm/losses.hpp"
#include "strm/model.hpp"
#include "strm/rng.hpp"

namespace strm::oracle {

/// Plain-loop mean squared error.
inline double recon(const nn::Mat<double>& a, const nn::Mat<double>& b) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) s += (a(i, j) - b(i, j)) * (a(i, j) - b(i, j));
  return s / static_cast<double>(a.rows() * a.cols());
}

/// Closed-form Gaussian KL against N(0, 1), summed over dims, averaged over columns.
inline double kl(const nn::Mat<double>& mu, const nn::Mat<double>& logvar) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < mu.cols(); ++j) {
    double col = 0.0;
    for (Eigen::Index i = 0; i < mu.rows(); ++i) {
      const double m = mu(i, j), lv = logvar(i, j);
      col += 0.5 * (m * m + std::exp(lv) - 1.0 - lv);
    }
    s += col;
  }
  return s / static_cast<double>(mu.cols());
}

inline double coord(const nn::Mat<double>& p, const nn::Mat<double>& t) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < p.cols(); ++j) s += std::hypot(p(0, j) - t(0, j), p(1, j) - t(1, j));
  return s / static_cast<double>(p.cols());
}

/// Count of values <= tau by direct scan.
inline std::size_t count_within(const std::vector<double>& d, double tau) {
  std::size_t n = 0;
  for (double x : d) n += x <= tau ? 1 : 0;
  return n;
}

/// Midpoint-rule integral of the empirical accuracy curve over [0, max] on a
/// fine grid, divided by max.
inline double fine_grid_auc(std::vector<double> d, double max_threshold, int points = 100000) {
  std::sort(d.begin(), d.end());
  double area = 0.0;
  const double h = max_threshold / points;
  for (int i = 0; i < points; ++i) {
    const double tau = (i + 0.5) * h;
    const auto k = std::upper_bound(d.begin(), d.end(), tau) - d.begin();
    area += static_cast<double>(k) / static_cast<double>(d.size()) * h;
  }
  return area / max_threshold;
}

struct GradCheckStats {
  std::size_t params = 0;
  std::size_t within_tight = 0;  // relative error < 1e-3
  double worst = 0.0;
  std::string worst_name;
};

/// Micro-model input and targets drawn from `seed`.
struct MicroProblem {
  nn::FeatureMap<double> frames;
  LossTargets<double> targets;
  nn::Mat<double> eps;
  int length = 3;
};

inline MicroProblem micro_problem(const ModelConfig& cfg, int sequences, std::uint64_t seed) {
  Rng rng(seed);
  MicroProblem p;
  p.length = cfg.seq_len;
  const int n = sequences * cfg.seq_len;
  p.frames.height = cfg.fpp.height;
  p.frames.width = cfg.fpp.width;
  p.frames.count = n;
  p.frames.data.resize(3, static_cast<Eigen::Index>(n) * cfg.fpp.height * cfg.fpp.width);
  for (Eigen::Index i = 0; i < p.frames.data.size(); ++i) p.frames.data.data()[i] = rng.uniform();
  p.targets.gmp.resize(3, static_cast<Eigen::Index>(n) * cfg.gmp.height * cfg.gmp.width);
  for (Eigen::Index i = 0; i < p.targets.gmp.size(); ++i) p.targets.gmp.data()[i] = rng.uniform();
  p.targets.coords.resize(2, n);
  for (Eigen::Index i = 0; i < p.targets.coords.size(); ++i) p.targets.coords.data()[i] = rng.uniform();
  p.eps.resize(cfg.latent_dim, n);
  for (Eigen::Index i = 0; i < p.eps.size(); ++i) p.eps.data()[i] = rng.normal();
  return p;
}

/// Central-difference check of every parameter of `model` on the total loss.
/// `floor` keeps parameters whose true gradient is zero (e.g. attention key
/// biases, which cancel in the softmax) from dividing rounding noise by ~0.
inline GradCheckStats gradient_check(Model<double>& model, const MicroProblem& p, double beta, double step = 1e-4,
                                     double floor = 1e-6) {
  const ModelConfig& cfg = model.config();
  auto loss = [&] {
    const auto out = model.forward(p.frames, p.length, &p.eps);
    return total_loss(out, p.targets, beta, cfg.reconstruction_enabled).total;
  };
  ForwardCache<double> cache;
  const auto out = model.forward(p.frames, p.length, &p.eps, &cache);
  OutputGrads<double> og;
  total_loss(out, p.targets, beta, cfg.reconstruction_enabled, &og);
  ModelParams<double> grads(cfg);
  grads.set_zero(cfg);
  model.backward(cache, out, og, grads);

  std::vector<std::pair<std::string, nn::Mat<double>*>> params, analytic;
  model.params().visit(cfg, [&](const std::string& n, nn::Mat<double>& m) { params.emplace_back(n, &m); });
  grads.visit(cfg, [&](const std::string& n, nn::Mat<double>& m) { analytic.emplace_back(n, &m); });

  GradCheckStats s;
  for (std::size_t t = 0; t < params.size(); ++t) {
    nn::Mat<double>& w = *params[t].second;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + step;
      const double up = loss();
      w.data()[i] = orig - step;
      const double down = loss();
      w.data()[i] = orig;
      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[t].second->data()[i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), floor});
      ++s.params;
      if (rel < 1e-3) ++s.within_tight;
      if (rel > s.worst) {
        s.worst = rel;
        s.worst_name = params[t].first + "[" + std::to_string(i) + "]";
      }
    }
  }
  return s;
}

struct CausalityProbe {
  double max_past_change = 0.0;    // largest change at steps < t
  double min_future_change = 1e300;  // smallest change at step t (shows the perturbation landed)
};

/// Perturbs frame `t` of every sequence `trials` times with fresh uniform noise
/// and compares all deterministic outputs against the unperturbed run.
template <typename S>
CausalityProbe causality_probe(const Model<S>& model, const nn::FeatureMap<S>& frames, int length, int t, int trials,
                               std::uint64_t seed) {
  Rng rng(seed);
  const auto base = model.forward(frames, length, nullptr);
  const int sequences = frames.count / length;
  const Eigen::Index px = static_cast<Eigen::Index>(frames.height) * frames.width;
  CausalityProbe probe;
  for (int k = 0; k < trials; ++k) {
    nn::FeatureMap<S> f = frames;
    for (int s = 0; s < sequences; ++s) {
      const Eigen::Index col0 = static_cast<Eigen::Index>(s * length + t) * px;
      for (Eigen::Index c = 0; c < px; ++c)
        for (Eigen::Index ch = 0; ch < 3; ++ch) f.data(ch, col0 + c) = static_cast<S>(rng.uniform());
    }
    const auto out = model.forward(f, length, nullptr);
    for (int s = 0; s < sequences; ++s) {
      for (int step = 0; step <= t; ++step) {
        const Eigen::Index col = s * length + step;
        double change = (out.coords.col(col) - base.coords.col(col)).cwiseAbs().maxCoeff();
        change = std::max<double>(change, (out.mu.col(col) - base.mu.col(col)).cwiseAbs().maxCoeff());
        change = std::max<double>(change, (out.logvar.col(col) - base.logvar.col(col)).cwiseAbs().maxCoeff());
        if (out.recon.size() > 0) {
          const Eigen::Index gpx = static_cast<Eigen::Index>(out.gmp.width) * out.gmp.height;
          change = std::max<double>(
              change, (out.recon.middleCols(col * gpx, gpx) - base.recon.middleCols(col * gpx, gpx)).cwiseAbs().maxCoeff());
        }
        if (step < t) {
          probe.max_past_change = std::max(probe.max_past_change, change);
        } else {
          probe.min_future_change = std::min(probe.min_future_change, change);
        }
      }
    }
  }
  return probe;
}

}  // namespace strm::oracle
