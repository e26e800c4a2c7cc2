#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <vector>

#include "strm/nn/layers.hpp"

namespace strm::nn {

/// Fixed sinusoidal position code, d x length.
template <typename S>
Mat<S> sinusoidal_positions(int d, int length) {
  Mat<S> pe(d, length);
  for (int t = 0; t < length; ++t) {
    for (int i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / d);
      pe(i, t) = static_cast<S>(i % 2 == 0 ? std::sin(t * freq) : std::cos(t * freq));
    }
  }
  return pe;
}

// ---------------------------------------------------------------------------
// Multi-head self-attention with a strict causal mask. Columns of the input
// are tokens; consecutive runs of `length` columns form independent sequences.

template <typename S>
struct CausalSelfAttention {
  Linear<S> query, key, value, out;
  int heads = 1;

  CausalSelfAttention() = default;
  CausalSelfAttention(int d, int heads_) : query(d, d), key(d, d), value(d, d), out(d, d), heads(heads_) {}

  void init(Rng& rng) {
    query.init(rng);
    key.init(rng);
    value.init(rng);
    out.init(rng);
  }

  struct Cache {
    Mat<S> x, q, k, v, concat;
    std::vector<Mat<S>> probs;  // per (sequence, head): keys x queries
    int length = 0;
  };

  Mat<S> forward(const Mat<S>& x, int length, Cache* cache) const {
    const int d = static_cast<int>(x.rows());
    const int dh = d / heads;
    const int n_seq = static_cast<int>(x.cols()) / length;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    Mat<S> q = query.forward(x), k = key.forward(x), v = value.forward(x);
    Mat<S> concat(d, x.cols());
    std::vector<Mat<S>> probs;
    if (cache != nullptr) probs.reserve(static_cast<std::size_t>(n_seq) * heads);
    for (int b = 0; b < n_seq; ++b) {
      const int c0 = b * length;
      for (int h = 0; h < heads; ++h) {
        const auto qh = q.block(h * dh, c0, dh, length);
        const auto kh = k.block(h * dh, c0, dh, length);
        const auto vh = v.block(h * dh, c0, dh, length);
        Mat<S> p = (kh.transpose() * qh) * scale;  // keys x queries
        for (int i = 0; i < length; ++i) {
          const S mx = p.col(i).head(i + 1).maxCoeff();
          S sum = 0;
          for (int j = 0; j <= i; ++j) {
            p(j, i) = std::exp(p(j, i) - mx);
            sum += p(j, i);
          }
          for (int j = 0; j <= i; ++j) p(j, i) /= sum;
          for (int j = i + 1; j < length; ++j) p(j, i) = 0;
        }
        concat.block(h * dh, c0, dh, length).noalias() = vh * p;
        if (cache != nullptr) probs.push_back(std::move(p));
      }
    }
    Mat<S> y = out.forward(concat);
    if (cache != nullptr) {
      cache->x = x;
      cache->q = std::move(q);
      cache->k = std::move(k);
      cache->v = std::move(v);
      cache->concat = std::move(concat);
      cache->probs = std::move(probs);
      cache->length = length;
    }
    return y;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy, CausalSelfAttention& grad) const {
    const int d = static_cast<int>(c.x.rows());
    const int dh = d / heads;
    const int length = c.length;
    const int n_seq = static_cast<int>(c.x.cols()) / length;
    const S scale = S(1) / std::sqrt(static_cast<S>(dh));
    const Mat<S> dconcat = out.backward(c.concat, dy, grad.out);
    Mat<S> dq(d, c.x.cols()), dk(d, c.x.cols()), dv(d, c.x.cols());
    for (int b = 0; b < n_seq; ++b) {
      const int c0 = b * length;
      for (int h = 0; h < heads; ++h) {
        const Mat<S>& p = c.probs[static_cast<std::size_t>(b) * heads + h];
        const auto qh = c.q.block(h * dh, c0, dh, length);
        const auto kh = c.k.block(h * dh, c0, dh, length);
        const auto vh = c.v.block(h * dh, c0, dh, length);
        const auto doh = dconcat.block(h * dh, c0, dh, length);
        dv.block(h * dh, c0, dh, length).noalias() = doh * p.transpose();
        const Mat<S> dp = vh.transpose() * doh;
        // Column-wise softmax backward; masked entries have p = 0.
        Mat<S> ds = p.cwiseProduct(dp);
        const Eigen::Matrix<S, 1, Eigen::Dynamic> colsum = ds.colwise().sum();
        ds -= p * colsum.asDiagonal();
        ds *= scale;
        dq.block(h * dh, c0, dh, length).noalias() = kh * ds;
        dk.block(h * dh, c0, dh, length).noalias() = qh * ds.transpose();
      }
    }
    Mat<S> dx = query.backward(c.x, dq, grad.query);
    dx += key.backward(c.x, dk, grad.key);
    dx += value.backward(c.x, dv, grad.value);
    return dx;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    out.visit(prefix + ".out", f);
  }
};

// ---------------------------------------------------------------------------
// Pre-norm transformer block: x + attn(ln1(x)), then + ffn(ln2(.)).

template <typename S>
struct TransformerBlock {
  LayerNorm<S> ln1, ln2;
  CausalSelfAttention<S> attn;
  Linear<S> ff1, ff2;

  TransformerBlock() = default;
  TransformerBlock(int d, int heads, int ffn) : ln1(d), ln2(d), attn(d, heads), ff1(d, ffn), ff2(ffn, d) {}

  void init(Rng& rng) {
    attn.init(rng);
    ff1.init(rng);
    ff2.init(rng);
  }

  struct Cache {
    typename LayerNorm<S>::Cache ln1, ln2;
    typename CausalSelfAttention<S>::Cache attn;
    Mat<S> a2, pre, act;
  };

  Mat<S> forward(const Mat<S>& x, int length, Cache* cache) const {
    const Mat<S> a1 = ln1.forward(x, cache ? &cache->ln1 : nullptr);
    Mat<S> x1 = x + attn.forward(a1, length, cache ? &cache->attn : nullptr);
    Mat<S> a2 = ln2.forward(x1, cache ? &cache->ln2 : nullptr);
    Mat<S> pre = ff1.forward(a2);
    Mat<S> act = silu(pre);
    x1 += ff2.forward(act);
    if (cache != nullptr) {
      cache->a2 = std::move(a2);
      cache->pre = std::move(pre);
      cache->act = std::move(act);
    }
    return x1;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy, TransformerBlock& grad) const {
    const Mat<S> dact = ff2.backward(c.act, dy, grad.ff2);
    const Mat<S> dpre = silu_backward(c.pre, dact);
    const Mat<S> da2 = ff1.backward(c.a2, dpre, grad.ff1);
    Mat<S> dx1 = dy + ln2.backward(c.ln2, da2, grad.ln2);
    const Mat<S> da1 = attn.backward(c.attn, dx1, grad.attn);
    dx1 += ln1.backward(c.ln1, da1, grad.ln1);
    return dx1;
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    ln1.visit(prefix + ".ln1", f);
    attn.visit(prefix + ".attn", f);
    ln2.visit(prefix + ".ln2", f);
    ff1.visit(prefix + ".ff1", f);
    ff2.visit(prefix + ".ff2", f);
  }
};

// ---------------------------------------------------------------------------
// Gated recurrent cell (reset, update, candidate), unrolled left to right.
// Gate rows are ordered [reset; update; candidate].

template <typename S>
struct Gru {
  Linear<S> input;   // 3H x I
  Linear<S> hidden;  // 3H x H

  Gru() = default;
  Gru(int in, int h) : input(in, 3 * h), hidden(h, 3 * h) {}

  int hidden_size() const { return hidden.in_features(); }

  void init(Rng& rng) {
    input.init(rng);
    hidden.init(rng);
  }

  struct Cache {
    Mat<S> x;                            // I x (N*L), column b*L + t
    std::vector<Mat<S>> h_prev, r, z, n, hn;  // per step: H x N
    int length = 0;
  };

  /// x columns ordered b*length + t. Returns hidden states in the same order.
  Mat<S> forward(const Mat<S>& x, int length, Cache* cache) const {
    const int hs = hidden_size();
    const int n_seq = static_cast<int>(x.cols()) / length;
    const Mat<S> gx = input.forward(x);
    Mat<S> out(hs, x.cols());
    Mat<S> h = Mat<S>::Zero(hs, n_seq);
    if (cache != nullptr) {
      cache->x = x;
      cache->length = length;
      cache->h_prev.clear();
      cache->r.clear();
      cache->z.clear();
      cache->n.clear();
      cache->hn.clear();
    }
    Mat<S> gxt(3 * hs, n_seq);
    for (int t = 0; t < length; ++t) {
      for (int b = 0; b < n_seq; ++b) gxt.col(b) = gx.col(static_cast<Eigen::Index>(b) * length + t);
      const Mat<S> gh = hidden.forward(h);
      const Mat<S> r = logistic(gxt.topRows(hs) + gh.topRows(hs));
      const Mat<S> z = logistic(gxt.middleRows(hs, hs) + gh.middleRows(hs, hs));
      const Mat<S> hn = gh.bottomRows(hs);
      const Mat<S> n = (gxt.bottomRows(hs).array() + r.array() * hn.array()).tanh().matrix();
      Mat<S> h_next = ((S(1) - z.array()) * n.array() + z.array() * h.array()).matrix();
      if (cache != nullptr) {
        cache->h_prev.push_back(h);
        cache->r.push_back(r);
        cache->z.push_back(z);
        cache->n.push_back(n);
        cache->hn.push_back(hn);
      }
      h = std::move(h_next);
      for (int b = 0; b < n_seq; ++b) out.col(static_cast<Eigen::Index>(b) * length + t) = h.col(b);
    }
    return out;
  }

  Mat<S> backward(const Cache& c, const Mat<S>& dy, Gru& grad) const {
    const int hs = hidden_size();
    const int length = c.length;
    const int n_seq = static_cast<int>(c.x.cols()) / length;
    Mat<S> dgx(3 * hs, c.x.cols());
    Mat<S> dh = Mat<S>::Zero(hs, n_seq);
    Mat<S> dgh(3 * hs, n_seq);
    for (int t = length - 1; t >= 0; --t) {
      for (int b = 0; b < n_seq; ++b) dh.col(b) += dy.col(static_cast<Eigen::Index>(b) * length + t);
      const auto& r = c.r[t];
      const auto& z = c.z[t];
      const auto& n = c.n[t];
      const auto& hn = c.hn[t];
      const auto& hp = c.h_prev[t];
      const Mat<S> dn = (dh.array() * (S(1) - z.array())).matrix();
      const Mat<S> dz = (dh.array() * (hp.array() - n.array())).matrix();
      const Mat<S> dn_pre = (dn.array() * (S(1) - n.array().square())).matrix();
      const Mat<S> dr = (dn_pre.array() * hn.array()).matrix();
      const Mat<S> dr_pre = (dr.array() * r.array() * (S(1) - r.array())).matrix();
      const Mat<S> dz_pre = (dz.array() * z.array() * (S(1) - z.array())).matrix();
      dgh.topRows(hs) = dr_pre;
      dgh.middleRows(hs, hs) = dz_pre;
      dgh.bottomRows(hs) = (dn_pre.array() * r.array()).matrix();
      for (int b = 0; b < n_seq; ++b) {
        const Eigen::Index col = static_cast<Eigen::Index>(b) * length + t;
        dgx.col(col).head(hs) = dr_pre.col(b);
        dgx.col(col).segment(hs, hs) = dz_pre.col(b);
        dgx.col(col).tail(hs) = dn_pre.col(b);
      }
      Mat<S> dh_prev = (dh.array() * z.array()).matrix();
      dh_prev += hidden.backward(hp, dgh, grad.hidden);
      dh = std::move(dh_prev);
    }
    return input.backward(c.x, dgx, grad.input);
  }

  void visit(const std::string& prefix, const ParamVisitor<S>& f) {
    input.visit(prefix + ".input", f);
    hidden.visit(prefix + ".hidden", f);
  }
};

}  // namespace strm::nn
