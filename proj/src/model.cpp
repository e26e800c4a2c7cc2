#include "strm/model.hpp"

#include <algorithm>
#include <bit>
#include <stdexcept>

namespace strm {

using nn::Mat;

std::string to_string(Variant v) { return v == Variant::kRnn ? "rnn" : "transformer"; }

Variant variant_from_string(const std::string& s) {
  if (s == "rnn") return Variant::kRnn;
  if (s == "transformer") return Variant::kTransformer;
  throw std::invalid_argument("unknown variant '" + s + "' (expected rnn or transformer)");
}

ModelConfig ModelConfig::full() { return ModelConfig{}; }

ModelConfig ModelConfig::desk() {
  ModelConfig c;
  c.dec_channels = {64, 32, 16, 16, 8};
  c.latent_dim = 64;
  c.d_model = 64;
  c.n_heads = 4;
  c.n_layers = 2;
  c.ffn_mult = 2;
  c.rnn_hidden = 64;
  return c;
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.enc_channels = {4, 4, 4, 4};
  c.dec_channels = {8, 4, 4, 4, 4};
  c.latent_dim = 4;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 2;
  c.ffn_mult = 2;
  c.rnn_hidden = 8;
  c.coord_hidden = {16, 8};
  c.seq_len = 3;
  c.fpp = {8, 8};
  c.gmp = {8, 8};
  return c;
}

namespace {

/// Number of stride-2 doublings that take `seed` to `size`.
int doublings_for(int size, int& seed) {
  if (size % 32 == 0) {
    seed = size / 32;
    return 5;
  }
  if (size > 0 && size < 32 && std::has_single_bit(static_cast<unsigned>(size))) {
    seed = 1;
    return std::countr_zero(static_cast<unsigned>(size));
  }
  return -1;
}

}  // namespace

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("ModelConfig: " + m); };
  if (enc_channels.empty()) fail("enc_channels must not be empty");
  if (dec_channels.size() != 5) fail("dec_channels must list exactly five transposed-conv layers");
  if (enc_kernel != 3 || dec_kernel != 3) fail("only 3x3 kernels are supported");
  if (std::any_of(enc_channels.begin(), enc_channels.end(), [](int c) { return c <= 0; }) ||
      std::any_of(dec_channels.begin(), dec_channels.end(), [](int c) { return c <= 0; })) {
    fail("channel counts must be positive");
  }
  if (latent_dim <= 0) fail("latent_dim must be positive");
  if (d_model <= 0 || n_heads <= 0 || d_model % n_heads != 0) fail("d_model must be a positive multiple of n_heads");
  if (n_layers <= 0 || ffn_mult <= 0) fail("n_layers and ffn_mult must be positive");
  if (rnn_hidden <= 0) fail("rnn_hidden must be positive");
  if (coord_hidden.empty()) fail("coord_hidden must not be empty");
  if (seq_len <= 0) fail("seq_len must be positive");
  if (fpp.width <= 0 || fpp.height <= 0) fail("fpp resolution must be positive");
  int sh = 0, sw = 0;
  const int kh = doublings_for(gmp.height, sh), kw = doublings_for(gmp.width, sw);
  if (kh < 0 || kw < 0 || kh != kw) {
    fail("gmp resolution must be a multiple of 32 or a power of two below 32, equal doublings on both axes");
  }
}

Resolution ModelConfig::encoder_output() const {
  int h = fpp.height, w = fpp.width;
  for (std::size_t i = 0; i < enc_channels.size(); ++i) {
    h = (h - 1) / 2 + 1;
    w = (w - 1) / 2 + 1;
  }
  return {w, h};
}

Resolution ModelConfig::decoder_seed() const {
  int sh = 1, sw = 1;
  doublings_for(gmp.height, sh);
  doublings_for(gmp.width, sw);
  return {sw, sh};
}

std::vector<int> ModelConfig::decoder_strides() const {
  int seed = 1;
  const int k = doublings_for(gmp.height, seed);
  std::vector<int> strides(dec_channels.size(), 1);
  for (int i = 0; i < k && i < static_cast<int>(strides.size()); ++i) strides[i] = 2;
  return strides;
}

std::size_t parameter_count(const ModelConfig& c) {
  c.validate();
  auto linear = [](std::size_t in, std::size_t out) { return in * out + out; };
  auto conv = [](std::size_t in, std::size_t out) { return 9 * in * out + out; };
  std::size_t n = 0;
  std::size_t cin = 3;
  for (int ch : c.enc_channels) {
    n += conv(cin, ch);
    cin = ch;
  }
  const Resolution e = c.encoder_output();
  n += linear(cin * e.width * e.height, c.d_model);
  const std::size_t d = c.d_model;
  if (c.variant == Variant::kTransformer) {
    const std::size_t f = d * c.ffn_mult;
    const std::size_t block = 2 * (2 * d) + 4 * linear(d, d) + linear(d, f) + linear(f, d);
    n += block * c.n_layers + 2 * d;
  } else {
    const std::size_t h = c.rnn_hidden;
    n += linear(d, 3 * h) + linear(h, 3 * h);
  }
  n += 2 * linear(c.core_output(), c.latent_dim);
  if (c.reconstruction_enabled) {
    const Resolution s = c.decoder_seed();
    n += linear(c.latent_dim, static_cast<std::size_t>(c.dec_channels[0]) * s.width * s.height);
    for (std::size_t i = 0; i < c.dec_channels.size(); ++i) {
      const std::size_t out = i + 1 < c.dec_channels.size() ? c.dec_channels[i + 1] : 3;
      n += conv(c.dec_channels[i], out);
    }
  }
  std::size_t in = c.latent_dim;
  for (int h : c.coord_hidden) {
    n += linear(in, h);
    in = h;
  }
  n += linear(in, 2);
  return n;
}

// ---------------------------------------------------------------------------
// ModelParams

template <typename S>
ModelParams<S>::ModelParams(const ModelConfig& c) {
  c.validate();
  int cin = 3;
  for (int ch : c.enc_channels) {
    encoder.emplace_back(cin, ch, 2);
    cin = ch;
  }
  const Resolution e = c.encoder_output();
  enc_proj = nn::Linear<S>(cin * e.width * e.height, c.d_model);
  if (c.variant == Variant::kTransformer) {
    for (int l = 0; l < c.n_layers; ++l) blocks.emplace_back(c.d_model, c.n_heads, c.d_model * c.ffn_mult);
    final_norm = nn::LayerNorm<S>(c.d_model);
  } else {
    gru = nn::Gru<S>(c.d_model, c.rnn_hidden);
  }
  mu_head = nn::Linear<S>(c.core_output(), c.latent_dim);
  logvar_head = nn::Linear<S>(c.core_output(), c.latent_dim);
  if (c.reconstruction_enabled) {
    const Resolution s = c.decoder_seed();
    dec_seed = nn::Linear<S>(c.latent_dim, c.dec_channels[0] * s.width * s.height);
    const auto strides = c.decoder_strides();
    for (std::size_t i = 0; i < c.dec_channels.size(); ++i) {
      const int out = i + 1 < c.dec_channels.size() ? c.dec_channels[i + 1] : 3;
      decoder.emplace_back(c.dec_channels[i], out, strides[i]);
    }
  }
  int in = c.latent_dim;
  for (int h : c.coord_hidden) {
    coord_mlp.emplace_back(in, h);
    in = h;
  }
  coord_mlp.emplace_back(in, 2);
}

template <typename S>
void ModelParams<S>::init(const ModelConfig& c, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 10));
  for (auto& l : encoder) l.init(rng);
  enc_proj.init(rng);
  if (c.variant == Variant::kTransformer) {
    for (auto& b : blocks) b.init(rng);
  } else {
    gru.init(rng);
  }
  mu_head.init(rng);
  logvar_head.init(rng);
  if (c.reconstruction_enabled) {
    dec_seed.init(rng);
    for (auto& l : decoder) l.init(rng);
  }
  for (auto& l : coord_mlp) l.init(rng);
}

template <typename S>
void ModelParams<S>::visit(const ModelConfig& c, const nn::ParamVisitor<S>& f) {
  for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit("encoder." + std::to_string(i), f);
  enc_proj.visit("enc_proj", f);
  if (c.variant == Variant::kTransformer) {
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].visit("blocks." + std::to_string(i), f);
    final_norm.visit("final_norm", f);
  } else {
    gru.visit("gru", f);
  }
  mu_head.visit("mu_head", f);
  logvar_head.visit("logvar_head", f);
  if (c.reconstruction_enabled) {
    dec_seed.visit("dec_seed", f);
    for (std::size_t i = 0; i < decoder.size(); ++i) decoder[i].visit("decoder." + std::to_string(i), f);
  }
  for (std::size_t i = 0; i < coord_mlp.size(); ++i) coord_mlp[i].visit("coord_mlp." + std::to_string(i), f);
}

template <typename S>
std::vector<Mat<S>*> ModelParams<S>::tensors(const ModelConfig& c) {
  std::vector<Mat<S>*> out;
  visit(c, [&out](const std::string&, Mat<S>& m) { out.push_back(&m); });
  return out;
}

template <typename S>
std::size_t ModelParams<S>::size(const ModelConfig& c) {
  std::size_t n = 0;
  visit(c, [&n](const std::string&, Mat<S>& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

template <typename S>
void ModelParams<S>::set_zero(const ModelConfig& c) {
  visit(c, [](const std::string&, Mat<S>& m) { m.setZero(); });
}

// ---------------------------------------------------------------------------
// Image conversion

template <typename S>
nn::FeatureMap<S> images_to_map(std::span<const Image* const> images) {
  nn::FeatureMap<S> m;
  if (images.empty()) return m;
  m.width = images.front()->width;
  m.height = images.front()->height;
  m.count = static_cast<int>(images.size());
  const Eigen::Index px = static_cast<Eigen::Index>(m.width) * m.height;
  m.data.resize(3, px * m.count);
  constexpr S kInv255 = S(1) / S(255);
  for (int n = 0; n < m.count; ++n) {
    const Image& img = *images[static_cast<std::size_t>(n)];
    if (img.width != m.width || img.height != m.height) {
      throw std::invalid_argument("images_to_map: images differ in size");
    }
    S* dst = m.data.data() + 3 * px * n;
    for (Eigen::Index i = 0; i < 3 * px; ++i) dst[i] = static_cast<S>(img.data[static_cast<std::size_t>(i)]) * kInv255;
  }
  return m;
}

template <typename S>
Image map_to_image(const Mat<S>& data, int index, Resolution res) {
  Image img(res.width, res.height);
  const Eigen::Index px = static_cast<Eigen::Index>(res.width) * res.height;
  const S* src = data.data() + 3 * px * index;
  for (Eigen::Index i = 0; i < 3 * px; ++i) {
    const double v = std::clamp(static_cast<double>(src[i]), 0.0, 1.0);
    img.data[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::lround(v * 255.0));
  }
  return img;
}

template <typename S>
Mat<S> sample_eps(int latent, int n, Rng& rng) {
  Mat<S> e(latent, n);
  for (Eigen::Index i = 0; i < e.size(); ++i) e.data()[i] = static_cast<S>(rng.normal());
  return e;
}

// ---------------------------------------------------------------------------
// Model

template <typename S>
Model<S>::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)), params_(config_) {
  params_.init(config_, seed);
}

template <typename S>
Model<S>::Model(ModelConfig config, ModelParams<S> params) : config_(std::move(config)), params_(std::move(params)) {
  config_.validate();
}

template <typename S>
Mat<S> Model<S>::encode_frames(const nn::FeatureMap<S>& frames, ForwardCache<S>* cache) const {
  if (frames.height != config_.fpp.height || frames.width != config_.fpp.width || frames.channels() != 3) {
    throw std::invalid_argument("encode_frames: expected 3x" + std::to_string(config_.fpp.width) + "x" +
                                std::to_string(config_.fpp.height) + " frames");
  }
  if (cache != nullptr) {
    cache->enc.assign(params_.encoder.size(), {});
    cache->enc_pre.assign(params_.encoder.size(), {});
  }
  nn::FeatureMap<S> x = frames;
  for (std::size_t i = 0; i < params_.encoder.size(); ++i) {
    nn::FeatureMap<S> y = params_.encoder[i].forward(x, cache ? &cache->enc[i] : nullptr);
    x.height = y.height;
    x.width = y.width;
    x.data = nn::silu(y.data);
    if (cache != nullptr) cache->enc_pre[i] = std::move(y.data);
  }
  Mat<S> flat = x.flat();
  Mat<S> features = params_.enc_proj.forward(flat);
  if (cache != nullptr) cache->enc_flat = std::move(flat);
  return features;
}

template <typename S>
Mat<S> Model<S>::sequence_context(const Mat<S>& features, int length, ForwardCache<S>* cache) const {
  if (length <= 0 || features.cols() == 0) throw std::invalid_argument("sequence_context: empty sequence");
  if (features.cols() % length != 0) throw std::invalid_argument("sequence_context: columns not a multiple of length");
  if (config_.variant == Variant::kRnn) return params_.gru.forward(features, length, cache ? &cache->gru : nullptr);

  const Mat<S> pe = nn::sinusoidal_positions<S>(config_.d_model, length);
  Mat<S> h = features;
  for (Eigen::Index j = 0; j < h.cols(); ++j) h.col(j) += pe.col(j % length);
  if (cache != nullptr) cache->blocks.assign(params_.blocks.size(), {});
  for (std::size_t l = 0; l < params_.blocks.size(); ++l) {
    h = params_.blocks[l].forward(h, length, cache ? &cache->blocks[l] : nullptr);
  }
  return params_.final_norm.forward(h, cache ? &cache->final_norm : nullptr);
}

template <typename S>
Mat<S> Model<S>::decode_gmp(const Mat<S>& z, ForwardCache<S>* cache) const {
  if (!config_.reconstruction_enabled) throw std::logic_error("decode_gmp: reconstruction disabled in this model");
  const Resolution seed = config_.decoder_seed();
  Mat<S> seed_pre = params_.dec_seed.forward(z);
  nn::FeatureMap<S> x = nn::FeatureMap<S>::from_flat(nn::silu(seed_pre).eval(), config_.dec_channels[0], seed.height, seed.width);
  if (cache != nullptr) {
    cache->seed_pre = std::move(seed_pre);
    cache->dec.assign(params_.decoder.size(), {});
    cache->dec_in.assign(params_.decoder.size(), {});
    cache->dec_pre.assign(params_.decoder.size(), {});
  }
  Mat<S> out;
  for (std::size_t i = 0; i < params_.decoder.size(); ++i) {
    nn::FeatureMap<S> y = params_.decoder[i].forward(x, cache ? &cache->dec[i] : nullptr);
    const bool last = i + 1 == params_.decoder.size();
    if (cache != nullptr) cache->dec_in[i] = std::move(x);
    if (last) {
      out = nn::logistic(y.data);
    } else {
      x.height = y.height;
      x.width = y.width;
      x.count = y.count;
      x.data = nn::silu(y.data);
      if (cache != nullptr) cache->dec_pre[i] = std::move(y.data);
    }
  }
  return out;
}

template <typename S>
Mat<S> Model<S>::regress_coord(const Mat<S>& z, ForwardCache<S>* cache) const {
  if (cache != nullptr) {
    cache->mlp_in.assign(params_.coord_mlp.size(), {});
    cache->mlp_pre.assign(params_.coord_mlp.size(), {});
  }
  Mat<S> a = z;
  for (std::size_t i = 0; i < params_.coord_mlp.size(); ++i) {
    Mat<S> pre = params_.coord_mlp[i].forward(a);
    if (cache != nullptr) cache->mlp_in[i] = a;
    if (i + 1 == params_.coord_mlp.size()) return pre;
    a = nn::silu(pre);
    if (cache != nullptr) cache->mlp_pre[i] = std::move(pre);
  }
  return a;
}

template <typename S>
ForwardResult<S> Model<S>::forward(const nn::FeatureMap<S>& frames, int length, const Mat<S>* eps,
                                   ForwardCache<S>* cache) const {
  if (length <= 0 || frames.count == 0) throw std::invalid_argument("forward: empty sequence");
  if (frames.count % length != 0) throw std::invalid_argument("forward: frame count not a multiple of length");
  ForwardResult<S> r;
  r.sequences = frames.count / length;
  r.length = length;
  r.gmp = config_.gmp;
  const Mat<S> features = encode_frames(frames, cache);
  Mat<S> hidden = sequence_context(features, length, cache);
  r.mu = params_.mu_head.forward(hidden);
  r.logvar = params_.logvar_head.forward(hidden);
  if (eps != nullptr) {
    if (eps->rows() != r.mu.rows() || eps->cols() != r.mu.cols()) throw std::invalid_argument("forward: eps shape mismatch");
    r.z = r.mu + ((r.logvar.array() * S(0.5)).exp() * eps->array()).matrix();
  } else {
    r.z = r.mu;
  }
  if (cache != nullptr) {
    cache->hidden = std::move(hidden);
    cache->sampled = eps != nullptr;
    if (eps != nullptr) cache->eps = *eps;
  }
  if (config_.reconstruction_enabled) r.recon = decode_gmp(r.z, cache);
  r.coords = regress_coord(r.z, cache);
  return r;
}

template <typename S>
void Model<S>::backward(const ForwardCache<S>& c, const ForwardResult<S>& out, const OutputGrads<S>& d,
                        ModelParams<S>& g) const {
  const ModelParams<S>& p = params_;
  Mat<S> dz = Mat<S>::Zero(out.z.rows(), out.z.cols());

  if (config_.reconstruction_enabled && d.recon.size() > 0) {
    Mat<S> dpre = d.recon.cwiseProduct(out.recon.unaryExpr([](S r) { return r * (S(1) - r); }));
    for (std::size_t i = p.decoder.size(); i-- > 0;) {
      Mat<S> dx = p.decoder[i].backward(c.dec[i], c.dec_in[i].data, dpre, g.decoder[i]);
      if (i > 0) {
        dpre = nn::silu_backward(c.dec_pre[i - 1], dx);
      } else {
        const Eigen::Map<const Mat<S>> dseed(dx.data(), c.seed_pre.rows(), c.seed_pre.cols());
        const Mat<S> dseed_pre = nn::silu_backward(c.seed_pre, Mat<S>(dseed));
        dz += p.dec_seed.backward(out.z, dseed_pre, g.dec_seed);
      }
    }
  }

  if (d.coords.size() > 0) {
    Mat<S> dpre = d.coords;
    for (std::size_t i = p.coord_mlp.size(); i-- > 0;) {
      Mat<S> dx = p.coord_mlp[i].backward(c.mlp_in[i], dpre, g.coord_mlp[i]);
      if (i > 0) {
        dpre = nn::silu_backward(c.mlp_pre[i - 1], dx);
      } else {
        dz += dx;
      }
    }
  }

  Mat<S> dmu = dz;
  if (d.mu.size() > 0) dmu += d.mu;
  Mat<S> dlogvar = Mat<S>::Zero(dz.rows(), dz.cols());
  if (c.sampled) {
    dlogvar = (dz.array() * c.eps.array() * (out.logvar.array() * S(0.5)).exp() * S(0.5)).matrix();
  }
  if (d.logvar.size() > 0) dlogvar += d.logvar;

  Mat<S> dhidden = p.mu_head.backward(c.hidden, dmu, g.mu_head);
  dhidden += p.logvar_head.backward(c.hidden, dlogvar, g.logvar_head);

  Mat<S> dfeatures;
  if (config_.variant == Variant::kRnn) {
    dfeatures = p.gru.backward(c.gru, dhidden, g.gru);
  } else {
    Mat<S> dh = p.final_norm.backward(c.final_norm, dhidden, g.final_norm);
    for (std::size_t l = p.blocks.size(); l-- > 0;) dh = p.blocks[l].backward(c.blocks[l], dh, g.blocks[l]);
    dfeatures = std::move(dh);
  }

  const Mat<S> dflat = p.enc_proj.backward(c.enc_flat, dfeatures, g.enc_proj);
  const Eigen::Index last_c = p.encoder.back().out_channels();
  Mat<S> dact = Eigen::Map<const Mat<S>>(dflat.data(), last_c, dflat.size() / last_c);
  for (std::size_t i = p.encoder.size(); i-- > 0;) {
    const Mat<S> dpre = nn::silu_backward(c.enc_pre[i], dact);
    dact = p.encoder[i].backward(c.enc[i], dpre, g.encoder[i], i > 0);
  }
}

template <typename To, typename From>
Model<To> cast_model(const Model<From>& m) {
  ModelParams<To> params(m.config());
  auto dst = params.tensors(m.config());
  auto src = const_cast<ModelParams<From>&>(m.params()).tensors(m.config());
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = src[i]->template cast<To>();
  return Model<To>(m.config(), std::move(params));
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template class Model<float>;
template class Model<double>;
template nn::FeatureMap<float> images_to_map<float>(std::span<const Image* const>);
template nn::FeatureMap<double> images_to_map<double>(std::span<const Image* const>);
template Image map_to_image<float>(const Mat<float>&, int, Resolution);
template Image map_to_image<double>(const Mat<double>&, int, Resolution);
template Mat<float> sample_eps<float>(int, int, Rng&);
template Mat<double> sample_eps<double>(int, int, Rng&);
template Model<float> cast_model<float, double>(const Model<double>&);
template Model<double> cast_model<double, float>(const Model<float>&);
template Model<float> cast_model<float, float>(const Model<float>&);
template Model<double> cast_model<double, double>(const Model<double>&);

}  // namespace strm
