#include <doctest.h>

#include <cstring>

#include "oracles.hpp"
#include "strm/model.hpp"

using namespace strm;

TEST_CASE("micro transformer gradients match central differences") {
  ModelConfig cfg = ModelConfig::micro();
  Model<double> model(cfg, 3);
  const auto p = oracle::micro_problem(cfg, 2, 11);
  const auto s = oracle::gradient_check(model, p, 0.7);
  MESSAGE("params " << s.params << " tight " << s.within_tight << " worst " << s.worst << " at " << s.worst_name);
  CHECK(s.worst < 1e-2);
  CHECK(static_cast<double>(s.within_tight) >= 0.99 * static_cast<double>(s.params));
}

TEST_CASE("micro rnn gradients match central differences") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.variant = Variant::kRnn;
  Model<double> model(cfg, 4);
  const auto p = oracle::micro_problem(cfg, 2, 12);
  const auto s = oracle::gradient_check(model, p, 0.7);
  MESSAGE("params " << s.params << " tight " << s.within_tight << " worst " << s.worst << " at " << s.worst_name);
  CHECK(s.worst < 1e-2);
  CHECK(static_cast<double>(s.within_tight) >= 0.99 * static_cast<double>(s.params));
}

namespace {

ModelConfig long_micro(Variant v) {
  ModelConfig cfg = ModelConfig::micro();
  cfg.variant = v;
  cfg.seq_len = 24;
  return cfg;
}

/// Hand-summed layer table for the desk transformer (64x64 in and out,
/// latent 64, d_model 64, 2 layers, ffn 128, decoder seed 2x2).
constexpr std::size_t kDeskTransformerParams =
    448 + 4640 + 9248 + 9248         // encoder convs 3-16-32-32-32
    + 32832                          // flatten 32*4*4 -> 64
    + 2 * (256 + 16640 + 8320 + 8256)  // two blocks: norms, q/k/v/o, ffn
    + 128                            // final norm
    + 2 * 4160                       // mu and logvar heads
    + 16640                          // latent -> 64 x 2 x 2 seed
    + 18464 + 4624 + 2320 + 1160 + 219  // transpose convs 64-32-16-16-8-3
    + 16640 + 16448 + 130;           // coordinate MLP 64-256-64-2

}  // namespace

TEST_CASE("parameter counts") {
  CHECK(nn::Conv2d<double>(3, 16, 2).weight.size() + nn::Conv2d<double>(3, 16, 2).bias.size() == 448);
  std::size_t mlp = 0;
  for (auto [in, out] : {std::pair{1000, 256}, {256, 64}, {64, 2}}) {
    nn::Linear<double> l(in, out);
    mlp += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  }
  CHECK(mlp == 1000 * 256 + 256 + 256 * 64 + 64 + 64 * 2 + 2);
  CHECK(mlp == 272834);

  const ModelConfig desk = ModelConfig::desk();
  CHECK(parameter_count(desk) == kDeskTransformerParams);
  for (Variant v : {Variant::kTransformer, Variant::kRnn}) {
    for (bool recon : {true, false}) {
      ModelConfig c = desk;
      c.variant = v;
      c.reconstruction_enabled = recon;
      ModelParams<float> p(c);
      CHECK(p.size(c) == parameter_count(c));
    }
  }
  MESSAGE("full-size transformer parameters: " << parameter_count(ModelConfig::full()));
}

TEST_CASE("encoder halves the image four times") {
  const ModelConfig c = ModelConfig::desk();
  CHECK(c.encoder_output() == Resolution{4, 4});
  ModelConfig bad = c;
  bad.gmp = {48, 64};
  CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
}

TEST_CASE("output shapes hold for any length up to the maximum") {
  for (Variant v : {Variant::kTransformer, Variant::kRnn}) {
    const ModelConfig cfg = long_micro(v);
    const Model<double> model(cfg, 1);
    for (int len : {1, 8, 24}) {
      ModelConfig c = cfg;
      c.seq_len = len;
      const auto p = oracle::micro_problem(c, 2, 5);
      const auto out = model.forward(p.frames, len, nullptr);
      CHECK(out.steps() == 2 * len);
      CHECK(out.coords.rows() == 2);
      CHECK(out.coords.cols() == 2 * len);
      CHECK(out.mu.rows() == cfg.latent_dim);
      CHECK(out.recon.cols() == 2 * len * cfg.gmp.width * cfg.gmp.height);
      CHECK(out.recon.minCoeff() >= 0.0);
      CHECK(out.recon.maxCoeff() <= 1.0);
      CHECK(out.coords.allFinite());
      CHECK(out.mu.allFinite());
      CHECK(out.logvar.allFinite());
    }
  }
}

TEST_CASE("deterministic mode is pure and sets z to mu") {
  const ModelConfig cfg = ModelConfig::micro();
  const Model<double> model(cfg, 2);
  const auto p = oracle::micro_problem(cfg, 3, 6);
  const auto a = model.forward(p.frames, cfg.seq_len, nullptr);
  const auto b = model.forward(p.frames, cfg.seq_len, nullptr);
  CHECK(a.z == a.mu);
  CHECK(a.coords == b.coords);
  CHECK(a.recon == b.recon);
  CHECK(Model<double>(cfg, 2).params().coord_mlp[0].weight == model.params().coord_mlp[0].weight);
}

TEST_CASE("reconstruction disabled drops the decoder") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.reconstruction_enabled = false;
  const Model<double> model(cfg, 2);
  const auto p = oracle::micro_problem(cfg, 1, 6);
  const auto out = model.forward(p.frames, cfg.seq_len, nullptr);
  CHECK(out.recon.size() == 0);
  CHECK(model.params().decoder.empty());
  CHECK(out.coords.cols() == cfg.seq_len);
}

TEST_CASE("training-mode latent follows the reparameterization") {
  const ModelConfig cfg = ModelConfig::micro();
  const Model<double> model(cfg, 3);
  const auto p = oracle::micro_problem(cfg, 1, 7);
  const auto det = model.forward(p.frames, cfg.seq_len, nullptr);
  Rng rng(4);
  const auto eps = sample_eps<double>(cfg.latent_dim, cfg.seq_len, rng);
  const auto out = model.forward(p.frames, cfg.seq_len, &eps);
  const nn::Mat<double> expected = det.mu.array() + (0.5 * det.logvar.array()).exp() * eps.array();
  CHECK((out.z - expected).cwiseAbs().maxCoeff() < 1e-12);

  Rng again(4);
  CHECK(sample_eps<double>(cfg.latent_dim, cfg.seq_len, again) == eps);

  // Monte-Carlo mean of z against mu.
  const int n = 10000;
  nn::Mat<double> sum = nn::Mat<double>::Zero(cfg.latent_dim, cfg.seq_len);
  Rng mc(9);
  for (int i = 0; i < n; ++i) {
    const auto e = sample_eps<double>(cfg.latent_dim, cfg.seq_len, mc);
    sum += model.forward(p.frames, cfg.seq_len, &e).z;
  }
  const nn::Mat<double> mean = sum / n;
  const nn::Mat<double> sigma = (0.5 * det.logvar.array()).exp();
  for (Eigen::Index i = 0; i < mean.size(); ++i) {
    CHECK(std::abs(mean.data()[i] - det.mu.data()[i]) <= 3.0 * sigma.data()[i] / std::sqrt(double(n)));
  }
}

TEST_CASE("causality for both variants") {
  for (Variant v : {Variant::kTransformer, Variant::kRnn}) {
    const ModelConfig cfg = long_micro(v);
    const Model<double> model(cfg, 8);
    const auto p = oracle::micro_problem(cfg, 2, 9);
    for (int t : {1, 11, 23}) {
      const auto probe = oracle::causality_probe(model, p.frames, cfg.seq_len, t, 10, 100 + t);
      CHECK(probe.max_past_change <= 1e-6);
      CHECK(probe.min_future_change > 0.0);
    }
  }
}

TEST_CASE("first step of a long sequence equals a length-1 run") {
  for (Variant v : {Variant::kTransformer, Variant::kRnn}) {
    const ModelConfig cfg = long_micro(v);
    const Model<double> model(cfg, 10);
    const auto p = oracle::micro_problem(cfg, 1, 11);
    const auto full = model.forward(p.frames, cfg.seq_len, nullptr);
    nn::FeatureMap<double> first = p.frames;
    first.count = 1;
    first.data = p.frames.data.leftCols(first.pixels());
    const auto one = model.forward(first, 1, nullptr);
    CHECK((one.coords.col(0) - full.coords.col(0)).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rnn hidden state stays bounded on zero input") {
  ModelConfig cfg = long_micro(Variant::kRnn);
  const Model<double> model(cfg, 12);
  const nn::Mat<double> zeros = nn::Mat<double>::Zero(cfg.d_model, 24);
  const nn::Mat<double> h = model.sequence_context(zeros, 24);
  for (Eigen::Index t = 0; t < 24; ++t) CHECK(h.col(t).norm() <= std::sqrt(double(cfg.rnn_hidden)));
}

TEST_CASE("checkpoint round trip") {
  const ModelConfig cfg = ModelConfig::micro();
  const Model<float> model(cfg, 13);
  const auto bytes = serialize_checkpoint(model, 42, "abc123");
  CheckpointInfo info;
  const Model<float> back = deserialize_checkpoint(bytes, &info);
  CHECK(info.training_step == 42);
  CHECK(info.config_hash == "abc123");
  CHECK(info.config == cfg);
  CHECK(serialize_checkpoint(back, 42, "abc123") == bytes);
  CHECK(std::memcmp(bytes.data(), "STRMCKPT", 8) == 0);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS(deserialize_checkpoint(bad));
  CHECK_THROWS(deserialize_checkpoint(std::span(bytes).first(bytes.size() - 4)));

  ModelConfig norecon = cfg;
  norecon.reconstruction_enabled = false;
  CheckpointInfo info2;
  deserialize_checkpoint(serialize_checkpoint(Model<float>(norecon, 1), 0), &info2);
  CHECK_FALSE(info2.config.reconstruction_enabled);
}

TEST_CASE("float and double models agree") {
  const ModelConfig cfg = ModelConfig::micro();
  const Model<double> d(cfg, 14);
  const Model<float> f = cast_model<float>(d);
  const auto p = oracle::micro_problem(cfg, 1, 15);
  nn::FeatureMap<float> ff;
  ff.data = p.frames.data.cast<float>();
  ff.height = p.frames.height;
  ff.width = p.frames.width;
  ff.count = p.frames.count;
  const auto a = d.forward(p.frames, cfg.seq_len, nullptr);
  const auto b = f.forward(ff, cfg.seq_len, nullptr);
  CHECK((a.coords.cast<float>() - b.coords).cwiseAbs().maxCoeff() < 1e-4f);
}
