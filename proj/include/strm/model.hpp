#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "strm/geo.hpp"
#include "strm/image.hpp"
#include "strm/nn/layers.hpp"
#include "strm/nn/sequence.hpp"
#include "strm/worldsim.hpp"

namespace strm {

enum class Variant { kRnn, kTransformer };

std::string to_string(Variant v);
Variant variant_from_string(const std::string& s);

struct ModelConfig {
  Variant variant = Variant::kTransformer;
  std::vector<int> enc_channels{16, 32, 32, 32};
  int enc_kernel = 3;
  std::vector<int> dec_channels{512, 256, 128, 64, 32};
  int dec_kernel = 3;
  int latent_dim = 1000;
  int d_model = 256;
  int n_heads = 16;
  int n_layers = 8;
  int ffn_mult = 4;
  int rnn_hidden = 256;
  std::vector<int> coord_hidden{256, 64};
  int seq_len = 24;
  Resolution fpp{64, 64};
  Resolution gmp{64, 64};
  bool reconstruction_enabled = true;

  /// Full-size reference configuration (the defaults above).
  static ModelConfig full();
  /// CPU-trainable preset: same encoder, narrower decoder and core.
  static ModelConfig desk();
  /// 8x8 images, latent 4, d_model 16; used for gradient checks.
  static ModelConfig micro();

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  /// Spatial size after the encoder's stride-2 convolutions.
  Resolution encoder_output() const;
  /// Decoder seed map size and per-layer strides (stride 2 until the GMP size is reached).
  Resolution decoder_seed() const;
  std::vector<int> decoder_strides() const;
  /// Width of the features fed to the sequence core.
  int core_input() const { return d_model; }
  int core_output() const { return variant == Variant::kTransformer ? d_model : rnn_hidden; }

  bool operator==(const ModelConfig&) const = default;
};

/// Exact number of trainable scalars for `config`.
std::size_t parameter_count(const ModelConfig& config);

template <typename S>
struct ModelParams {
  std::vector<nn::Conv2d<S>> encoder;
  nn::Linear<S> enc_proj;
  std::vector<nn::TransformerBlock<S>> blocks;
  nn::LayerNorm<S> final_norm;
  nn::Gru<S> gru;
  nn::Linear<S> mu_head, logvar_head;
  nn::Linear<S> dec_seed;
  std::vector<nn::ConvTranspose2d<S>> decoder;
  std::vector<nn::Linear<S>> coord_mlp;

  ModelParams() = default;
  explicit ModelParams(const ModelConfig& cfg);

  void init(const ModelConfig& cfg, std::uint64_t seed);

  /// Fixed, documented parameter order (also the checkpoint order).
  void visit(const ModelConfig& cfg, const nn::ParamVisitor<S>& f);
  std::vector<nn::Mat<S>*> tensors(const ModelConfig& cfg);
  std::size_t size(const ModelConfig& cfg);
  void set_zero(const ModelConfig& cfg);
};

/// Per-timestep outputs; columns are ordered sequence * length + t.
template <typename S>
struct ForwardResult {
  nn::Mat<S> recon;   // 3 x (N*Hg*Wg) in [0,1]; empty when reconstruction is disabled
  nn::Mat<S> mu;      // latent x N
  nn::Mat<S> logvar;  // latent x N
  nn::Mat<S> z;       // latent x N
  nn::Mat<S> coords;  // 2 x N, rows (u, v)
  int sequences = 0;
  int length = 0;
  Resolution gmp;

  int steps() const { return sequences * length; }
};

/// Activations retained for the backward pass.
template <typename S>
struct ForwardCache {
  std::vector<typename nn::Conv2d<S>::Cache> enc;
  std::vector<nn::Mat<S>> enc_pre;
  nn::Mat<S> enc_flat;
  nn::Mat<S> features;
  std::vector<typename nn::TransformerBlock<S>::Cache> blocks;
  typename nn::LayerNorm<S>::Cache final_norm;
  typename nn::Gru<S>::Cache gru;
  nn::Mat<S> hidden;
  nn::Mat<S> eps;
  bool sampled = false;
  nn::Mat<S> seed_pre;
  std::vector<nn::FeatureMap<S>> dec_in;
  std::vector<typename nn::ConvTranspose2d<S>::Cache> dec;
  std::vector<nn::Mat<S>> dec_pre;
  std::vector<nn::Mat<S>> mlp_in;
  std::vector<nn::Mat<S>> mlp_pre;
};

/// Gradients of the loss with respect to the model outputs. `mu`/`logvar`
/// carry only the direct (KL) terms; the reparameterization path is handled
/// inside Model::backward.
template <typename S>
struct OutputGrads {
  nn::Mat<S> recon;
  nn::Mat<S> mu;
  nn::Mat<S> logvar;
  nn::Mat<S> coords;
};

/// Converts images to a 3 x (N*H*W) map with values in [0, 1].
template <typename S>
nn::FeatureMap<S> images_to_map(std::span<const Image* const> images);

/// Inverse of images_to_map for one image (values clamped to [0, 1]).
template <typename S>
Image map_to_image(const nn::Mat<S>& data, int index, Resolution res);

template <typename S>
class Model {
 public:
  Model() = default;
  Model(ModelConfig config, std::uint64_t seed);
  Model(ModelConfig config, ModelParams<S> params);

  const ModelConfig& config() const { return config_; }
  ModelParams<S>& params() { return params_; }
  const ModelParams<S>& params() const { return params_; }

  /// Encoder: frames (3 x N*H*W) -> features (d_model x N).
  nn::Mat<S> encode_frames(const nn::FeatureMap<S>& frames, ForwardCache<S>* cache = nullptr) const;
  /// Causal sequence core over columns ordered sequence * length + t.
  nn::Mat<S> sequence_context(const nn::Mat<S>& features, int length, ForwardCache<S>* cache = nullptr) const;
  /// Decoder: z (latent x N) -> 3 x (N*Hg*Wg) in [0, 1].
  nn::Mat<S> decode_gmp(const nn::Mat<S>& z, ForwardCache<S>* cache = nullptr) const;
  /// Coordinate MLP: z -> 2 x N, unclamped.
  nn::Mat<S> regress_coord(const nn::Mat<S>& z, ForwardCache<S>* cache = nullptr) const;

  /// Full composition. `eps` (latent x N) selects training mode
  /// (z = mu + exp(logvar/2) * eps); nullptr gives z = mu.
  ForwardResult<S> forward(const nn::FeatureMap<S>& frames, int length, const nn::Mat<S>* eps,
                           ForwardCache<S>* cache = nullptr) const;

  /// Accumulates parameter gradients into `grads`.
  void backward(const ForwardCache<S>& cache, const ForwardResult<S>& out, const OutputGrads<S>& d,
                ModelParams<S>& grads) const;

 private:
  ModelConfig config_;
  ModelParams<S> params_;
};

/// Draws a latent x N standard-normal matrix.
template <typename S>
nn::Mat<S> sample_eps(int latent, int n, Rng& rng);

/// Float copy of a double model or vice versa (same parameter order).
template <typename To, typename From>
Model<To> cast_model(const Model<From>& m);

// Checkpoint -----------------------------------------------------------------

inline constexpr char kCheckpointMagic[8] = {'S', 'T', 'R', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
  ModelConfig config;
  std::uint64_t training_step = 0;
  std::string config_hash;
};

/// Layout: magic, version u32, config JSON length u32 + bytes, parameter count
/// u64, training step u64, then parameter_count little-endian f32 values in
/// ModelParams::visit order (each tensor column-major).
std::vector<std::uint8_t> serialize_checkpoint(const Model<float>& model, std::uint64_t step,
                                               const std::string& config_hash = {});
Model<float> deserialize_checkpoint(std::span<const std::uint8_t> bytes, CheckpointInfo* info = nullptr);
void save_checkpoint(const std::filesystem::path& path, const Model<float>& model, std::uint64_t step,
                     const std::string& config_hash = {});
Model<float> load_checkpoint(const std::filesystem::path& path, CheckpointInfo* info = nullptr);

extern template struct ModelParams<float>;
extern template struct ModelParams<double>;
extern template class Model<float>;
extern template class Model<double>;

}  // namespace strm
