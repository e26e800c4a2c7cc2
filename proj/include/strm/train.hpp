#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "strm/datapipe.hpp"
#include "strm/losses.hpp"
#include "strm/model.hpp"

namespace strm {

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 16;
  int max_epochs = 50;
  /// Beta horizon in optimizer steps; negative selects the steps in the first
  /// 10% of max_epochs.
  long long anneal_steps = -1;
  int patience = 5;
  double val_fraction = 0.1;
  std::uint64_t seed = 1;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;
  /// Hard cap on optimizer steps; 0 means unlimited.
  long long max_steps = 0;
  KlReduction kl_reduction = KlReduction::kSum;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

class NanLossError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A training sequence given as record indices into a Dataset.
using Window = std::vector<std::size_t>;

/// The dataset's own windows (seq_len consecutive records per start).
std::vector<Window> dataset_windows(const Dataset& ds);

/// Re-windows a dataset: `length` frames spaced `frame_step` records apart,
/// windows starting every `stride` records, never spanning a time gap.
std::vector<Window> resequence(const Dataset& ds, int length, int frame_step, int stride);

/// Normalized final coordinate of each window (for stratification).
std::vector<NormalizedCoordinate> window_final_coords(const Dataset& ds, std::span<const Window> windows);

template <typename S>
struct Batch {
  nn::FeatureMap<S> frames;
  LossTargets<S> targets;
  int sequences = 0;
  int length = 0;
};

/// Stacks windows into a batch; column order is sequence * length + t.
template <typename S>
Batch<S> make_batch(const Dataset& ds, std::span<const Window> windows, std::span<const std::size_t> pick);

/// Adam with bias correction, one moment pair per parameter tensor.
class Adam {
 public:
  Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

  void step(std::span<nn::Mat<float>* const> params, std::span<nn::Mat<float>* const> grads);
  long long steps() const { return t_; }

 private:
  double lr_, b1_, b2_, eps_;
  long long t_ = 0;
  std::vector<nn::Mat<float>> m_, v_;
};

/// Stops after `patience` consecutive epochs without strict improvement.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}

  /// Returns true when training should stop.
  bool update(double val_loss);
  bool improved() const { return improved_; }
  double best() const { return best_; }
  int stale_epochs() const { return stale_; }

 private:
  int patience_;
  double best_ = std::numeric_limits<double>::infinity();
  int stale_ = 0;
  bool improved_ = false;
};

struct EpochLog {
  int epoch = 0;
  long long step = 0;
  LossBreakdown train;
  LossBreakdown val;
  double wall_time_s = 0.0;
  bool improved = false;
};

struct TrainResult {
  Model<float> best;
  long long best_step = 0;
  int best_epoch = 0;
  double best_val_total = 0.0;
  double best_val_coord = 0.0;
  std::vector<EpochLog> epochs;
  std::string stop_reason;
};

struct TrainHooks {
  /// Called after every optimizer step with the step's training losses.
  std::function<void(long long step, const LossBreakdown&)> on_step;
  std::function<void(const EpochLog&)> on_epoch;
};

/// Steps per epoch for `n_train` sequences.
long long steps_per_epoch(std::size_t n_train, int batch_size);
/// Resolved beta horizon (see TrainConfig::anneal_steps).
long long resolve_anneal_steps(const TrainConfig& cfg, std::size_t n_train);

/// Validation loss of `model` at beta = 1 in deterministic mode.
LossBreakdown evaluate_loss(const Model<float>& model, const Dataset& ds, std::span<const Window> windows,
                            std::span<const std::size_t> pick, int batch_size, KlReduction reduction);

/// Splits off a stratified validation set, trains with Adam and early stopping,
/// and returns the best-validation model.
TrainResult train(const Dataset& ds, std::span<const Window> windows, const ModelConfig& model_cfg,
                  const TrainConfig& cfg, const TrainHooks& hooks = {});
TrainResult train(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& cfg,
                  const TrainHooks& hooks = {});

/// Trains on explicit train/validation sequence sets.
TrainResult train_split(const Dataset& ds, std::span<const Window> windows, std::span<const std::size_t> train_set,
                        std::span<const std::size_t> val_set, const ModelConfig& model_cfg, const TrainConfig& cfg,
                        const TrainHooks& hooks = {});

/// One JSON object per line: epoch, step, beta, train and validation losses.
/// Wall time goes to a separate timing log so the loss log is reproducible.
std::string epoch_log_line(const EpochLog& e, bool reconstruction_enabled);
std::string timing_log_line(const EpochLog& e);

// Hyperparameter search -------------------------------------------------------

struct SearchSpace {
  std::vector<double> learning_rates;
  std::vector<int> seq_lens;
  std::vector<int> frame_steps;  // time between frames, in multiples of the dataset interval
  std::vector<int> latent_dims;
  std::vector<int> d_models;
  std::vector<int> n_heads;
  std::vector<int> n_layers;

  bool empty() const;
};

struct SearchCandidate {
  int id = 0;
  ModelConfig model;
  TrainConfig train;
  int frame_step = 1;
};

struct SearchRow {
  int candidate = 0;
  std::uint64_t seed = 0;
  double val_coord = 0.0;
  double val_total = 0.0;
  int epochs = 0;
};

struct SearchSummary {
  SearchCandidate candidate;
  double mean_val_coord = 0.0;
  double std_val_coord = 0.0;
  int rank = 0;
};

struct SearchResult {
  std::vector<SearchRow> rows;
  std::vector<SearchSummary> ranking;  // best first
};

/// Cartesian product of the space over a base configuration. Empty lists keep
/// the base value. Throws std::invalid_argument on an empty space.
std::vector<SearchCandidate> expand_space(const SearchSpace& space, const ModelConfig& base_model,
                                          const TrainConfig& base_train);

/// Trains every candidate on a stratified `subset_fraction` of the sequences
/// with each seed and ranks by mean validation coord loss.
SearchResult grid_search(const std::vector<SearchCandidate>& candidates, const Dataset& ds,
                         std::span<const std::uint64_t> seeds, double subset_fraction = 0.1);

/// Ranks pre-computed rows (exposed for testing the ranking rule).
std::vector<SearchSummary> rank_candidates(const std::vector<SearchCandidate>& candidates,
                                           const std::vector<SearchRow>& rows);

void write_search_csv(const std::filesystem::path& rows_path, const std::filesystem::path& ranking_path,
                      const SearchResult& result, const std::string& config_hash = {});

}  // namespace strm
