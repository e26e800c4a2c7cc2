#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "strm/config.hpp"
#include "strm/eval.hpp"
#include "strm/infer.hpp"
#include "strm/train.hpp"

namespace strm {

/// One trained model plus where its artifacts went.
struct RunArtifacts {
  std::uint64_t seed = 0;
  Variant variant = Variant::kTransformer;
  bool reconstruction_enabled = true;
  std::filesystem::path checkpoint;
  std::filesystem::path log;
  std::filesystem::path timing;
  TrainResult result;
};

/// Trains `model_cfg` with `seed`, writing checkpoint, loss log and timing log
/// under `dir`. Every artifact carries `config_hash`.
RunArtifacts train_and_save(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            std::uint64_t seed, const std::filesystem::path& dir, const std::string& config_hash);

/// Runs `jobs` invocations of `task(i)` for i in [0, count) on up to `jobs` threads.
void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& task);

/// Held-out session for `cfg` (fresh trajectory seed, same world).
TestSession make_eval_session(const World& world, const RunConfig& cfg);

StreamOptions stream_options(const RunConfig& cfg, const ModelConfig& model);

/// LPC threshold range in force for `cfg`.
double eval_max_threshold(const RunConfig& cfg);

struct Throughput {
  double predictions_per_s = 0.0;
  double mean_inference_ms = 0.0;
  double encoder_fps = 0.0;
};

/// Derived from a trace's per-entry inference times and the buffer fill.
Throughput throughput(const LocalizationTrace& trace, std::size_t capacity, std::size_t min_frames);

/// Phone-GPS style baseline on the session's poses.
LocalizationTrace gps_baseline(const World& world, const TestSession& session, const SensorNoiseSpec& noise,
                               std::uint64_t seed);

/// Always predicts the centroid of the session's truth fixes, on the same
/// admission schedule and pairing as a model stream.
LocalizationTrace centroid_baseline(const TestSession& session, const GeoBounds& bounds, const StreamOptions& options);

}  // namespace strm
