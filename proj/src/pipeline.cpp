#include "strm/pipeline.hpp"

#include <atomic>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

namespace strm {

RunArtifacts train_and_save(const Dataset& ds, const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                            std::uint64_t seed, const std::filesystem::path& dir, const std::string& config_hash) {
  std::filesystem::create_directories(dir);
  RunArtifacts a;
  a.seed = seed;
  a.variant = model_cfg.variant;
  a.reconstruction_enabled = model_cfg.reconstruction_enabled;
  a.checkpoint = dir / "model.ckpt";
  a.log = dir / "train_log.jsonl";
  a.timing = dir / "timing.jsonl";

  TrainConfig tc = train_cfg;
  tc.seed = seed;
  std::ofstream log(a.log), timing(a.timing);
  if (!log || !timing) throw std::runtime_error("cannot write logs under " + dir.string());
  log << "{\"config_hash\":\"" << config_hash << "\",\"seed\":" << seed << ",\"variant\":\""
      << to_string(model_cfg.variant) << "\",\"reconstruction_enabled\":"
      << (model_cfg.reconstruction_enabled ? "true" : "false") << "}\n";
  timing << "{\"config_hash\":\"" << config_hash << "\"}\n";
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochLog& e) {
    log << epoch_log_line(e, model_cfg.reconstruction_enabled) << '\n' << std::flush;
    timing << timing_log_line(e) << '\n' << std::flush;
  };
  a.result = train(ds, model_cfg, tc, hooks);
  save_checkpoint(a.checkpoint, a.result.best, static_cast<std::uint64_t>(a.result.best_step), config_hash);
  return a;
}

void parallel_for(std::size_t count, int jobs, const std::function<void(std::size_t)>& task) {
  const std::size_t workers = std::min<std::size_t>(count, static_cast<std::size_t>(std::max(1, jobs)));
  if (workers <= 1) {
    for (std::size_t i = 0; i < count; ++i) task(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < count; i = next++) {
        try {
          task(i);
        } catch (...) {
          std::lock_guard lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

TestSession make_eval_session(const World& world, const RunConfig& cfg) {
  return make_test_session(world, cfg.noise, cfg.dataset, cfg.eval.test_duration_s, cfg.eval.test_seed);
}

StreamOptions stream_options(const RunConfig& cfg, const ModelConfig& model) {
  StreamOptions o;
  o.capacity = static_cast<std::size_t>(model.seq_len);
  o.frame_interval_s = cfg.dataset.sequences.frame_interval_s;
  o.tolerance_s = cfg.eval.gap_tolerance_s;
  o.min_frames = static_cast<std::size_t>(cfg.eval.min_frames);
  o.pairing_window_s = cfg.eval.pairing_window_s;
  return o;
}

double eval_max_threshold(const RunConfig& cfg) {
  return cfg.eval.max_threshold_m > 0.0 ? cfg.eval.max_threshold_m : default_max_threshold(cfg.world.bounds);
}

Throughput throughput(const LocalizationTrace& trace, std::size_t capacity, std::size_t min_frames) {
  Throughput t;
  double total_ms = 0.0, frames = 0.0;
  for (std::size_t i = 0; i < trace.entries.size(); ++i) {
    total_ms += trace.entries[i].inference_ms;
    frames += static_cast<double>(std::min(capacity, min_frames + i));
  }
  if (trace.entries.empty() || total_ms <= 0.0) return t;
  t.mean_inference_ms = total_ms / static_cast<double>(trace.entries.size());
  t.predictions_per_s = 1000.0 / t.mean_inference_ms;
  t.encoder_fps = frames / (total_ms / 1000.0);
  return t;
}

LocalizationTrace gps_baseline(const World& world, const TestSession& session, const SensorNoiseSpec& noise,
                               std::uint64_t seed) {
  return simulate_gps(world, session.poses, noise, mix_seed(seed, 302));
}

LocalizationTrace centroid_baseline(const TestSession& session, const GeoBounds& bounds, const StreamOptions& options) {
  double su = 0.0, sv = 0.0;
  for (const TruthFix& f : session.truth) {
    const NormalizedCoordinate n = normalize(f.coord, bounds);
    su += n.u;
    sv += n.v;
  }
  const double count = std::max<double>(1.0, static_cast<double>(session.truth.size()));
  const NormalizedCoordinate centroid{su / count, sv / count};
  return run_stream([centroid](const std::deque<BufferedFrame>&) { return centroid; }, session.frames, session.truth,
                    bounds, options);
}

}  // namespace strm
