#include "strm/infer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace strm {

namespace {
constexpr double kTimeEps = 1e-9;
}

FrameBuffer::FrameBuffer(std::size_t capacity, double frame_interval_s, double tolerance_s)
    : capacity_(capacity), interval_(frame_interval_s), tolerance_(tolerance_s) {
  if (capacity == 0) throw std::invalid_argument("FrameBuffer: capacity must be positive");
  if (!(frame_interval_s > 0.0)) throw std::invalid_argument("FrameBuffer: frame interval must be positive");
  if (!(tolerance_s >= 0.0 && tolerance_s < frame_interval_s)) {
    throw std::invalid_argument("FrameBuffer: tolerance must lie in [0, interval)");
  }
}

bool FrameBuffer::push(double t_s, Image image) {
  if (!std::isfinite(t_s)) throw std::invalid_argument("push_frame: timestamp is not finite");
  if (last_seen_ && t_s <= *last_seen_) {
    throw std::invalid_argument("push_frame: timestamp " + std::to_string(t_s) + " does not follow " +
                                std::to_string(*last_seen_));
  }
  last_seen_ = t_s;
  if (last_admitted_) {
    const bool spaced = t_s - *last_admitted_ >= interval_ - tolerance_ - kTimeEps;
    const bool on_slot = t_s >= next_slot_ - tolerance_ - kTimeEps;
    if (!spaced || !on_slot) return false;
    // Late frames (after a gap in the feed) restart the slot grid.
    next_slot_ = t_s > next_slot_ + tolerance_ ? t_s + interval_ : next_slot_ + interval_;
  } else {
    next_slot_ = t_s + interval_;
  }
  last_admitted_ = t_s;
  entries_.push_back({t_s, std::move(image)});
  if (entries_.size() > capacity_) entries_.pop_front();
  return true;
}

void FrameBuffer::clear() {
  entries_.clear();
  last_seen_.reset();
  last_admitted_.reset();
  next_slot_ = 0.0;
}

namespace {

NormalizedCoordinate model_localize(const Model<float>& model, const std::deque<BufferedFrame>& frames) {
  std::vector<const Image*> images;
  images.reserve(frames.size());
  for (const BufferedFrame& f : frames) images.push_back(&f.image);
  const nn::FeatureMap<float> map = images_to_map<float>(images);
  const ForwardResult<float> out = model.forward(map, static_cast<int>(frames.size()), nullptr);
  const Eigen::Index last = out.coords.cols() - 1;
  return {static_cast<double>(out.coords(0, last)), static_cast<double>(out.coords(1, last))};
}

}  // namespace

std::optional<Prediction> predict(const FrameBuffer& buffer, const Model<float>& model, const GeoBounds& bounds,
                                  std::size_t min_frames) {
  if (buffer.size() < std::max<std::size_t>(min_frames, 1)) return std::nullopt;
  Prediction p;
  p.normalized = model_localize(model, buffer.entries());
  p.coord = denormalize(p.normalized, bounds);
  p.warm_up = !buffer.full();
  return p;
}

std::optional<std::size_t> nearest_fix(std::span<const TruthFix> truth, double t_s, double window_s) {
  const auto it = std::lower_bound(truth.begin(), truth.end(), t_s,
                                   [](const TruthFix& f, double t) { return f.t_s < t; });
  std::optional<std::size_t> best;
  double best_dt = window_s + kTimeEps;
  // Ties go to the earlier fix.
  if (it != truth.begin()) {
    const auto prev = std::prev(it);
    if (t_s - prev->t_s <= best_dt) {
      best = static_cast<std::size_t>(prev - truth.begin());
      best_dt = t_s - prev->t_s;
    }
  }
  if (it != truth.end() && it->t_s - t_s < best_dt) best = static_cast<std::size_t>(it - truth.begin());
  return best;
}

LocalizationTrace run_stream(const Localizer& localizer, std::span<const BufferedFrame> frames,
                             std::span<const TruthFix> truth, const GeoBounds& bounds, const StreamOptions& options) {
  FrameBuffer buffer(options.capacity, options.frame_interval_s, options.tolerance_s);
  LocalizationTrace trace;
  for (const BufferedFrame& f : frames) {
    if (!buffer.push(f.t_s, f.image)) continue;
    if (buffer.size() < std::max<std::size_t>(options.min_frames, 1)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    const NormalizedCoordinate n = localizer(buffer.entries());
    const auto t1 = std::chrono::steady_clock::now();
    TraceEntry e;
    e.t_s = f.t_s;
    e.pred = denormalize(n, bounds);
    e.warm_up = !buffer.full();
    e.inference_ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
    if (const auto k = nearest_fix(truth, f.t_s, options.pairing_window_s)) {
      e.truth = truth[*k].coord;
      e.deviation_m = deviation_meters(e.pred, e.truth);
      e.paired = true;
    } else {
      e.paired = false;
    }
    trace.entries.push_back(e);
  }
  return trace;
}

LocalizationTrace run_stream(const Model<float>& model, std::span<const BufferedFrame> frames,
                             std::span<const TruthFix> truth, const GeoBounds& bounds, const StreamOptions& options) {
  return run_stream([&model](const std::deque<BufferedFrame>& buf) { return model_localize(model, buf); }, frames,
                    truth, bounds, options);
}

TestSession make_test_session(const World& world, const SensorNoiseSpec& noise, const DatasetParams& params,
                              double duration_s, std::uint64_t seed) {
  TestSession s;
  s.poses = sample_trajectory(world, params.speed_mps, duration_s, mix_seed(seed, 300));
  const DistractorField distractors(world, mix_seed(params.seed, 100));
  s.frames.reserve(s.poses.size());
  for (const AgentPose& p : s.poses) {
    const auto movers = distractors.at(p.t_s);
    s.frames.push_back({p.t_s, render_fpp(world, p, movers, params.fpp)});
  }
  for (const RtkFix& f : simulate_rtk(world, s.poses, noise, mix_seed(seed, 301))) {
    if (f.rtk_accuracy_m <= params.max_accuracy_m) s.truth.push_back({f.t_s, f.coord});
  }
  return s;
}

void write_trace_csv(const std::filesystem::path& path, const LocalizationTrace& trace) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "t_s,pred_lat,pred_lon,truth_lat,truth_lon,deviation_m,warm_up,inference_ms\n";
  for (const TraceEntry& e : trace.entries) {
    out << e.t_s << ',' << e.pred.lat_deg << ',' << e.pred.lon_deg << ',';
    if (e.paired) {
      out << e.truth.lat_deg << ',' << e.truth.lon_deg << ',' << e.deviation_m;
    } else {
      out << ",,";
    }
    out << ',' << (e.warm_up ? 1 : 0) << ',' << e.inference_ms << '\n';
  }
}

LocalizationTrace read_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  LocalizationTrace trace;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (line.back() == ',') f.emplace_back();
    if (f.size() != 8) throw std::runtime_error("trace csv: expected 8 fields in '" + line + "'");
    TraceEntry e;
    e.t_s = std::stod(f[0]);
    e.pred = {std::stod(f[1]), std::stod(f[2])};
    e.paired = !f[3].empty();
    if (e.paired) {
      e.truth = {std::stod(f[3]), std::stod(f[4])};
      e.deviation_m = std::stod(f[5]);
    }
    e.warm_up = f[6] == "1";
    e.inference_ms = std::stod(f[7]);
    trace.entries.push_back(e);
  }
  return trace;
}

}  // namespace strm
