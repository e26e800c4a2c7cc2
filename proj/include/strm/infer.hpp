#pragma once

#include <cstddef>
#include <deque>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "strm/datapipe.hpp"
#include "strm/geo.hpp"
#include "strm/image.hpp"
#include "strm/model.hpp"
#include "strm/trace.hpp"
#include "strm/worldsim.hpp"

namespace strm {

struct BufferedFrame {
  double t_s = 0.0;
  Image image;
};

/// Bounded window of the most recent admitted frames. A high-rate feed is
/// decimated to the trained cadence: a frame is admitted once at least
/// interval - tolerance has passed since the last admission and the frame has
/// reached the next slot of a fixed interval grid (so the mean rate stays at
/// one frame per interval instead of drifting to interval - tolerance).
class FrameBuffer {
 public:
  FrameBuffer(std::size_t capacity, double frame_interval_s, double tolerance_s = 1.0);

  /// Returns true when the frame was admitted. Throws std::invalid_argument
  /// when `t_s` does not exceed the previous pushed timestamp.
  bool push(double t_s, Image image);

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return entries_.size(); }
  bool full() const { return entries_.size() == capacity_; }
  double frame_interval_s() const { return interval_; }
  const std::deque<BufferedFrame>& entries() const { return entries_; }
  void clear();

 private:
  std::size_t capacity_;
  double interval_;
  double tolerance_;
  std::deque<BufferedFrame> entries_;
  std::optional<double> last_seen_;
  std::optional<double> last_admitted_;
  double next_slot_ = 0.0;
};

/// Free-function form of FrameBuffer::push.
inline bool push_frame(FrameBuffer& buffer, double t_s, Image image) { return buffer.push(t_s, std::move(image)); }

struct Prediction {
  GeoCoordinate coord;
  NormalizedCoordinate normalized;
  bool warm_up = false;
};

/// Deterministic forward over the buffered prefix; the last timestep's
/// coordinate, denormalized. Empty when fewer than `min_frames` are buffered.
std::optional<Prediction> predict(const FrameBuffer& buffer, const Model<float>& model, const GeoBounds& bounds,
                                  std::size_t min_frames = 2);

/// Maps the buffered frames (oldest first) to a normalized coordinate.
using Localizer = std::function<NormalizedCoordinate(const std::deque<BufferedFrame>& frames)>;

struct TruthFix {
  double t_s = 0.0;
  GeoCoordinate coord;
};

struct StreamOptions {
  std::size_t capacity = 24;
  double frame_interval_s = 10.0;
  double tolerance_s = 1.0;
  std::size_t min_frames = 2;
  double pairing_window_s = 0.5;
};

/// Feeds every frame through a FrameBuffer, predicts after each admission and
/// pairs the prediction with the truth fix nearest in time (within the pairing
/// window; `truth` must be time-sorted).
LocalizationTrace run_stream(const Localizer& localizer, std::span<const BufferedFrame> frames,
                             std::span<const TruthFix> truth, const GeoBounds& bounds, const StreamOptions& options);
LocalizationTrace run_stream(const Model<float>& model, std::span<const BufferedFrame> frames,
                             std::span<const TruthFix> truth, const GeoBounds& bounds, const StreamOptions& options);

/// Index of the fix nearest to `t_s` within `window_s`, if any.
std::optional<std::size_t> nearest_fix(std::span<const TruthFix> truth, double t_s, double window_s);

/// A held-out session: 1 Hz FPP frames and RTK truth along a fresh trajectory.
struct TestSession {
  std::vector<AgentPose> poses;
  std::vector<BufferedFrame> frames;
  std::vector<TruthFix> truth;
};

TestSession make_test_session(const World& world, const SensorNoiseSpec& noise, const DatasetParams& params,
                              double duration_s, std::uint64_t seed);

/// CSV: t_s, pred_lat, pred_lon, truth_lat, truth_lon, deviation_m, warm_up, inference_ms.
/// Unpaired entries leave the truth and deviation fields empty.
void write_trace_csv(const std::filesystem::path& path, const LocalizationTrace& trace);
LocalizationTrace read_trace_csv(const std::filesystem::path& path);

}  // namespace strm
