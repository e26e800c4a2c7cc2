#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "strm/geo.hpp"
#include "strm/image.hpp"
#include "strm/worldsim.hpp"

namespace strm {

struct FrameRecord {
  double t_s = 0.0;
  Image fpp;
  GeoCoordinate coord;
  float rtk_accuracy_m = 0.0f;
  Image gmp;  // GMP target cropped at `coord`

  bool operator==(const FrameRecord&) const = default;
};

inline constexpr std::array<char, 8> kDatasetMagic = {'S', 'T', 'R', 'M', 'D', 'S', 'E', 'T'};
inline constexpr std::array<char, 8> kDatasetEndMagic = {'S', 'T', 'R', 'M', 'E', 'N', 'D', '\0'};
inline constexpr std::uint32_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 76;

struct DatasetHeader {
  std::uint32_t version = kDatasetVersion;
  GeoBounds bounds;
  std::uint32_t fpp_w = 64, fpp_h = 64, gmp_w = 64, gmp_h = 64;
  std::uint64_t record_count = 0;
  float frame_interval_s = 10.0f;
  std::uint32_t seq_len = 24;

  std::size_t record_bytes() const { return 8 + 8 + 8 + 4 + 3 * (std::size_t{fpp_w} * fpp_h + std::size_t{gmp_w} * gmp_h); }
  bool operator==(const DatasetHeader&) const = default;
};

/// Time-sorted, accuracy-filtered frame records plus the windows that form
/// training sequences. A sequence is `seq_len` consecutive records starting at
/// `sequence_starts[i]`.
struct Dataset {
  DatasetHeader header;
  std::vector<FrameRecord> records;
  std::vector<std::uint64_t> sequence_starts;

  std::size_t sequence_count() const { return sequence_starts.size(); }
  std::span<const FrameRecord> sequence(std::size_t i) const {
    return std::span<const FrameRecord>(records).subspan(sequence_starts[i], header.seq_len);
  }
  bool operator==(const Dataset&) const = default;
};

/// Normalized coordinates of a sequence's frames.
std::vector<NormalizedCoordinate> sequence_norm_coords(const Dataset& ds, std::size_t i);

/// For each target t0 + k*interval up to the last timestamp, index of the
/// nearest stream timestamp strictly within interval/2. Targets without a
/// nearby frame produce nothing.
std::vector<std::size_t> extract_frame_indices(std::span<const double> stream_times, double interval_s);

/// Generic form over any record type exposing `t_s`.
template <typename Frame>
std::vector<Frame> extract_frames(std::span<const Frame> stream, double interval_s) {
  std::vector<double> times;
  times.reserve(stream.size());
  for (const Frame& f : stream) times.push_back(f.t_s);
  std::vector<Frame> out;
  for (std::size_t i : extract_frame_indices(times, interval_s)) out.push_back(stream[i]);
  return out;
}

inline constexpr double kMaxRtkAccuracyM = 5.0;

/// Keeps records with accuracy <= max_m (inclusive), order preserved.
template <typename Frame>
std::vector<Frame> filter_accuracy(std::span<const Frame> records, double max_m = kMaxRtkAccuracyM) {
  std::vector<Frame> out;
  for (const Frame& r : records) {
    if (r.rtk_accuracy_m <= max_m) out.push_back(r);
  }
  return out;
}

struct SequenceParams {
  std::uint32_t seq_len = 24;
  double frame_interval_s = 10.0;
  double gap_tolerance_s = 1.0;
  std::uint32_t stride = 12;
};

/// Start indices of windows of seq_len records whose consecutive gaps are all
/// within interval +- tolerance. Windows restart after every gap.
std::vector<std::uint64_t> build_sequences(std::span<const double> times, const SequenceParams& p);

class DatasetFormatError : public std::runtime_error {
 public:
  enum class Kind { kBadMagic, kBadVersion, kTruncated, kCountMismatch, kCorrupt };
  DatasetFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

/// Little-endian serialization: header, frame records, then the sequence index
/// footer [starts...][count u64][record_count u64][end magic].
std::vector<std::uint8_t> serialize_dataset(const Dataset& ds);
Dataset deserialize_dataset(std::span<const std::uint8_t> bytes);
void write_dataset(const std::filesystem::path& path, const Dataset& ds);
Dataset read_dataset(const std::filesystem::path& path);

/// Per-frame metadata CSV: t_s, lat, lon, accuracy.
void export_metadata_csv(const std::filesystem::path& path, const Dataset& ds);

struct SplitResult {
  std::vector<std::size_t> subset;
  std::vector<std::size_t> remainder;
};

/// Stratifies sequences by the grid cell of their final coordinate and draws
/// ceil(fraction * n) from each cell.
SplitResult stratified_split(const Dataset& ds, double fraction, std::uint64_t seed, int grid = 8);

/// Same rule over explicit final coordinates (used by tests and the CLI).
SplitResult stratified_split(std::span<const NormalizedCoordinate> final_coords, double fraction,
                             std::uint64_t seed, int grid = 8);

struct DatasetParams {
  Resolution fpp{64, 64};
  Resolution gmp{64, 64};
  double gmp_coverage_m = 40.0;
  double speed_mps = kCampusSpeedMps;
  double session_duration_s = 3600.0;
  int sessions = 1;
  SequenceParams sequences;
  double max_accuracy_m = kMaxRtkAccuracyM;
  std::uint64_t seed = 1;

  void validate() const;
};

struct PipelineStats {
  std::size_t stream_frames = 0;
  std::size_t extracted = 0;
  std::size_t excluded = 0;
  std::size_t kept = 0;
  std::size_t sequences = 0;
};

/// trajectory -> simulate_rtk -> extract -> filter -> render FPP/GMP -> sequences.
Dataset build_dataset(const World& world, const SensorNoiseSpec& noise, const DatasetParams& params,
                      PipelineStats* stats = nullptr);

}  // namespace strm
