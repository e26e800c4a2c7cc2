#include "strm/datapipe.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>

#include "strm/rng.hpp"

namespace strm {

namespace {

class LeWriter {
 public:
  explicit LeWriter(std::vector<std::uint8_t>& out) : out_(out) {}

  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }

 private:
  void put(std::uint64_t v, int n) {
    for (int i = 0; i < n; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t>& out_;
};

class LeReader {
 public:
  explicit LeReader(std::span<const std::uint8_t> in, std::size_t pos = 0) : in_(in), pos_(pos) {}

  std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
  std::uint64_t u64() { return get(8); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  void bytes(void* p, std::size_t n) {
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  std::size_t pos() const { return pos_; }

 private:
  std::uint64_t get(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(in_[pos_ + i]) << (8 * i);
    pos_ += n;
    return v;
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_;
};

}  // namespace

std::vector<NormalizedCoordinate> sequence_norm_coords(const Dataset& ds, std::size_t i) {
  std::vector<NormalizedCoordinate> out;
  for (const FrameRecord& r : ds.sequence(i)) out.push_back(normalize(r.coord, ds.header.bounds));
  return out;
}

std::vector<std::size_t> extract_frame_indices(std::span<const double> times, double interval_s) {
  if (!(interval_s > 0.0)) throw std::invalid_argument("extract_frames: interval must be positive");
  std::vector<std::size_t> out;
  if (times.empty()) return out;
  if (!std::is_sorted(times.begin(), times.end())) {
    throw std::invalid_argument("extract_frames: stream timestamps must be non-decreasing");
  }
  const double t0 = times.front();
  const double half = 0.5 * interval_s;
  // Targets stay inside the stream's span; a frame exactly half an interval away does not count.
  const auto steps = static_cast<std::int64_t>(std::floor((times.back() - t0) / interval_s + 1e-9));
  for (std::int64_t k = 0; k <= steps; ++k) {
    const double target = t0 + static_cast<double>(k) * interval_s;
    const auto it = std::lower_bound(times.begin(), times.end(), target);
    std::size_t best = times.size();
    double best_dt = std::numeric_limits<double>::infinity();
    if (it != times.end()) {
      best = static_cast<std::size_t>(it - times.begin());
      best_dt = *it - target;
    }
    if (it != times.begin()) {
      const auto prev = static_cast<std::size_t>(it - times.begin()) - 1;
      // Ties go to the earlier frame.
      if (target - times[prev] <= best_dt) {
        best = prev;
        best_dt = target - times[prev];
      }
    }
    if (best == times.size() || best_dt >= half) continue;
    if (!out.empty() && out.back() == best) continue;
    out.push_back(best);
  }
  return out;
}

std::vector<std::uint64_t> build_sequences(std::span<const double> times, const SequenceParams& p) {
  if (p.seq_len == 0) throw std::invalid_argument("build_sequences: seq_len must be positive");
  if (p.stride == 0) throw std::invalid_argument("build_sequences: stride must be positive");
  std::vector<std::uint64_t> starts;
  std::size_t run_start = 0;
  auto emit_run = [&](std::size_t begin, std::size_t end) {
    for (std::size_t s = begin; s + p.seq_len <= end; s += p.stride) starts.push_back(s);
  };
  for (std::size_t i = 1; i <= times.size(); ++i) {
    const bool broken =
        i == times.size() || std::abs(times[i] - times[i - 1] - p.frame_interval_s) > p.gap_tolerance_s;
    if (broken) {
      emit_run(run_start, i);
      run_start = i;
    }
  }
  return starts;
}

std::vector<std::uint8_t> serialize_dataset(const Dataset& ds) {
  const DatasetHeader& h = ds.header;
  if (h.record_count != ds.records.size()) {
    throw std::invalid_argument("serialize_dataset: header record_count disagrees with records");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kDatasetHeaderBytes + ds.records.size() * h.record_bytes() + 8 * ds.sequence_starts.size() + 24);
  LeWriter w(out);
  w.bytes(kDatasetMagic.data(), kDatasetMagic.size());
  w.u32(h.version);
  w.f64(h.bounds.lat_min());
  w.f64(h.bounds.lat_max());
  w.f64(h.bounds.lon_min());
  w.f64(h.bounds.lon_max());
  w.u32(h.fpp_w);
  w.u32(h.fpp_h);
  w.u32(h.gmp_w);
  w.u32(h.gmp_h);
  w.u64(h.record_count);
  w.f32(h.frame_interval_s);
  w.u32(h.seq_len);
  const std::size_t fpp_bytes = 3 * std::size_t{h.fpp_w} * h.fpp_h;
  const std::size_t gmp_bytes = 3 * std::size_t{h.gmp_w} * h.gmp_h;
  for (const FrameRecord& r : ds.records) {
    if (r.fpp.byte_size() != fpp_bytes || r.gmp.byte_size() != gmp_bytes) {
      throw std::invalid_argument("serialize_dataset: image dimensions disagree with header");
    }
    w.f64(r.t_s);
    w.f64(r.coord.lat_deg);
    w.f64(r.coord.lon_deg);
    w.f32(r.rtk_accuracy_m);
    w.bytes(r.fpp.data.data(), fpp_bytes);
    w.bytes(r.gmp.data.data(), gmp_bytes);
  }
  for (std::uint64_t s : ds.sequence_starts) w.u64(s);
  w.u64(ds.sequence_starts.size());
  w.u64(h.record_count);
  w.bytes(kDatasetEndMagic.data(), kDatasetEndMagic.size());
  return out;
}

Dataset deserialize_dataset(std::span<const std::uint8_t> bytes) {
  using Kind = DatasetFormatError::Kind;
  if (bytes.size() < kDatasetMagic.size() ||
      !std::equal(kDatasetMagic.begin(), kDatasetMagic.end(), bytes.begin(),
                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; })) {
    throw DatasetFormatError(Kind::kBadMagic, "dataset: bad magic (not a STRMDSET file)");
  }
  if (bytes.size() < kDatasetHeaderBytes) {
    throw DatasetFormatError(Kind::kTruncated, "dataset: truncated header: expected " +
                                                   std::to_string(kDatasetHeaderBytes) + " bytes, got " +
                                                   std::to_string(bytes.size()));
  }
  LeReader r(bytes, kDatasetMagic.size());
  Dataset ds;
  DatasetHeader& h = ds.header;
  h.version = r.u32();
  if (h.version != kDatasetVersion) {
    throw DatasetFormatError(Kind::kBadVersion, "dataset: unsupported version " + std::to_string(h.version) +
                                                    " (expected " + std::to_string(kDatasetVersion) + ")");
  }
  const double lat_min = r.f64(), lat_max = r.f64(), lon_min = r.f64(), lon_max = r.f64();
  try {
    h.bounds = GeoBounds(lat_min, lat_max, lon_min, lon_max);
  } catch (const std::invalid_argument& e) {
    throw DatasetFormatError(Kind::kCorrupt, std::string("dataset: invalid bounds: ") + e.what());
  }
  h.fpp_w = r.u32();
  h.fpp_h = r.u32();
  h.gmp_w = r.u32();
  h.gmp_h = r.u32();
  h.record_count = r.u64();
  h.frame_interval_s = r.f32();
  h.seq_len = r.u32();
  if (h.fpp_w == 0 || h.fpp_h == 0 || h.gmp_w == 0 || h.gmp_h == 0 || h.seq_len == 0) {
    throw DatasetFormatError(Kind::kCorrupt, "dataset: zero dimension in header");
  }

  const std::size_t rec = h.record_bytes();
  const std::size_t min_size = kDatasetHeaderBytes + h.record_count * rec + 24;
  const bool has_end = bytes.size() >= kDatasetHeaderBytes + 24 &&
                       std::equal(kDatasetEndMagic.begin(), kDatasetEndMagic.end(), bytes.end() - 8,
                                  [](char a, std::uint8_t b) { return static_cast<std::uint8_t>(a) == b; });
  if (!has_end) {
    throw DatasetFormatError(Kind::kTruncated, "dataset: truncated: expected at least " + std::to_string(min_size) +
                                                   " bytes, got " + std::to_string(bytes.size()));
  }
  LeReader tail(bytes, bytes.size() - 24);
  const std::uint64_t seq_count = tail.u64();
  const std::uint64_t footer_records = tail.u64();
  const std::size_t footer_bytes = 24 + 8 * seq_count;
  if (footer_bytes > bytes.size() - kDatasetHeaderBytes) {
    throw DatasetFormatError(Kind::kCorrupt, "dataset: sequence index larger than file");
  }
  const std::size_t body = bytes.size() - kDatasetHeaderBytes - footer_bytes;
  if (body % rec != 0) {
    throw DatasetFormatError(Kind::kTruncated, "dataset: truncated: expected " + std::to_string(min_size + 8 * seq_count) +
                                                   " bytes, got " + std::to_string(bytes.size()));
  }
  const std::uint64_t body_records = body / rec;
  if (body_records != h.record_count || footer_records != h.record_count) {
    throw DatasetFormatError(Kind::kCountMismatch, "dataset: header record_count " + std::to_string(h.record_count) +
                                                       " but body holds " + std::to_string(body_records) + " records");
  }

  const std::size_t fpp_bytes = 3 * std::size_t{h.fpp_w} * h.fpp_h;
  const std::size_t gmp_bytes = 3 * std::size_t{h.gmp_w} * h.gmp_h;
  ds.records.resize(h.record_count);
  for (FrameRecord& f : ds.records) {
    f.t_s = r.f64();
    f.coord.lat_deg = r.f64();
    f.coord.lon_deg = r.f64();
    f.rtk_accuracy_m = r.f32();
    f.fpp = Image(static_cast<int>(h.fpp_w), static_cast<int>(h.fpp_h));
    r.bytes(f.fpp.data.data(), fpp_bytes);
    f.gmp = Image(static_cast<int>(h.gmp_w), static_cast<int>(h.gmp_h));
    r.bytes(f.gmp.data.data(), gmp_bytes);
  }
  ds.sequence_starts.resize(seq_count);
  for (auto& s : ds.sequence_starts) {
    s = r.u64();
    if (s + h.seq_len > h.record_count) {
      throw DatasetFormatError(Kind::kCorrupt, "dataset: sequence start " + std::to_string(s) + " out of range");
    }
  }
  return ds;
}

void write_dataset(const std::filesystem::path& path, const Dataset& ds) {
  const auto bytes = serialize_dataset(ds);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

Dataset read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const auto size = static_cast<std::size_t>(in.tellg());
  in.seekg(0);
  std::vector<std::uint8_t> bytes(size);
  in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(size));
  return deserialize_dataset(bytes);
}

void export_metadata_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  out << "t_s,lat,lon,accuracy\n" << std::setprecision(17);
  for (const FrameRecord& r : ds.records) {
    out << r.t_s << ',' << r.coord.lat_deg << ',' << r.coord.lon_deg << ',' << r.rtk_accuracy_m << '\n';
  }
}

SplitResult stratified_split(std::span<const NormalizedCoordinate> final_coords, double fraction,
                             std::uint64_t seed, int grid) {
  if (!(fraction >= 0.0 && fraction <= 1.0)) throw std::invalid_argument("stratified_split: fraction must lie in [0, 1]");
  if (grid < 1) throw std::invalid_argument("stratified_split: grid must be >= 1");
  std::map<int, std::vector<std::size_t>> cells;
  for (std::size_t i = 0; i < final_coords.size(); ++i) {
    const auto bin = [grid](double x) { return std::clamp(static_cast<int>(std::floor(x * grid)), 0, grid - 1); };
    cells[bin(final_coords[i].u) * grid + bin(final_coords[i].v)].push_back(i);
  }
  Rng rng(mix_seed(seed, 6));
  std::vector<std::uint8_t> chosen(final_coords.size(), 0);
  for (auto& [cell, members] : cells) {
    for (std::size_t k = members.size(); k > 1; --k) std::swap(members[k - 1], members[rng.below(k)]);
    const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
    for (std::size_t k = 0; k < take && k < members.size(); ++k) chosen[members[k]] = 1;
  }
  SplitResult out;
  for (std::size_t i = 0; i < chosen.size(); ++i) (chosen[i] ? out.subset : out.remainder).push_back(i);
  return out;
}

SplitResult stratified_split(const Dataset& ds, double fraction, std::uint64_t seed, int grid) {
  std::vector<NormalizedCoordinate> finals;
  finals.reserve(ds.sequence_count());
  for (std::size_t i = 0; i < ds.sequence_count(); ++i) {
    finals.push_back(normalize(ds.sequence(i).back().coord, ds.header.bounds));
  }
  return stratified_split(finals, fraction, seed, grid);
}

void DatasetParams::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("DatasetParams: " + m); };
  if (fpp.width <= 0 || fpp.height <= 0 || gmp.width <= 0 || gmp.height <= 0) fail("resolutions must be positive");
  if (!(gmp_coverage_m > 0.0)) fail("gmp_coverage_m must be positive");
  if (!(speed_mps >= 0.0)) fail("speed_mps must be non-negative");
  if (!(session_duration_s > 0.0)) fail("session_duration_s must be positive");
  if (sessions < 1) fail("sessions must be >= 1");
  if (sequences.seq_len == 0 || sequences.stride == 0) fail("seq_len and stride must be positive");
  if (!(sequences.frame_interval_s > 0.0)) fail("frame_interval_s must be positive");
}

Dataset build_dataset(const World& world, const SensorNoiseSpec& noise, const DatasetParams& params,
                      PipelineStats* stats) {
  params.validate();
  PipelineStats local;
  Dataset ds;
  ds.header.bounds = world.spec.bounds;
  ds.header.fpp_w = static_cast<std::uint32_t>(params.fpp.width);
  ds.header.fpp_h = static_cast<std::uint32_t>(params.fpp.height);
  ds.header.gmp_w = static_cast<std::uint32_t>(params.gmp.width);
  ds.header.gmp_h = static_cast<std::uint32_t>(params.gmp.height);
  ds.header.frame_interval_s = static_cast<float>(params.sequences.frame_interval_s);
  ds.header.seq_len = params.sequences.seq_len;

  const DistractorField distractors(world, mix_seed(params.seed, 100));
  // Sessions are separated by a gap so no window spans two of them.
  const double session_offset = params.session_duration_s + 100.0 * params.sequences.frame_interval_s;
  for (int s = 0; s < params.sessions; ++s) {
    const std::uint64_t session_seed = mix_seed(params.seed, 200 + static_cast<std::uint64_t>(s));
    auto poses = sample_trajectory(world, params.speed_mps, params.session_duration_s, session_seed);
    const double t_offset = s * session_offset;
    for (AgentPose& p : poses) p.t_s += t_offset;
    const auto fixes = simulate_rtk(world, poses, noise, session_seed);
    local.stream_frames += fixes.size();

    const auto picked = extract_frames<RtkFix>(fixes, params.sequences.frame_interval_s);
    local.extracted += picked.size();
    const auto good = filter_accuracy<RtkFix>(picked, params.max_accuracy_m);
    local.excluded += picked.size() - good.size();

    for (const RtkFix& f : good) {
      FrameRecord rec;
      rec.t_s = f.t_s;
      rec.coord = f.coord;
      rec.rtk_accuracy_m = static_cast<float>(f.rtk_accuracy_m);
      const auto state = distractors.at(f.t_s);
      rec.fpp = render_fpp(world, f.truth, state, params.fpp);
      const Vec2 at = world.to_local(f.coord);
      rec.gmp = render_gmp(world, at.x, at.y, params.gmp_coverage_m, params.gmp);
      ds.records.push_back(std::move(rec));
    }
  }
  local.kept = ds.records.size();
  ds.header.record_count = ds.records.size();

  std::vector<double> times;
  times.reserve(ds.records.size());
  for (const FrameRecord& r : ds.records) times.push_back(r.t_s);
  ds.sequence_starts = build_sequences(times, params.sequences);
  local.sequences = ds.sequence_starts.size();
  if (stats != nullptr) *stats = local;
  return ds;
}

}  // namespace strm
