#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "strm/geo.hpp"
#include "strm/image.hpp"
#include "strm/trace.hpp"

namespace strm {

class GenerationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct WorldSpec {
  std::uint64_t seed = 1;
  double width_m = 200.0;
  double height_m = 120.0;
  GeoBounds bounds;
  double cell_size_m = 0.5;
  double building_density = 0.3;
  int palette_size = 12;
  int path_waypoint_count = 14;
  int distractor_count = 12;
  double corridor_width_m = 4.0;
  double building_min_m = 6.0;
  double building_max_m = 24.0;

  /// 200 m x 120 m campus; trajectories at 0.66 m/s.
  static WorldSpec campus(std::uint64_t seed = 1);
  /// 900 m x 900 m downtown; trajectories at 3.61 m/s.
  static WorldSpec urban(std::uint64_t seed = 1);

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  bool operator==(const WorldSpec&) const = default;
};

inline constexpr double kCampusSpeedMps = 0.66;
inline constexpr double kUrbanSpeedMps = 3.61;
inline constexpr Rgb kOutOfWorldColor = {128, 128, 128};
inline constexpr Rgb kGroundColor = {96, 140, 72};
inline constexpr Rgb kPathColor = {200, 184, 150};
inline constexpr Rgb kSkyColor = {150, 190, 235};
inline constexpr Rgb kFloorColor = {110, 110, 100};

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
  bool operator==(const Vec2&) const = default;
};

struct PathNetwork {
  std::vector<Vec2> nodes;
  std::vector<std::pair<int, int>> segments;
  std::vector<std::vector<int>> adjacency;  // node -> neighbor nodes

  bool operator==(const PathNetwork&) const = default;
};

/// Cell (i, j) is column i (east) and row j (north); j = 0 is the southern edge.
struct World {
  WorldSpec spec;
  int cols = 0;
  int rows = 0;
  std::vector<Rgb> color_grid;
  std::vector<std::uint8_t> occupancy;
  std::vector<float> height_grid;  // building height in meters, 0 on free cells
  std::vector<Rgb> palette;
  PathNetwork paths;

  std::size_t cell_index(int i, int j) const {
    return static_cast<std::size_t>(j) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(i);
  }
  bool in_grid(int i, int j) const { return i >= 0 && j >= 0 && i < cols && j < rows; }
  bool occupied(int i, int j) const { return occupancy[cell_index(i, j)] != 0; }
  bool occupied_at(double x_m, double y_m) const;
  Rgb color_at(double x_m, double y_m) const;
  double occupied_fraction() const;

  GeoCoordinate to_geo(double x_m, double y_m) const;
  Vec2 to_local(const GeoCoordinate& c) const;

  bool operator==(const World&) const = default;
};

/// Deterministic in spec.seed. Throws GenerationError when the spec cannot be
/// realized (density too high to place buildings around the path corridors).
World generate_world(const WorldSpec& spec);

struct AgentPose {
  double x_m = 0.0;
  double y_m = 0.0;
  double heading_rad = 0.0;  // counter-clockwise from east, in [0, 2pi)
  double t_s = 0.0;

  bool operator==(const AgentPose&) const = default;
};

/// 1 Hz random walk along the path network.
std::vector<AgentPose> sample_trajectory(const World& world, double speed_mps, double duration_s,
                                         std::uint64_t seed);

struct Distractor {
  double x_m = 0.0;
  double y_m = 0.0;
  double half_size_m = 0.4;
  double height_m = 1.8;
  Rgb color{};
};

/// Pedestrians/vehicles pacing back and forth along path segments.
class DistractorField {
 public:
  DistractorField() = default;
  DistractorField(const World& world, std::uint64_t seed);

  std::vector<Distractor> at(double t_s) const;
  std::size_t size() const { return movers_.size(); }

 private:
  struct Mover {
    Vec2 a, b;
    double length = 0.0;
    double speed = 1.0;
    double phase = 0.0;
    double lateral = 0.0;
    Distractor shape;
  };
  std::vector<Mover> movers_;
};

struct Resolution {
  int width = 64;
  int height = 64;
  bool operator==(const Resolution&) const = default;
};

inline constexpr double kFppFovRad = 1.5707963267948966;  // 90 degrees
inline constexpr double kCameraHeightM = 1.0;
inline constexpr double kMaxRayM = 80.0;

/// Shade factor applied to a wall color hit at perpendicular distance d.
double wall_shade(double distance_m, bool y_side);

/// Column raycast of the blocks world. Throws std::invalid_argument if the
/// pose sits in an occupied cell or outside the world.
Image render_fpp(const World& world, const AgentPose& pose, std::span<const Distractor> distractors,
                 Resolution res);

/// North-up crop of the color grid centered on (x, y), `coverage_m` per side.
/// Pixel (W/2, H/2) samples exactly the center position.
Image render_gmp(const World& world, double x_m, double y_m, double coverage_m, Resolution res);

/// Whole color grid as a north-up image, one pixel per cell.
Image world_image(const World& world);

/// Writes `<stem>.ppm` and `<stem>.json` (bounds, extent, cell size, seed),
/// both tagged with `config_hash` when one is given.
void export_world(const World& world, const std::filesystem::path& stem, const std::string& config_hash = {});

struct SensorNoiseSpec {
  double rtk_sigma_m = 0.02;
  double rtk_accuracy_mean_m = 0.03;
  double rtk_accuracy_spread_m = 0.015;
  double rtk_bad_fix_prob = 0.01;
  double phone_sigma_m = 3.0;
  double phone_outlier_prob = 0.02;
  double phone_outlier_sigma_m = 15.0;

  void validate() const;
};

/// Isotropic per-axis Gaussian noise (Rayleigh deviations), with outliers.
LocalizationTrace simulate_gps(const World& world, std::span<const AgentPose> truth,
                               const SensorNoiseSpec& noise, std::uint64_t seed);

struct RtkFix {
  double t_s = 0.0;
  GeoCoordinate coord;
  double rtk_accuracy_m = 0.0;
  AgentPose truth;
};

std::vector<RtkFix> simulate_rtk(const World& world, std::span<const AgentPose> truth,
                                 const SensorNoiseSpec& noise, std::uint64_t seed);

}  // namespace strm
