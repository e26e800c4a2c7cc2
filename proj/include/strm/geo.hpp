#pragma once

#include <utility>

namespace strm {

inline constexpr double kEarthRadiusM = 6371000.0;

struct GeoCoordinate {
  double lat_deg = 0.0;
  double lon_deg = 0.0;

  bool operator==(const GeoCoordinate&) const = default;
};

/// Model-space coordinate: u along latitude, v along longitude.
/// Ground truth inside the bounds lands in [0, 1]^2; predictions are never clamped.
struct NormalizedCoordinate {
  double u = 0.0;
  double v = 0.0;

  bool operator==(const NormalizedCoordinate&) const = default;
};

/// Fixed lat/lon box that defines the normalization. Construction validates.
class GeoBounds {
 public:
  GeoBounds() = default;
  GeoBounds(double lat_min, double lat_max, double lon_min, double lon_max);

  double lat_min() const { return lat_min_; }
  double lat_max() const { return lat_max_; }
  double lon_min() const { return lon_min_; }
  double lon_max() const { return lon_max_; }
  double lat_span() const { return lat_max_ - lat_min_; }
  double lon_span() const { return lon_max_ - lon_min_; }
  GeoCoordinate center() const;
  bool contains(const GeoCoordinate& c) const;

  bool operator==(const GeoBounds&) const = default;

 private:
  double lat_min_ = 0.0;
  double lat_max_ = 1.0;
  double lon_min_ = 0.0;
  double lon_max_ = 1.0;
};

bool is_valid(const GeoCoordinate& c);

NormalizedCoordinate normalize(const GeoCoordinate& coord, const GeoBounds& bounds);
GeoCoordinate denormalize(const NormalizedCoordinate& n, const GeoBounds& bounds);

/// Haversine great-circle distance in meters.
double deviation_meters(const GeoCoordinate& a, const GeoCoordinate& b);

struct Extent {
  double width_m = 0.0;
  double height_m = 0.0;
};

/// Height along the latitude span at the mean longitude, width along the
/// longitude span at the mean latitude.
Extent bounds_extent_meters(const GeoBounds& bounds);

double diagonal_meters(const GeoBounds& bounds);

/// Bounds whose south-west corner is `origin` and whose local extent is
/// `width_m` x `height_m` under a local equirectangular frame.
GeoBounds bounds_from_extent(const GeoCoordinate& origin, double width_m, double height_m);

}  // namespace strm
