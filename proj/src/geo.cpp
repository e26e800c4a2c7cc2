#include "strm/geo.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace strm {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

}  // namespace

GeoBounds::GeoBounds(double lat_min, double lat_max, double lon_min, double lon_max)
    : lat_min_(lat_min), lat_max_(lat_max), lon_min_(lon_min), lon_max_(lon_max) {
  if (!(lat_min < lat_max) || !(lon_min < lon_max)) {
    throw std::invalid_argument("GeoBounds: degenerate or inverted extent");
  }
  if (!is_valid({lat_min, lon_min}) || !is_valid({lat_max, lon_max})) {
    throw std::invalid_argument("GeoBounds: corner outside lat [-90,90] / lon [-180,180]");
  }
}

GeoCoordinate GeoBounds::center() const {
  return {0.5 * (lat_min_ + lat_max_), 0.5 * (lon_min_ + lon_max_)};
}

bool GeoBounds::contains(const GeoCoordinate& c) const {
  return c.lat_deg >= lat_min_ && c.lat_deg <= lat_max_ && c.lon_deg >= lon_min_ &&
         c.lon_deg <= lon_max_;
}

bool is_valid(const GeoCoordinate& c) {
  return std::isfinite(c.lat_deg) && std::isfinite(c.lon_deg) && c.lat_deg >= -90.0 &&
         c.lat_deg <= 90.0 && c.lon_deg >= -180.0 && c.lon_deg <= 180.0;
}

NormalizedCoordinate normalize(const GeoCoordinate& coord, const GeoBounds& bounds) {
  return {(coord.lat_deg - bounds.lat_min()) / bounds.lat_span(),
          (coord.lon_deg - bounds.lon_min()) / bounds.lon_span()};
}

GeoCoordinate denormalize(const NormalizedCoordinate& n, const GeoBounds& bounds) {
  return {bounds.lat_min() + n.u * bounds.lat_span(), bounds.lon_min() + n.v * bounds.lon_span()};
}

double deviation_meters(const GeoCoordinate& a, const GeoCoordinate& b) {
  const double phi1 = a.lat_deg * kDegToRad;
  const double phi2 = b.lat_deg * kDegToRad;
  const double dphi = phi2 - phi1;
  const double dlambda = (b.lon_deg - a.lon_deg) * kDegToRad;
  const double s1 = std::sin(0.5 * dphi);
  const double s2 = std::sin(0.5 * dlambda);
  double h = s1 * s1 + std::cos(phi1) * std::cos(phi2) * s2 * s2;
  h = std::min(1.0, std::max(0.0, h));
  return 2.0 * kEarthRadiusM * std::asin(std::sqrt(h));
}

Extent bounds_extent_meters(const GeoBounds& bounds) {
  const GeoCoordinate c = bounds.center();
  const double height = deviation_meters({bounds.lat_min(), c.lon_deg}, {bounds.lat_max(), c.lon_deg});
  const double width = deviation_meters({c.lat_deg, bounds.lon_min()}, {c.lat_deg, bounds.lon_max()});
  return {width, height};
}

double diagonal_meters(const GeoBounds& bounds) {
  const Extent e = bounds_extent_meters(bounds);
  return std::hypot(e.width_m, e.height_m);
}

GeoBounds bounds_from_extent(const GeoCoordinate& origin, double width_m, double height_m) {
  if (!(width_m > 0.0) || !(height_m > 0.0)) {
    throw std::invalid_argument("bounds_from_extent: extent must be positive");
  }
  const double dlat = height_m / (kEarthRadiusM * kDegToRad);
  const double mid_lat = (origin.lat_deg + 0.5 * dlat) * kDegToRad;
  const double dlon = width_m / (kEarthRadiusM * kDegToRad * std::cos(mid_lat));
  return GeoBounds(origin.lat_deg, origin.lat_deg + dlat, origin.lon_deg, origin.lon_deg + dlon);
}

}  // namespace strm
