#include <doctest.h>

#include <cmath>
#include <numbers>
#include <stdexcept>

#include "strm/geo.hpp"
#include "strm/rng.hpp"

using namespace strm;

namespace {

// Textbook haversine written independently of the library.
double haversine(double lat1, double lon1, double lat2, double lon2) {
  const double r = 6371000.0, k = std::numbers::pi / 180.0;
  const double a = std::pow(std::sin((lat2 - lat1) * k / 2), 2) +
                   std::cos(lat1 * k) * std::cos(lat2 * k) * std::pow(std::sin((lon2 - lon1) * k / 2), 2);
  return 2 * r * std::atan2(std::sqrt(a), std::sqrt(1 - a));
}

}  // namespace

TEST_CASE("normalize maps bounds affinely") {
  const GeoBounds b(10, 20, 30, 50);
  const auto c = normalize(b.center(), b);
  CHECK(c.u == doctest::Approx(0.5));
  CHECK(c.v == doctest::Approx(0.5));
  CHECK(normalize({10, 30}, b) == NormalizedCoordinate{0.0, 0.0});
  CHECK(normalize({12.5, 30}, b).u == doctest::Approx(0.25));
}

TEST_CASE("denormalize inverts and extrapolates") {
  const GeoBounds b(10, 20, 30, 50);
  const auto c = denormalize({0.5, 0.5}, b);
  CHECK(c.lat_deg == doctest::Approx(15));
  CHECK(c.lon_deg == doctest::Approx(40));
  CHECK(denormalize({0, 0}, b) == GeoCoordinate{10, 30});
  CHECK(denormalize({1.5, 0.5}, b).lat_deg == doctest::Approx(25));

  Rng rng(5);
  for (int i = 0; i < 1000; ++i) {
    const NormalizedCoordinate n{rng.uniform(-1, 2), rng.uniform(-1, 2)};
    const auto back = normalize(denormalize(n, b), b);
    CHECK(std::abs(back.u - n.u) <= 1e-12 * std::max(1.0, std::abs(n.u)));
    CHECK(std::abs(back.v - n.v) <= 1e-12 * std::max(1.0, std::abs(n.v)));
  }
}

TEST_CASE("degenerate bounds are rejected at construction") {
  CHECK_THROWS_AS(GeoBounds(10, 10, 0, 1), std::invalid_argument);
  CHECK_THROWS_AS(GeoBounds(0, 1, 5, 4), std::invalid_argument);
  CHECK_THROWS_AS(GeoBounds(-95, 1, 0, 1), std::invalid_argument);
}

TEST_CASE("deviation_meters matches haversine oracles") {
  CHECK(deviation_meters({1, 2}, {1, 2}) == 0.0);
  const double one_degree = deviation_meters({0, 0}, {1, 0});
  CHECK(one_degree == doctest::Approx(111194.93).epsilon(1e-7));
  CHECK(one_degree == doctest::Approx(haversine(0, 0, 1, 0)).epsilon(1e-12));

  const double lat = 32.7, dlon = 0.001;
  const double equirect = 6371000.0 * std::cos(lat * std::numbers::pi / 180) * dlon * std::numbers::pi / 180;
  CHECK(std::abs(deviation_meters({lat, 10}, {lat, 10 + dlon}) / equirect - 1) < 1e-4);

  Rng rng(9);
  for (int i = 0; i < 200; ++i) {
    const GeoCoordinate a{rng.uniform(-80, 80), rng.uniform(-170, 170)};
    const GeoCoordinate b{rng.uniform(-80, 80), rng.uniform(-170, 170)};
    CHECK(deviation_meters(a, b) == doctest::Approx(haversine(a.lat_deg, a.lon_deg, b.lat_deg, b.lon_deg)));
    CHECK(deviation_meters(a, b) == deviation_meters(b, a));
  }
}

TEST_CASE("deviation_meters satisfies the triangle inequality") {
  Rng rng(10);
  for (int i = 0; i < 1000; ++i) {
    const GeoCoordinate a{rng.uniform(-60, 60), rng.uniform(-60, 60)};
    const GeoCoordinate b{rng.uniform(-60, 60), rng.uniform(-60, 60)};
    const GeoCoordinate c{rng.uniform(-60, 60), rng.uniform(-60, 60)};
    const double ac = deviation_meters(a, c);
    CHECK(ac <= (deviation_meters(a, b) + deviation_meters(b, c)) * (1 + 1e-6));
  }
}

TEST_CASE("bounds extent and diagonal") {
  const auto e = bounds_extent_meters(GeoBounds(0, 0.001, 0, 0.001));
  CHECK(e.height_m == doctest::Approx(111.19).epsilon(1e-3));
  CHECK(std::abs(e.width_m / e.height_m - 1) < 0.005);

  const GeoBounds campus = bounds_from_extent({32.7, -117.2}, 200, 120);
  const auto ce = bounds_extent_meters(campus);
  CHECK(ce.width_m == doctest::Approx(200).epsilon(1e-3));
  CHECK(ce.height_m == doctest::Approx(120).epsilon(1e-3));
  CHECK(std::abs(diagonal_meters(campus) / std::hypot(200.0, 120.0) - 1) < 1e-3);
}

TEST_CASE("round trip within a millimeter and monotone in latitude") {
  const GeoBounds b = bounds_from_extent({32.7, -117.2}, 900, 900);
  Rng rng(12);
  double prev_u = -1;
  for (int i = 0; i < 1000; ++i) {
    const GeoCoordinate c{b.lat_min() + rng.uniform() * b.lat_span(), b.lon_min() + rng.uniform() * b.lon_span()};
    CHECK(deviation_meters(c, denormalize(normalize(c, b), b)) < 1e-3);
  }
  for (int i = 0; i <= 100; ++i) {
    const double u = normalize({b.lat_min() + b.lat_span() * i / 100.0, b.lon_min()}, b).u;
    CHECK(u > prev_u);
    prev_u = u;
  }
}
