#include "strm/worldsim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include <json.hpp>

#include "strm/rng.hpp"

namespace strm {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
  a = std::fmod(a, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  return a;
}

Rgb hsv_to_rgb(double h, double s, double v) {
  const double c = v * s;
  const double hp = std::fmod(h, 360.0) / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  auto to8 = [](double t) { return static_cast<std::uint8_t>(std::clamp(std::lround(t * 255.0), 0L, 255L)); };
  return {to8(r + m), to8(g + m), to8(b + m)};
}

Rgb scale(Rgb c, double f) {
  auto s = [f](std::uint8_t v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v * f), 0L, 255L));
  };
  return {s(c[0]), s(c[1]), s(c[2])};
}

double segment_length(const PathNetwork& net, int a, int b) {
  return std::hypot(net.nodes[b].x - net.nodes[a].x, net.nodes[b].y - net.nodes[a].y);
}

}  // namespace

WorldSpec WorldSpec::campus(std::uint64_t seed) {
  WorldSpec s;
  s.seed = seed;
  s.width_m = 200.0;
  s.height_m = 120.0;
  s.bounds = bounds_from_extent({32.8801, -117.2340}, s.width_m, s.height_m);
  return s;
}

WorldSpec WorldSpec::urban(std::uint64_t seed) {
  WorldSpec s;
  s.seed = seed;
  s.width_m = 900.0;
  s.height_m = 900.0;
  s.bounds = bounds_from_extent({32.7120, -117.1650}, s.width_m, s.height_m);
  s.cell_size_m = 1.0;
  s.building_density = 0.35;
  s.palette_size = 16;
  s.path_waypoint_count = 40;
  s.distractor_count = 60;
  s.corridor_width_m = 10.0;
  s.building_min_m = 12.0;
  s.building_max_m = 45.0;
  return s;
}

void WorldSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("WorldSpec: " + m); };
  if (!(width_m > 0.0) || !(height_m > 0.0)) fail("extent must be positive");
  if (!(cell_size_m > 0.0)) fail("cell_size_m must be positive");
  if (!(building_density >= 0.0 && building_density <= 1.0)) fail("building_density must lie in [0, 1]");
  if (palette_size < 1) fail("palette_size must be >= 1");
  if (path_waypoint_count < 2) fail("path_waypoint_count must be >= 2");
  if (distractor_count < 0) fail("distractor_count must be >= 0");
  if (!(corridor_width_m > 0.0)) fail("corridor_width_m must be positive");
  if (!(building_min_m > 0.0) || building_max_m < building_min_m) fail("building size range invalid");
  const Extent e = bounds_extent_meters(bounds);
  if (std::abs(e.width_m - width_m) > 0.01 * width_m || std::abs(e.height_m - height_m) > 0.01 * height_m) {
    fail("bounds extent does not match width_m/height_m within 1%");
  }
}

bool World::occupied_at(double x_m, double y_m) const {
  const int i = static_cast<int>(std::floor(x_m / spec.cell_size_m));
  const int j = static_cast<int>(std::floor(y_m / spec.cell_size_m));
  return !in_grid(i, j) || occupied(i, j);
}

Rgb World::color_at(double x_m, double y_m) const {
  const int i = static_cast<int>(std::floor(x_m / spec.cell_size_m));
  const int j = static_cast<int>(std::floor(y_m / spec.cell_size_m));
  return in_grid(i, j) ? color_grid[cell_index(i, j)] : kOutOfWorldColor;
}

double World::occupied_fraction() const {
  const auto n = std::count(occupancy.begin(), occupancy.end(), std::uint8_t{1});
  return static_cast<double>(n) / static_cast<double>(occupancy.size());
}

GeoCoordinate World::to_geo(double x_m, double y_m) const {
  const GeoBounds& b = spec.bounds;
  return {b.lat_min() + y_m / spec.height_m * b.lat_span(), b.lon_min() + x_m / spec.width_m * b.lon_span()};
}

Vec2 World::to_local(const GeoCoordinate& c) const {
  const GeoBounds& b = spec.bounds;
  return {(c.lon_deg - b.lon_min()) / b.lon_span() * spec.width_m,
          (c.lat_deg - b.lat_min()) / b.lat_span() * spec.height_m};
}

World generate_world(const WorldSpec& spec) {
  spec.validate();
  World w;
  w.spec = spec;
  w.cols = static_cast<int>(std::lround(spec.width_m / spec.cell_size_m));
  w.rows = static_cast<int>(std::lround(spec.height_m / spec.cell_size_m));
  if (w.cols < 4 || w.rows < 4) throw GenerationError("world grid smaller than 4x4 cells");
  const std::size_t n_cells = static_cast<std::size_t>(w.cols) * static_cast<std::size_t>(w.rows);
  w.color_grid.assign(n_cells, kGroundColor);
  w.occupancy.assign(n_cells, 0);
  w.height_grid.assign(n_cells, 0.0f);

  Rng rng(mix_seed(spec.seed, 1));

  const double hue0 = rng.uniform(0.0, 360.0);
  for (int k = 0; k < spec.palette_size; ++k) {
    const double hue = hue0 + 360.0 * k / spec.palette_size;
    w.palette.push_back(hsv_to_rgb(hue, rng.uniform(0.5, 0.9), rng.uniform(0.55, 0.95)));
  }

  // Waypoints joined into a tree by L-shaped corridors.
  const double margin = std::min(spec.corridor_width_m, 0.25 * std::min(spec.width_m, spec.height_m));
  PathNetwork& net = w.paths;
  auto add_node = [&net](Vec2 p) {
    net.nodes.push_back(p);
    net.adjacency.emplace_back();
    return static_cast<int>(net.nodes.size()) - 1;
  };
  auto add_segment = [&net](int a, int b) {
    net.segments.emplace_back(a, b);
    net.adjacency[a].push_back(b);
    net.adjacency[b].push_back(a);
  };
  auto snap = [&spec](double v) {
    // Centerlines on cell centers keep corridor rasterization symmetric.
    return (std::floor(v / spec.cell_size_m) + 0.5) * spec.cell_size_m;
  };
  std::vector<int> waypoints;
  for (int k = 0; k < spec.path_waypoint_count; ++k) {
    const Vec2 p{snap(rng.uniform(margin, spec.width_m - margin)), snap(rng.uniform(margin, spec.height_m - margin))};
    const int id = add_node(p);
    if (!waypoints.empty()) {
      int nearest = waypoints.front();
      double best = std::numeric_limits<double>::infinity();
      for (int q : waypoints) {
        const double d = std::abs(net.nodes[q].x - p.x) + std::abs(net.nodes[q].y - p.y);
        if (d < best) {
          best = d;
          nearest = q;
        }
      }
      const Vec2 target = net.nodes[nearest];
      const bool horizontal_first = rng.bernoulli(0.5);
      const Vec2 corner = horizontal_first ? Vec2{target.x, p.y} : Vec2{p.x, target.y};
      const bool corner_is_p = corner == p;
      const bool corner_is_target = corner == target;
      if (corner_is_p || corner_is_target) {
        if (!(p == target)) add_segment(id, nearest);
      } else {
        const int c = add_node(corner);
        add_segment(id, c);
        add_segment(c, nearest);
      }
    }
    waypoints.push_back(id);
  }

  // Corridor reservation.
  std::vector<std::uint8_t> reserved(n_cells, 0);
  const double half = 0.5 * spec.corridor_width_m;
  for (auto [a, b] : net.segments) {
    const Vec2 pa = net.nodes[a], pb = net.nodes[b];
    const double x0 = std::min(pa.x, pb.x) - half, x1 = std::max(pa.x, pb.x) + half;
    const double y0 = std::min(pa.y, pb.y) - half, y1 = std::max(pa.y, pb.y) + half;
    const int i0 = std::max(0, static_cast<int>(std::floor(x0 / spec.cell_size_m)));
    const int i1 = std::min(w.cols - 1, static_cast<int>(std::floor(x1 / spec.cell_size_m)));
    const int j0 = std::max(0, static_cast<int>(std::floor(y0 / spec.cell_size_m)));
    const int j1 = std::min(w.rows - 1, static_cast<int>(std::floor(y1 / spec.cell_size_m)));
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const double cx = (i + 0.5) * spec.cell_size_m, cy = (j + 0.5) * spec.cell_size_m;
        if (cx >= x0 && cx <= x1 && cy >= y0 && cy <= y1) {
          reserved[w.cell_index(i, j)] = 1;
          w.color_grid[w.cell_index(i, j)] = kPathColor;
        }
      }
    }
  }

  // Buildings: non-overlapping rectangles outside the corridors.
  const auto target_cells = static_cast<std::size_t>(std::ceil(spec.building_density * static_cast<double>(n_cells)));
  std::size_t occupied = 0;
  int failures = 0;
  constexpr int kMaxConsecutiveFailures = 5000;
  while (occupied < target_cells) {
    const double bw = rng.uniform(spec.building_min_m, spec.building_max_m);
    const double bh = rng.uniform(spec.building_min_m, spec.building_max_m);
    const double bx = rng.uniform(-0.5 * bw, spec.width_m - 0.5 * bw);
    const double by = rng.uniform(-0.5 * bh, spec.height_m - 0.5 * bh);
    const Rgb color = w.palette[rng.below(w.palette.size())];
    const auto height = static_cast<float>(rng.uniform(3.0, 15.0));
    const int i0 = std::max(0, static_cast<int>(std::floor(bx / spec.cell_size_m)));
    const int i1 = std::min(w.cols - 1, static_cast<int>(std::floor((bx + bw) / spec.cell_size_m)));
    const int j0 = std::max(0, static_cast<int>(std::floor(by / spec.cell_size_m)));
    const int j1 = std::min(w.rows - 1, static_cast<int>(std::floor((by + bh) / spec.cell_size_m)));
    bool ok = i0 <= i1 && j0 <= j1;
    for (int j = j0; ok && j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const auto idx = w.cell_index(i, j);
        if (reserved[idx] || w.occupancy[idx]) {
          ok = false;
          break;
        }
      }
    }
    if (!ok) {
      if (++failures > kMaxConsecutiveFailures) {
        throw GenerationError("cannot reach building_density " + std::to_string(spec.building_density) +
                              ": stalled at occupied fraction " +
                              std::to_string(static_cast<double>(occupied) / static_cast<double>(n_cells)) +
                              " with path corridors reserved");
      }
      continue;
    }
    failures = 0;
    for (int j = j0; j <= j1; ++j) {
      for (int i = i0; i <= i1; ++i) {
        const auto idx = w.cell_index(i, j);
        w.occupancy[idx] = 1;
        w.color_grid[idx] = color;
        w.height_grid[idx] = height;
        ++occupied;
      }
    }
  }

  // Path coverage of the free region.
  double px0 = spec.width_m, px1 = 0, py0 = spec.height_m, py1 = 0;
  for (const Vec2& p : net.nodes) {
    px0 = std::min(px0, p.x - half);
    px1 = std::max(px1, p.x + half);
    py0 = std::min(py0, p.y - half);
    py1 = std::max(py1, p.y + half);
  }
  int fi0 = w.cols, fi1 = -1, fj0 = w.rows, fj1 = -1;
  for (int j = 0; j < w.rows; ++j) {
    for (int i = 0; i < w.cols; ++i) {
      if (!w.occupied(i, j)) {
        fi0 = std::min(fi0, i);
        fi1 = std::max(fi1, i);
        fj0 = std::min(fj0, j);
        fj1 = std::max(fj1, j);
      }
    }
  }
  const double free_area = (fi1 - fi0 + 1) * (fj1 - fj0 + 1) * spec.cell_size_m * spec.cell_size_m;
  const double path_area = std::max(0.0, px1 - px0) * std::max(0.0, py1 - py0);
  if (path_area < 0.3 * free_area) {
    throw GenerationError("path network covers only " + std::to_string(path_area / free_area) +
                          " of the free region (need >= 0.3)");
  }
  return w;
}

std::vector<AgentPose> sample_trajectory(const World& world, double speed_mps, double duration_s,
                                         std::uint64_t seed) {
  if (!(duration_s > 0.0)) throw std::invalid_argument("sample_trajectory: duration must be positive");
  if (!(speed_mps >= 0.0)) throw std::invalid_argument("sample_trajectory: speed must be non-negative");
  const PathNetwork& net = world.paths;
  if (net.segments.empty()) throw std::invalid_argument("sample_trajectory: world has no path network");

  Rng rng(mix_seed(seed, 2));
  const auto& seg0 = net.segments[rng.below(net.segments.size())];
  int from = seg0.first, to = seg0.second;
  if (rng.bernoulli(0.5)) std::swap(from, to);
  double along = rng.uniform() * segment_length(net, from, to);

  auto choose_next = [&](int prev, int node) {
    const auto& nbrs = net.adjacency[node];
    if (nbrs.size() == 1) return nbrs.front();
    int pick;
    do {
      pick = nbrs[rng.below(nbrs.size())];
    } while (pick == prev);
    return pick;
  };
  auto pose_now = [&](double t) {
    const Vec2 a = net.nodes[from], b = net.nodes[to];
    const double len = segment_length(net, from, to);
    const double f = len > 0.0 ? along / len : 0.0;
    return AgentPose{a.x + f * (b.x - a.x), a.y + f * (b.y - a.y), wrap_angle(std::atan2(b.y - a.y, b.x - a.x)), t};
  };

  const auto n = static_cast<std::size_t>(std::floor(duration_s));
  std::vector<AgentPose> poses;
  poses.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    if (k > 0) {
      double remaining = speed_mps;
      while (remaining > 0.0) {
        const double left = segment_length(net, from, to) - along;
        if (remaining <= left) {
          along += remaining;
          remaining = 0.0;
        } else {
          remaining -= left;
          const int next = choose_next(from, to);
          from = to;
          to = next;
          along = 0.0;
        }
      }
    }
    poses.push_back(pose_now(static_cast<double>(k)));
  }
  return poses;
}

DistractorField::DistractorField(const World& world, std::uint64_t seed) {
  const PathNetwork& net = world.paths;
  if (net.segments.empty()) return;
  Rng rng(mix_seed(seed, 3));
  const double max_offset = std::max(0.0, 0.5 * world.spec.corridor_width_m - 0.5);
  for (int k = 0; k < world.spec.distractor_count; ++k) {
    const auto [a, b] = net.segments[rng.below(net.segments.size())];
    Mover m;
    m.a = net.nodes[a];
    m.b = net.nodes[b];
    m.length = segment_length(net, a, b);
    m.speed = rng.uniform(0.6, 1.8);
    m.phase = rng.uniform(0.0, 2.0 * std::max(m.length, 1.0));
    m.lateral = rng.uniform(-max_offset, max_offset);
    m.shape.half_size_m = rng.uniform(0.3, 0.6);
    m.shape.height_m = rng.uniform(1.5, 2.0);
    m.shape.color = hsv_to_rgb(rng.uniform(0.0, 360.0), 0.9, 0.9);
    movers_.push_back(m);
  }
}

std::vector<Distractor> DistractorField::at(double t_s) const {
  std::vector<Distractor> out;
  out.reserve(movers_.size());
  for (const Mover& m : movers_) {
    Distractor d = m.shape;
    double f = 0.0;
    if (m.length > 0.0) {
      const double period = 2.0 * m.length;
      const double s = std::fmod(m.phase + m.speed * t_s, period);
      f = (s <= m.length ? s : period - s) / m.length;
    }
    const double dx = m.b.x - m.a.x, dy = m.b.y - m.a.y;
    const double len = std::max(m.length, 1e-9);
    d.x_m = m.a.x + f * dx - dy / len * m.lateral;
    d.y_m = m.a.y + f * dy + dx / len * m.lateral;
    out.push_back(d);
  }
  return out;
}

double wall_shade(double distance_m, bool y_side) {
  return (y_side ? 0.78 : 1.0) / (1.0 + 0.03 * distance_m);
}

Image render_fpp(const World& world, const AgentPose& pose, std::span<const Distractor> distractors,
                 Resolution res) {
  if (res.width <= 0 || res.height <= 0) throw std::invalid_argument("render_fpp: resolution must be positive");
  const double cell = world.spec.cell_size_m;
  const int ci = static_cast<int>(std::floor(pose.x_m / cell));
  const int cj = static_cast<int>(std::floor(pose.y_m / cell));
  if (!world.in_grid(ci, cj)) throw std::invalid_argument("render_fpp: pose outside the world");
  if (world.occupied(ci, cj)) throw std::invalid_argument("render_fpp: pose inside an occupied cell");

  Image img(res.width, res.height);
  const double heading = wrap_angle(pose.heading_rad);
  const double focal = 0.5 * res.width / std::tan(0.5 * kFppFovRad);
  const double horizon = 0.5 * res.height;

  for (int c = 0; c < res.width; ++c) {
    const double offset = 0.5 * kFppFovRad - (c + 0.5) * kFppFovRad / res.width;
    const double angle = heading + offset;
    const double dx = std::cos(angle), dy = std::sin(angle);
    const double cos_off = std::cos(offset);

    // DDA in cell units.
    const double px = pose.x_m / cell, py = pose.y_m / cell;
    int mi = ci, mj = cj;
    const double ddx = dx == 0.0 ? std::numeric_limits<double>::infinity() : std::abs(1.0 / dx);
    const double ddy = dy == 0.0 ? std::numeric_limits<double>::infinity() : std::abs(1.0 / dy);
    const int sx = dx < 0 ? -1 : 1, sy = dy < 0 ? -1 : 1;
    double side_x = dx < 0 ? (px - mi) * ddx : (mi + 1.0 - px) * ddx;
    double side_y = dy < 0 ? (py - mj) * ddy : (mj + 1.0 - py) * ddy;
    const double max_cells = kMaxRayM / cell;
    double hit_t = std::numeric_limits<double>::infinity();
    bool y_side = false;
    while (true) {
      double t;
      if (side_x < side_y) {
        t = side_x;
        side_x += ddx;
        mi += sx;
        y_side = false;
      } else {
        t = side_y;
        side_y += ddy;
        mj += sy;
        y_side = true;
      }
      if (t > max_cells || !world.in_grid(mi, mj)) break;
      if (world.occupied(mi, mj)) {
        hit_t = t * cell;
        break;
      }
    }

    auto column_span = [&](double perp, double top_h) {
      const double top = horizon - (top_h - kCameraHeightM) * focal / perp;
      const double bottom = horizon + kCameraHeightM * focal / perp;
      return std::pair<double, double>{top, bottom};
    };

    for (int r = 0; r < res.height; ++r) img.set(c, r, r < horizon ? kSkyColor : kFloorColor);
    if (std::isfinite(hit_t)) {
      const double perp = std::max(hit_t * cos_off, 1e-3);
      const auto idx = world.cell_index(mi, mj);
      const auto [top, bottom] = column_span(perp, world.height_grid[idx]);
      const Rgb wall = scale(world.color_grid[idx], wall_shade(perp, y_side));
      for (int r = 0; r < res.height; ++r) {
        const double yc = r + 0.5;
        if (yc >= top && yc <= bottom) img.set(c, r, wall);
      }
    }

    // Nearest distractor in front of the wall.
    double best_t = hit_t;
    const Distractor* best = nullptr;
    for (const Distractor& d : distractors) {
      const double x0 = d.x_m - d.half_size_m, x1 = d.x_m + d.half_size_m;
      const double y0 = d.y_m - d.half_size_m, y1 = d.y_m + d.half_size_m;
      double tmin = -std::numeric_limits<double>::infinity(), tmax = std::numeric_limits<double>::infinity();
      auto slab = [&](double o, double dir, double lo, double hi) {
        if (dir == 0.0) return o >= lo && o <= hi;
        double t0 = (lo - o) / dir, t1 = (hi - o) / dir;
        if (t0 > t1) std::swap(t0, t1);
        tmin = std::max(tmin, t0);
        tmax = std::min(tmax, t1);
        return true;
      };
      if (!slab(pose.x_m, dx, x0, x1) || !slab(pose.y_m, dy, y0, y1)) continue;
      if (tmin > tmax || tmin < 0.2 || tmin > kMaxRayM) continue;
      if (tmin < best_t) {
        best_t = tmin;
        best = &d;
      }
    }
    if (best != nullptr) {
      const double perp = std::max(best_t * cos_off, 1e-3);
      const auto [top, bottom] = column_span(perp, best->height_m);
      for (int r = 0; r < res.height; ++r) {
        const double yc = r + 0.5;
        if (yc >= top && yc <= bottom) img.set(c, r, best->color);
      }
    }
  }
  return img;
}

Image render_gmp(const World& world, double x_m, double y_m, double coverage_m, Resolution res) {
  if (res.width <= 0 || res.height <= 0) throw std::invalid_argument("render_gmp: resolution must be positive");
  Image img(res.width, res.height);
  const double sx = coverage_m / res.width, sy = coverage_m / res.height;
  for (int r = 0; r < res.height; ++r) {
    const double wy = y_m - (r - res.height / 2) * sy;
    for (int c = 0; c < res.width; ++c) {
      const double wx = x_m + (c - res.width / 2) * sx;
      img.set(c, r, world.color_at(wx, wy));
    }
  }
  return img;
}

Image world_image(const World& world) {
  Image img(world.cols, world.rows);
  for (int j = 0; j < world.rows; ++j) {
    for (int i = 0; i < world.cols; ++i) img.set(i, world.rows - 1 - j, world.color_grid[world.cell_index(i, j)]);
  }
  return img;
}

void export_world(const World& world, const std::filesystem::path& stem, const std::string& config_hash) {
  auto img_path = stem;
  img_path += ".ppm";
  auto meta_path = stem;
  meta_path += ".json";
  write_ppm(img_path, world_image(world), config_hash.empty() ? "" : "config_hash " + config_hash);
  const GeoBounds& b = world.spec.bounds;
  nlohmann::ordered_json meta = {
      {"seed", world.spec.seed},
      {"width_m", world.spec.width_m},
      {"height_m", world.spec.height_m},
      {"cell_size_m", world.spec.cell_size_m},
      {"cols", world.cols},
      {"rows", world.rows},
      {"bounds", {{"lat_min", b.lat_min()}, {"lat_max", b.lat_max()}, {"lon_min", b.lon_min()}, {"lon_max", b.lon_max()}}},
      {"occupied_fraction", world.occupied_fraction()},
  };
  if (!config_hash.empty()) meta["config_hash"] = config_hash;
  std::ofstream out(meta_path);
  if (!out) throw std::runtime_error("cannot write " + meta_path.string());
  out << meta.dump(2) << '\n';
}

void SensorNoiseSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("SensorNoiseSpec: " + m); };
  if (rtk_sigma_m < 0 || rtk_accuracy_mean_m < 0 || rtk_accuracy_spread_m < 0 || phone_sigma_m < 0 ||
      phone_outlier_sigma_m < 0) {
    fail("sigmas must be non-negative");
  }
  auto is_prob = [](double p) { return p >= 0.0 && p <= 1.0; };
  if (!is_prob(rtk_bad_fix_prob) || !is_prob(phone_outlier_prob)) fail("probabilities must lie in [0, 1]");
  if (rtk_accuracy_mean_m > 5.0) fail("rtk_accuracy_mean_m must not exceed the 5 m good-fix ceiling");
}

LocalizationTrace simulate_gps(const World& world, std::span<const AgentPose> truth, const SensorNoiseSpec& noise,
                               std::uint64_t seed) {
  noise.validate();
  Rng rng(mix_seed(seed, 4));
  LocalizationTrace trace;
  trace.entries.reserve(truth.size());
  for (const AgentPose& p : truth) {
    const double sigma = rng.bernoulli(noise.phone_outlier_prob) ? noise.phone_outlier_sigma_m : noise.phone_sigma_m;
    const double ex = rng.normal() * sigma;
    const double ey = rng.normal() * sigma;
    TraceEntry e;
    e.t_s = p.t_s;
    e.truth = world.to_geo(p.x_m, p.y_m);
    e.pred = world.to_geo(p.x_m + ex, p.y_m + ey);
    e.deviation_m = deviation_meters(e.pred, e.truth);
    trace.entries.push_back(e);
  }
  return trace;
}

std::vector<RtkFix> simulate_rtk(const World& world, std::span<const AgentPose> truth, const SensorNoiseSpec& noise,
                                 std::uint64_t seed) {
  noise.validate();
  Rng rng(mix_seed(seed, 5));
  std::vector<RtkFix> fixes;
  fixes.reserve(truth.size());
  for (const AgentPose& p : truth) {
    RtkFix f;
    f.t_s = p.t_s;
    f.truth = p;
    const double sigma = noise.rtk_sigma_m;
    if (rng.bernoulli(noise.rtk_bad_fix_prob)) {
      f.rtk_accuracy_m = rng.uniform(5.5, 30.0);
    } else {
      f.rtk_accuracy_m = std::clamp(noise.rtk_accuracy_mean_m + noise.rtk_accuracy_spread_m * rng.normal(), 0.0, 5.0);
    }
    const double ex = rng.normal() * sigma;
    const double ey = rng.normal() * sigma;
    f.coord = world.to_geo(p.x_m + ex, p.y_m + ey);
    fixes.push_back(f);
  }
  return fixes;
}

}  // namespace strm
