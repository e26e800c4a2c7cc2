#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "strm/eval.hpp"
#include "strm/infer.hpp"

using namespace strm;

namespace {

Image tiny(int seed) {
  Image img(8, 8);
  Rng rng(static_cast<std::uint64_t>(seed));
  for (auto& b : img.data) b = static_cast<std::uint8_t>(rng.below(256));
  return img;
}

}  // namespace

TEST_CASE("a 36 Hz feed is decimated to one frame per 360") {
  FrameBuffer buf(24, 10.0);
  const int n = 36 * 3600;
  std::vector<double> times;
  for (int i = 0; i < n; ++i) {
    if (buf.push(i / 36.0, Image{})) times.push_back(i / 36.0);
  }
  CHECK(times.size() >= n / 360);
  CHECK(times.size() <= n / 360 + 1);
  for (std::size_t k = 2; k < times.size(); ++k) CHECK(times[k] - times[k - 1] == doctest::Approx(10.0).epsilon(1e-3));
}

TEST_CASE("buffer keeps the latest frames at capacity") {
  FrameBuffer buf(24, 10.0);
  for (int i = 0; i < 30; ++i) REQUIRE(push_frame(buf, 10.0 * i, tiny(i)));
  CHECK(buf.size() == 24);
  CHECK(buf.full());
  CHECK(buf.entries().front().t_s == 60.0);
  CHECK(buf.entries().back().t_s == 290.0);
  CHECK(buf.entries().front().image == tiny(6));
}

TEST_CASE("frames must move forward in time") {
  FrameBuffer buf(4, 10.0);
  buf.push(100.0, Image{});
  CHECK_THROWS_AS(buf.push(99.0, Image{}), std::invalid_argument);
  CHECK_THROWS_AS(buf.push(100.0, Image{}), std::invalid_argument);
  CHECK_FALSE(buf.push(105.0, Image{}));  // not yet due
  CHECK(buf.push(109.5, Image{}));        // within tolerance of the slot
}

TEST_CASE("predict composes forward, last step and denormalize") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.seq_len = 5;
  const Model<float> model(cfg, 3);
  const GeoBounds bounds = fixture::campus_world().spec.bounds;
  FrameBuffer buf(5, 10.0);
  push_frame(buf, 0.0, tiny(0));
  CHECK_FALSE(predict(buf, model, bounds).has_value());
  push_frame(buf, 10.0, tiny(1));
  const auto two = predict(buf, model, bounds);
  REQUIRE(two.has_value());
  CHECK(two->warm_up);
  for (int i = 2; i < 5; ++i) push_frame(buf, 10.0 * i, tiny(i));
  const auto full = predict(buf, model, bounds);
  REQUIRE(full.has_value());
  CHECK_FALSE(full->warm_up);

  std::vector<const Image*> imgs;
  for (const auto& f : buf.entries()) imgs.push_back(&f.image);
  const auto out = model.forward(images_to_map<float>(imgs), 5, nullptr);
  const NormalizedCoordinate last{out.coords(0, 4), out.coords(1, 4)};
  const GeoCoordinate expected = denormalize(last, bounds);
  CHECK(full->coord.lat_deg == doctest::Approx(expected.lat_deg).epsilon(1e-12));
  CHECK(full->coord.lon_deg == doctest::Approx(expected.lon_deg).epsilon(1e-12));
}

TEST_CASE("nearest fix pairing") {
  const std::vector<TruthFix> fixes{{0.0, {}}, {1.0, {}}, {2.0, {}}, {5.0, {}}};
  CHECK(nearest_fix(fixes, 1.2, 0.5) == std::optional<std::size_t>{1});
  CHECK(nearest_fix(fixes, 1.5, 0.5) == std::optional<std::size_t>{1});  // tie goes to the earlier fix
  CHECK_FALSE(nearest_fix(fixes, 3.5, 0.5).has_value());
  CHECK_FALSE(nearest_fix({}, 1.0, 0.5).has_value());
}

TEST_CASE("stream with an oracle localizer") {
  const World& w = fixture::campus_world();
  DatasetParams p;
  p.fpp = {8, 8};
  SensorNoiseSpec noise;
  noise.rtk_sigma_m = 0.0;
  noise.rtk_bad_fix_prob = 0.0;
  const TestSession s = make_test_session(w, noise, p, 1200, 77);
  std::map<double, NormalizedCoordinate> truth_at;
  for (const AgentPose& pose : s.poses) truth_at[pose.t_s] = normalize(w.to_geo(pose.x_m, pose.y_m), w.spec.bounds);
  const Localizer oracle_model = [&](const std::deque<BufferedFrame>& buf) { return truth_at.at(buf.back().t_s); };
  const auto trace = run_stream(oracle_model, s.frames, s.truth, w.spec.bounds, StreamOptions{});
  REQUIRE(trace.size() > 100);
  for (const auto& e : trace.entries) CHECK(e.deviation_m < 0.01);
  CHECK(std::count_if(trace.entries.begin(), trace.entries.end(), [](const auto& e) { return e.warm_up; }) == 22);

  CHECK(run_stream(oracle_model, std::span<const BufferedFrame>{}, s.truth, w.spec.bounds, StreamOptions{}).empty());
}

TEST_CASE("constant-center localizer matches the direct geometric median") {
  const World& w = fixture::campus_world();
  DatasetParams p;
  p.fpp = {8, 8};
  SensorNoiseSpec noise;
  noise.rtk_sigma_m = 0.0;
  noise.rtk_bad_fix_prob = 0.0;
  const TestSession s = make_test_session(w, noise, p, 3600, 78);
  StreamOptions opts;
  const auto trace =
      run_stream([](const std::deque<BufferedFrame>&) { return NormalizedCoordinate{0.5, 0.5}; }, s.frames, s.truth,
                 w.spec.bounds, opts);
  std::vector<double> d;
  for (const auto& e : trace.entries) {
    if (e.warm_up) continue;
    const AgentPose& pose = s.poses.at(static_cast<std::size_t>(std::lround(e.t_s - s.poses.front().t_s)));
    REQUIRE(pose.t_s == e.t_s);
    d.push_back(deviation_meters(w.to_geo(pose.x_m, pose.y_m), w.spec.bounds.center()));
  }
  std::sort(d.begin(), d.end());
  CHECK(metric_deviations(trace).size() == d.size());
  const double direct = d[(d.size() - 1) / 2];
  CHECK(std::abs(median_deviation(trace) - direct) < 1e-6);
}

TEST_CASE("streaming prediction equals a batch forward on a full buffer") {
  ModelConfig cfg = ModelConfig::micro();
  cfg.seq_len = 24;
  const Model<float> model(cfg, 21);
  const World& w = fixture::campus_world();
  DatasetParams p;
  p.fpp = {8, 8};
  const TestSession s = make_test_session(w, SensorNoiseSpec{}, p, 900, 79);
  StreamOptions opts;
  const auto trace = run_stream(model, s.frames, s.truth, w.spec.bounds, opts);
  // Admission times: the first frame plus one per trace entry.
  std::vector<double> admitted{s.frames.front().t_s};
  for (const auto& e : trace.entries) admitted.push_back(e.t_s);
  int checked = 0;
  for (std::size_t a = 23; a < admitted.size(); ++a) {
    const TraceEntry& e = trace.entries[a - 1];
    REQUIRE_FALSE(e.warm_up);
    std::vector<const Image*> imgs;
    for (std::size_t k = a - 23; k <= a; ++k) {
      imgs.push_back(&s.frames.at(static_cast<std::size_t>(std::lround(admitted[k] - s.frames.front().t_s))).image);
    }
    const auto out = model.forward(images_to_map<float>(imgs), 24, nullptr);
    const auto batch = denormalize({out.coords(0, 23), out.coords(1, 23)}, w.spec.bounds);
    const auto nb = normalize(batch, w.spec.bounds), ns = normalize(e.pred, w.spec.bounds);
    CHECK(std::abs(nb.u - ns.u) <= 1e-6);
    CHECK(std::abs(nb.v - ns.v) <= 1e-6);
    ++checked;
  }
  CHECK(checked > 50);
  for (const auto& e : trace.entries) CHECK(e.inference_ms >= 0.0);
}

TEST_CASE("trace csv round trip keeps unpaired entries") {
  LocalizationTrace t;
  t.entries.push_back({10.0, {32.1, -117.1}, {32.2, -117.2}, 12.5, true, 0.75, true});
  t.entries.push_back({20.0, {32.3, -117.3}, {}, 0.0, false, 1.25, false});
  const auto path = std::filesystem::temp_directory_path() / "strm_trace_test.csv";
  write_trace_csv(path, t);
  const auto back = read_trace_csv(path);
  CHECK(back == t);
  std::filesystem::remove(path);
}
