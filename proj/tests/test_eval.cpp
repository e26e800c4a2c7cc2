#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <stdexcept>

#include "strm/eval.hpp"
#include "strm/rng.hpp"

using namespace strm;

namespace {

LocalizationTrace trace_of(const std::vector<double>& deviations) {
  LocalizationTrace t;
  double time = 0;
  for (double d : deviations) t.entries.push_back({time += 10, {}, {}, d, false, 0.0, true});
  return t;
}

std::vector<double> rayleigh(std::size_t n, double sigma, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> d(n);
  for (double& x : d) x = std::hypot(sigma * rng.normal(), sigma * rng.normal());
  return d;
}

}  // namespace

TEST_CASE("lpc examples") {
  const std::vector<double> zeros(5, 0.0);
  for (double a : lpc(zeros, 10).accuracy) CHECK(a == 1.0);
  const std::vector<double> far{11, 12, 30};
  for (double a : lpc(far, 10).accuracy) CHECK(a == 0.0);

  const std::vector<double> three{0, 10, 20};
  const auto c = lpc(three, 20, 3);
  REQUIRE(c.thresholds == std::vector<double>{0, 10, 20});
  CHECK(c.accuracy[1] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  CHECK_THROWS_AS(lpc(std::vector<double>{}, 10), std::invalid_argument);
  CHECK_THROWS_AS(lpc(LocalizationTrace{}, 10), std::invalid_argument);
}

TEST_CASE("warm-up and unpaired entries stay out of metrics") {
  LocalizationTrace t = trace_of({1, 2, 3, 100});
  t.entries[3].warm_up = true;
  t.entries[0].paired = false;
  CHECK(metric_deviations(t) == std::vector<double>{2, 3});
  CHECK(metric_deviations(t, true) == std::vector<double>{2, 3, 100});
  CHECK(median_deviation(t) == 2);
  CHECK(lpc(t, 10).accuracy.back() == 1.0);
  CHECK(lpc(t, 10, 200, true).accuracy.back() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("auc of constant curves") {
  CHECK(lpc(std::vector<double>(4, 0.0), 7).auc == 1.0);
  CHECK(lpc(std::vector<double>(4, 8.0), 7).auc == 0.0);
  const LpcCurve manual{{0, 1, 2}, {0.5, 0.5, 1.0}, 2, 0};
  CHECK(auc(manual) == doctest::Approx(0.625));
}

TEST_CASE("auc agrees with a fine-grid integration") {
  const auto d = rayleigh(1000, 3.0, 17);
  auto sorted = d;
  std::sort(sorted.begin(), sorted.end());
  const double max_t = 10.0;
  const int fine = 100000;
  double area = 0;
  for (int i = 0; i < fine; ++i) {
    const double tau = max_t * (i + 0.5) / fine;
    area += static_cast<double>(std::upper_bound(sorted.begin(), sorted.end(), tau) - sorted.begin()) / 1000.0;
  }
  CHECK(std::abs(lpc(d, max_t).auc - area / fine) < 1e-3);
}

TEST_CASE("lpc is monotone, bounded and matches a counting oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t n = 1 + rng.below(10000);
    std::vector<double> d(n);
    for (double& x : d) x = trial % 2 ? rng.uniform(0, 50) : std::floor(rng.uniform(0, 40));  // ties on grid points
    const auto c = lpc(d, 40.0);
    CHECK(c.auc >= 0.0);
    CHECK(c.auc <= 1.0);
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
      if (i > 0) CHECK(c.accuracy[i] >= c.accuracy[i - 1]);
      const auto count = std::count_if(d.begin(), d.end(), [&](double x) { return x <= c.thresholds[i]; });
      CHECK(c.accuracy[i] == static_cast<double>(count) / static_cast<double>(n));
    }
  }
}

TEST_CASE("lpc is scale covariant") {
  const auto d = rayleigh(500, 4.0, 23);
  const auto base = lpc(d, 12.0);
  for (double k : {0.5, 3.0, 1000.0}) {
    std::vector<double> scaled(d);
    for (double& x : scaled) x *= k;
    const auto c = lpc(scaled, 12.0 * k);
    CHECK(c.auc == doctest::Approx(base.auc).epsilon(1e-12));
    CHECK(c.accuracy == base.accuracy);
  }
}

TEST_CASE("median deviation") {
  CHECK(median_deviation(std::vector<double>{3, 1, 2}) == 2);
  CHECK(median_deviation(std::vector<double>{4, 1, 3, 2}) == 2);  // lower middle
  CHECK(median_deviation(std::vector<double>(7, 2.5)) == 2.5);
  CHECK_THROWS_AS(median_deviation(std::vector<double>{}), std::invalid_argument);
  // Rayleigh median sigma * sqrt(2 ln 2).
  const double m = median_deviation(rayleigh(10000, 3.0, 31));
  CHECK(std::abs(m / 3.53 - 1) < 0.05);
}

TEST_CASE("confidence band examples") {
  const auto a = trace_of(rayleigh(300, 3.0, 1));
  const std::vector<LocalizationTrace> same{a, a, a};
  const auto flat = confidence_band(same, 10);
  CHECK(flat.min == flat.max);
  for (std::size_t i = 0; i < flat.mean.size(); ++i) CHECK(flat.mean[i] == doctest::Approx(flat.max[i]).epsilon(1e-15));

  // b dominates a pointwise: every deviation halved.
  LocalizationTrace b = a;
  for (auto& e : b.entries) e.deviation_m /= 2;
  const std::vector<LocalizationTrace> pair{a, b};
  const auto band = confidence_band(pair, 10);
  CHECK(band.min == lpc(a, 10).accuracy);
  CHECK(band.max == lpc(b, 10).accuracy);

  const std::vector<LocalizationTrace> runs{a, b, trace_of(rayleigh(200, 5.0, 2))};
  const auto three = confidence_band(runs, 10);
  REQUIRE(three.run_auc.size() == 3);
  const double mean = (three.run_auc[0] + three.run_auc[1] + three.run_auc[2]) / 3;
  CHECK(std::abs(three.mean_auc - mean) < 1e-9);
  CHECK(three.run_median[1] == median_deviation(b));
}

TEST_CASE("compare_ablation ranks by mean auc") {
  const auto a = trace_of(rayleigh(300, 2.0, 5));
  const auto b = trace_of(rayleigh(300, 6.0, 6));
  const std::vector<LabeledTraces> results{{"B", {b, b}}, {"A", {a}}};
  const auto table = compare_ablation(results, 10);
  REQUIRE(table.rows.size() == 2);
  CHECK(table.rows[0].label == "A");
  CHECK(table.rows[0].seeds == 1);
  CHECK(table.rows[0].min_auc == table.rows[0].max_auc);
  CHECK(table.rows[0].mean_auc == table.rows[0].min_auc);
  CHECK(table.rows[1].median_deviation_m == median_deviation(b));
  for (const auto& r : table.rows) CHECK(r.source == "computed");
  CHECK(table.max_threshold_m == 10);
}

TEST_CASE("ablation csv round trip") {
  const std::vector<LabeledTraces> results{{"w/ recon", {trace_of(rayleigh(100, 2.0, 7)), trace_of(rayleigh(90, 2.5, 8))}},
                                           {"w/o recon", {trace_of(rayleigh(120, 3.0, 9))}}};
  const auto table = compare_ablation(results, 23.3);
  const auto path = std::filesystem::temp_directory_path() / "strm_ablation_test.csv";
  write_ablation_csv(path, table);
  const auto back = read_ablation_csv(path);
  std::filesystem::remove(path);
  CHECK(back.rows == table.rows);
  CHECK(back.max_threshold_m == table.max_threshold_m);
  REQUIRE(back.references.size() == table.references.size());
  for (std::size_t i = 0; i < back.references.size(); ++i) {
    CHECK(back.references[i].label == table.references[i].label);
    CHECK(back.references[i].mean_auc == table.references[i].mean_auc);
    CHECK(back.references[i].source != "computed");
  }
}

TEST_CASE("external reference constants are tagged") {
  const auto refs = reference_baselines();
  auto find = [&](const std::string& name) {
    const auto it = std::find_if(refs.begin(), refs.end(), [&](const auto& r) { return r.name == name; });
    REQUIRE(it != refs.end());
    return it->auc;
  };
  CHECK(find("VIGOR-200") == 0.295);
  CHECK(find("TransGeo") == 0.225);
  CHECK(find("VAE-Transformer") == 0.777);
  CHECK(find("Phone GPS") == 0.797);
  for (const auto& r : refs) CHECK(r.source.find("external reference") != std::string::npos);

  const auto rows = reference_ablation_rows();
  CHECK(std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.mean_auc == 0.564; }));
  CHECK(std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.mean_auc == 0.652; }));
  for (const auto& r : rows) CHECK(r.source != "computed");
}

TEST_CASE("default threshold is a tenth of the diagonal") {
  const GeoBounds b = bounds_from_extent({32.7, -117.2}, 300, 400);
  CHECK(default_max_threshold(b) == doctest::Approx(50).epsilon(1e-3));
}
