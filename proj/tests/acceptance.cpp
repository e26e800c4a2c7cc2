// Acceptance suite: one PASS/FAIL line per criterion. Desk-scale training runs
// are cached under the work directory by config hash and seed, so a rerun
// with unchanged code only repeats the evaluation.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "oracles.hpp"
#include "strm/pipeline.hpp"

using namespace strm;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
  bool gated = true;  // report-only criteria print their verdict but never fail the run
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

nn::Mat<double> random_mat(Rng& rng, Eigen::Index r, Eigen::Index c, double lo, double hi) {
  nn::Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

// --- 1 ---------------------------------------------------------------------------

Outcome loss_formulas() {
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto n = static_cast<Eigen::Index>(1 + rng.below(40));
    const auto px = static_cast<Eigen::Index>(1 + rng.below(64));
    const auto latent = static_cast<Eigen::Index>(1 + rng.below(16));
    const auto recon = random_mat(rng, 3, n * px, 0, 1), gmp = random_mat(rng, 3, n * px, 0, 1);
    const auto mu = random_mat(rng, latent, n, -3, 3), logvar = random_mat(rng, latent, n, -3, 3);
    const auto pred = random_mat(rng, 2, n, -0.5, 1.5), truth = random_mat(rng, 2, n, 0, 1);
    worst = std::max({worst, rel_err(recon_loss(recon, gmp), oracle::recon(recon, gmp)),
                      rel_err(kl_loss(mu, logvar), oracle::kl(mu, logvar)),
                      rel_err(kl_loss(mu, logvar, KlReduction::kMean), oracle::kl(mu, logvar) / latent),
                      rel_err(coord_loss(pred, truth), oracle::coord(pred, truth))});
  }
  bool beta_ok = true;
  for (long long horizon : {2LL, 10LL, 1000LL, 123456LL}) {
    beta_ok = beta_ok && beta_schedule(0, horizon) == 0.0 && beta_schedule(horizon / 2, horizon) == 0.5 &&
              beta_schedule(horizon, horizon) == 1.0;
  }
  return {worst < 1e-9 && beta_ok, fmt("worst relative error %.2e over 100 trials; beta {0, 0.5, 1} %s", worst,
                                       beta_ok ? "exact" : "MISMATCH")};
}

// --- 2 ---------------------------------------------------------------------------

Outcome gradient_check() {
  bool pass = true;
  std::string detail;
  for (Variant v : {Variant::kTransformer, Variant::kRnn}) {
    ModelConfig cfg = ModelConfig::micro();
    cfg.variant = v;
    Model<double> model(cfg, 5);
    const auto p = oracle::micro_problem(cfg, 2, 17);
    const auto s = oracle::gradient_check(model, p, 0.7);
    const double tight = static_cast<double>(s.within_tight) / static_cast<double>(s.params);
    pass = pass && tight >= 0.99 && s.worst < 1e-2;
    detail += fmt("%s: %zu params, %.2f%% < 1e-3, worst %.1e; ", to_string(v).c_str(), s.params, 100 * tight, s.worst);
  }
  detail.resize(detail.size() - 2);
  return {pass, detail};
}

// --- 3 ---------------------------------------------------------------------------

Outcome causality() {
  bool pass = true;
  double worst = 0.0, weakest = 1e300;
  for (Variant v : {Variant::kTransformer, Variant::kRnn}) {
    ModelConfig cfg = ModelConfig::micro();
    cfg.variant = v;
    cfg.seq_len = 24;
    const Model<double> model(cfg, 6);
    const auto p = oracle::micro_problem(cfg, 2, 19);
    for (int t : {1, 11, 23}) {
      const auto probe = oracle::causality_probe(model, p.frames, cfg.seq_len, t, 10, 100 + t);
      worst = std::max(worst, probe.max_past_change);
      weakest = std::min(weakest, probe.min_future_change);
      pass = pass && probe.max_past_change <= 1e-6 && probe.min_future_change > 0.0;
    }
  }
  return {pass, fmt("both variants, t in {1, 11, 23}, 10 perturbations: max earlier change %.1e, "
                    "smallest change at the perturbed step %.1e",
                    worst, weakest)};
}

// --- 4 ---------------------------------------------------------------------------

Outcome lpc_oracles() {
  Rng rng(404);
  bool counts = true, mono = true;
  double worst_auc = 0.0;
  for (int trace = 0; trace < 100; ++trace) {
    std::vector<double> d(1000);
    const double scale = rng.uniform(0.5, 40);
    for (double& x : d) x = trace % 3 == 0 ? std::round(rng.uniform(0, 3 * scale)) : std::abs(scale * rng.normal());
    const double max_t = rng.uniform(1, 4 * scale);
    const auto c = lpc(d, max_t);
    for (std::size_t i = 0; i < c.thresholds.size(); ++i) {
      counts = counts && c.accuracy[i] == static_cast<double>(oracle::count_within(d, c.thresholds[i])) / 1000.0;
      mono = mono && (i == 0 || c.accuracy[i] >= c.accuracy[i - 1]);
    }
    worst_auc = std::max(worst_auc, std::abs(c.auc - oracle::fine_grid_auc(d, max_t)));
  }
  return {counts && mono && worst_auc < 1e-3,
          fmt("100 traces of 1000: counts %s, monotone %s, worst |auc - fine grid| %.2e", counts ? "exact" : "DIFFER",
              mono ? "yes" : "NO", worst_auc)};
}

// --- 5 ---------------------------------------------------------------------------

Outcome exclusion_rule() {
  RunConfig cfg = RunConfig::campus();
  cfg.noise.rtk_bad_fix_prob = 0.2;
  cfg.dataset.sessions = 2;
  const World world = generate_world(cfg.world);
  PipelineStats stats;
  const Dataset ds = build_dataset(world, cfg.noise, cfg.dataset, &stats);
  std::size_t over = 0;
  for (const FrameRecord& r : ds.records) over += r.rtk_accuracy_m > 5.0 ? 1 : 0;
  return {over == 0 && stats.excluded > 0,
          fmt("bad-fix probability 0.2: %zu of %zu extracted frames excluded, %zu survivors above 5 m", stats.excluded,
              stats.extracted, over)};
}

// --- 6 ---------------------------------------------------------------------------

Outcome binary_round_trip() {
  const Dataset a = fixture::micro_dataset(900, 3);
  const auto bytes = serialize_dataset(a);
  const auto again = serialize_dataset(deserialize_dataset(bytes));
  const auto second_run = serialize_dataset(fixture::micro_dataset(900, 3));
  // The header is decoded here by hand as little-endian, independent of the host.
  std::uint32_t version = 0;
  for (int i = 0; i < 4; ++i) version |= static_cast<std::uint32_t>(bytes[8 + i]) << (8 * i);
  const bool pass = again == bytes && second_run == bytes && version == kDatasetVersion;
  return {pass, fmt("%zu bytes: write-read-write %s, second run %s, little-endian header version %u "
                    "(single host; byte order fixed in the format)",
                    bytes.size(), again == bytes ? "identical" : "DIFFERS", second_run == bytes ? "identical" : "DIFFERS",
                    version)};
}

// --- 7 ---------------------------------------------------------------------------

Outcome overfit() {
  ModelConfig mc = ModelConfig::micro();
  mc.latent_dim = 8;
  const Dataset ds = fixture::micro_dataset(600, 8);
  const auto all = dataset_windows(ds);
  std::vector<std::size_t> pick(8);
  for (std::size_t i = 0; i < 8; ++i) pick[i] = i * (all.size() / 8);
  auto run = [&](std::uint64_t seed, bool hold_beta) {
    TrainConfig tc;
    tc.learning_rate = 3e-3;
    tc.batch_size = 8;
    tc.max_epochs = 500;
    tc.max_steps = 500;
    tc.patience = 500;
    tc.seed = seed;
    tc.kl_reduction = KlReduction::kMean;
    if (hold_beta) tc.anneal_steps = 1'000'000'000;  // beta stays below 1e-6
    long long hit = -1;
    double best = 1e9;
    TrainHooks hooks;
    hooks.on_step = [&](long long step, const LossBreakdown& lb) {
      best = std::min(best, lb.coord);
      if (hit < 0 && lb.coord < 0.01) hit = step;
    };
    train_split(ds, all, pick, pick, mc, tc, hooks);
    return std::pair{hit, best};
  };
  int reached = 0;
  std::string detail, diagnostic;
  for (std::uint64_t seed : {1, 2, 3}) {
    const auto [hit, best] = run(seed, false);
    reached += hit >= 0 ? 1 : 0;
    detail += hit >= 0 ? fmt("seed %d at step %lld; ", static_cast<int>(seed), hit)
                       : fmt("seed %d best %.4f; ", static_cast<int>(seed), best);
    // Same run without the KL pressure, to show where the floor comes from.
    diagnostic += fmt("%.4f ", run(seed, true).second);
  }
  detail.resize(detail.size() - 2);
  diagnostic.pop_back();
  return {reached == 3, fmt("%d/3 seeds below 0.01 within 500 steps (%s); with beta held near 0 the best coord "
                            "losses are {%s}",
                            reached, detail.c_str(), diagnostic.c_str())};
}

// --- 8-11: desk-scale runs --------------------------------------------------------

struct DeskRun {
  std::uint64_t seed = 0;
  Model<float> model;
  LocalizationTrace trace;
  double median = 0.0;
  double auc = 0.0;
  bool cached = false;
};

struct DeskSet {
  std::vector<DeskRun> runs;
  double centroid_median = 0.0;
  double centroid_auc = 0.0;
  double diagonal = 0.0;
  double max_threshold = 0.0;
  double train_minutes = 0.0;
};

DeskSet desk_runs(const RunConfig& cfg, const ModelConfig& model, const fs::path& work, const std::string& tag) {
  const std::string hash = config_hash(cfg);
  const World world = generate_world(cfg.world);
  std::optional<Dataset> ds;
  const TestSession session = make_eval_session(world, cfg);
  const StreamOptions opts = stream_options(cfg, model);
  DeskSet set;
  set.max_threshold = eval_max_threshold(cfg);
  set.diagonal = diagonal_meters(world.spec.bounds);
  const auto centroid = centroid_baseline(session, world.spec.bounds, opts);
  set.centroid_median = median_deviation(centroid);
  set.centroid_auc = lpc(centroid, set.max_threshold).auc;
  for (std::uint64_t seed : cfg.seeds) {
    const fs::path dir = work / hash / (tag + "_seed" + std::to_string(seed));
    const fs::path ckpt = dir / "model.ckpt";
    DeskRun r;
    r.seed = seed;
    CheckpointInfo info;
    if (fs::exists(ckpt) && (load_checkpoint(ckpt, &info), info.config_hash == hash && info.config == model)) {
      r.model = load_checkpoint(ckpt);
      r.cached = true;
    } else {
      if (!ds) ds = build_dataset(world, cfg.noise, cfg.dataset);
      const auto t0 = std::chrono::steady_clock::now();
      r.model = train_and_save(*ds, model, cfg.train, seed, dir, hash).result.best;
      set.train_minutes += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60.0;
    }
    r.trace = run_stream(r.model, session.frames, session.truth, world.spec.bounds, opts);
    r.median = median_deviation(r.trace);
    r.auc = lpc(r.trace, set.max_threshold).auc;
    std::printf("  [%s seed %llu%s] median %.2f m, auc %.4f\n", tag.c_str(), static_cast<unsigned long long>(seed),
                r.cached ? ", cached" : "", r.median, r.auc);
    std::fflush(stdout);
    set.runs.push_back(std::move(r));
  }
  return set;
}

double mean_auc(const DeskSet& s) {
  double a = 0.0;
  for (const auto& r : s.runs) a += r.auc;
  return a / static_cast<double>(s.runs.size());
}

std::string auc_range(const DeskSet& s) {
  double lo = 1.0, hi = 0.0;
  for (const auto& r : s.runs) {
    lo = std::min(lo, r.auc);
    hi = std::max(hi, r.auc);
  }
  return fmt("%.4f [%.4f, %.4f]", mean_auc(s), lo, hi);
}

Outcome desk_learning(const DeskSet& t) {
  int good = 0;
  std::string medians;
  for (const auto& r : t.runs) {
    good += r.median < 0.1 * t.diagonal && r.median < 0.5 * t.centroid_median ? 1 : 0;
    medians += fmt("%.2f ", r.median);
  }
  medians.pop_back();
  return {good >= 2, fmt("%d/3 seeds pass; medians {%s} m vs. bound min(%.2f, %.2f) m "
                         "(10%% of the %.1f m diagonal, half the centroid median %.2f m)",
                         good, medians.c_str(), 0.1 * t.diagonal, 0.5 * t.centroid_median, t.diagonal,
                         t.centroid_median)};
}

Outcome architecture_trend(const DeskSet& t, const DeskSet& r) {
  return {mean_auc(t) >= mean_auc(r), fmt("mean auc transformer %s vs. rnn %s over 0-%.1f m", auc_range(t).c_str(),
                                          auc_range(r).c_str(), t.max_threshold)};
}

Outcome ablation(const DeskSet& with, const DeskSet& without) {
  std::vector<LabeledTraces> labeled(2);
  labeled[0].first = "w/ recon";
  labeled[1].first = "w/o recon";
  for (const auto& r : with.runs) labeled[0].second.push_back(r.trace);
  for (const auto& r : without.runs) labeled[1].second.push_back(r.trace);
  const AblationTable table = compare_ablation(labeled, with.max_threshold);
  const bool complete = table.rows.size() == 2 && table.rows[0].seeds == 3 && table.rows[1].seeds == 3;
  Outcome o{complete, fmt("table 2 labels x 3 seeds %s; w/ recon %s vs. w/o recon %s over 0-%.1f m; direction "
                          "(report only): recon %s no-recon",
                          complete ? "complete" : "INCOMPLETE", auc_range(with).c_str(), auc_range(without).c_str(),
                          with.max_threshold, mean_auc(with) >= mean_auc(without) ? ">=" : "<")};
  return o;
}

Outcome streaming(const RunConfig& cfg, const Model<float>& model) {
  const World world = generate_world(cfg.world);
  const TestSession s = make_test_session(world, cfg.noise, cfg.dataset, 900, 911);
  const StreamOptions opts = stream_options(cfg, model.config());
  const auto trace = run_stream(model, s.frames, s.truth, world.spec.bounds, opts);
  std::vector<double> admitted{s.frames.front().t_s};
  for (const auto& e : trace.entries) admitted.push_back(e.t_s);
  const std::size_t cap = opts.capacity;
  double worst = 0.0;
  int compared = 0;
  for (std::size_t a = cap - 1; a < admitted.size(); ++a) {
    std::vector<const Image*> imgs;
    for (std::size_t k = a + 1 - cap; k <= a; ++k) {
      imgs.push_back(&s.frames.at(static_cast<std::size_t>(std::lround(admitted[k] - s.frames.front().t_s))).image);
    }
    const auto out = model.forward(images_to_map<float>(imgs), static_cast<int>(cap), nullptr);
    const auto last = static_cast<Eigen::Index>(cap - 1);
    const auto streamed = normalize(trace.entries[a - 1].pred, world.spec.bounds);
    worst = std::max({worst, std::abs(out.coords(0, last) - streamed.u), std::abs(out.coords(1, last) - streamed.v)});
    ++compared;
  }
  const Throughput th = throughput(trace, opts.capacity, opts.min_frames);
  const bool pass = compared > 0 && worst <= 1e-6 && th.predictions_per_s >= 1.0;
  return {pass, fmt("%d full-buffer predictions, worst normalized difference %.1e; %.1f predictions/s "
                    "(%.1f ms each, encoder %.0f frames/s; gate 1, reference 10)",
                    compared, worst, th.predictions_per_s, th.mean_inference_ms, th.encoder_fps)};
}

// --- 12 --------------------------------------------------------------------------

Outcome gps_statistics() {
  const World& w = fixture::campus_world();
  DatasetParams p;
  p.fpp = {8, 8};
  SensorNoiseSpec noise;
  noise.phone_sigma_m = 3.0;
  noise.phone_outlier_prob = 0.0;
  const TestSession s = make_test_session(w, noise, p, 12000, 12);
  const auto gps = gps_baseline(w, s, noise, 12);
  const double m = median_deviation(gps);
  return {gps.size() >= 10000 && std::abs(m / 3.53 - 1) < 0.05,
          fmt("%zu fixes, median %.3f m (oracle 3.53 m, tolerance 5%%)", gps.size(), m)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  fs::path work = "acceptance_work";
  bool quick = false;
  std::vector<int> known;
  app.add_option("--work", work, "directory for desk-scale runs (reused across invocations)");
  app.add_flag("--quick", quick, "skip the desk-scale criteria 8-11");
  app.add_option("--known-failure", known, "criteria whose failure is documented and does not fail the run")
      ->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  int failed = 0;
  auto report = [&](int id, const char* name, const auto& run) {
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o = run();
    if (std::find(known.begin(), known.end(), id) != known.end()) o.gated = false;
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const char* verdict = o.pass ? "PASS" : (o.gated ? "FAIL" : "FAIL (not gating)");
    if (!o.pass && o.gated) ++failed;
    std::printf("criterion %2d %-4s %s: %s [%.1f s]\n", id, verdict, name, o.detail.c_str(), s);
    std::fflush(stdout);
  };
  auto skipped = [](int id, const char* name) { std::printf("criterion %2d SKIP %s: --quick\n", id, name); };

  report(1, "loss formulas", loss_formulas);
  report(2, "gradient check", gradient_check);
  report(3, "causality", causality);
  report(4, "lpc/auc oracles", lpc_oracles);
  report(5, "exclusion rule", exclusion_rule);
  report(6, "binary round trip", binary_round_trip);
  report(7, "overfit", overfit);

  if (quick) {
    skipped(8, "desk learning (campus)");
    skipped(9, "transformer vs. rnn");
    skipped(10, "reconstruction ablation (urban)");
    skipped(11, "streaming and throughput");
  } else {
    const RunConfig campus = RunConfig::campus();
    ModelConfig rnn = campus.model;
    rnn.variant = Variant::kRnn;
    const RunConfig urban = RunConfig::urban();
    ModelConfig no_recon = urban.model;
    no_recon.reconstruction_enabled = false;

    const DeskSet transformer = desk_runs(campus, campus.model, work, "transformer");
    report(8, "desk learning (campus)", [&] { return desk_learning(transformer); });
    const DeskSet rnn_set = desk_runs(campus, rnn, work, "rnn");
    report(9, "transformer vs. rnn", [&] { return architecture_trend(transformer, rnn_set); });
    const DeskSet with = desk_runs(urban, urban.model, work, "recon");
    const DeskSet without = desk_runs(urban, no_recon, work, "norecon");
    report(10, "reconstruction ablation (urban)", [&] { return ablation(with, without); });
    report(11, "streaming and throughput", [&] { return streaming(campus, transformer.runs.front().model); });
  }
  report(12, "simulated gps", gps_statistics);
  std::printf("%d gated criteria failed\n", failed);
  return failed == 0 ? 0 : 1;
}
