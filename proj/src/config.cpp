#include "strm/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace strm {

using json = nlohmann::ordered_json;

void EvalParams::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("EvalParams: " + m); };
  if (lpc_points < 2) fail("lpc_points must be >= 2");
  if (!(test_duration_s > 0.0)) fail("test_duration_s must be positive");
  if (min_frames < 1) fail("min_frames must be >= 1");
  if (!(pairing_window_s >= 0.0)) fail("pairing_window_s must be non-negative");
  if (!(gap_tolerance_s >= 0.0)) fail("gap_tolerance_s must be non-negative");
}

namespace {

// Shared by both experiment presets. Summed KL collapses the posterior at this
// scale, so the KL term is averaged over latent dimensions here.
void desk_training(TrainConfig& t) {
  t.learning_rate = 1e-3;
  t.max_epochs = 20;
  t.kl_reduction = KlReduction::kMean;
}

}  // namespace

RunConfig RunConfig::campus() {
  RunConfig c;
  c.preset = "campus";
  c.world = WorldSpec::campus();
  c.dataset.speed_mps = kCampusSpeedMps;
  c.dataset.gmp_coverage_m = 40.0;
  c.dataset.session_duration_s = 3600.0;
  c.dataset.sessions = 60;
  c.dataset.sequences.stride = 4;
  desk_training(c.train);
  return c;
}

RunConfig RunConfig::urban() {
  RunConfig c;
  c.preset = "urban";
  c.world = WorldSpec::urban();
  c.dataset.speed_mps = kUrbanSpeedMps;
  c.dataset.gmp_coverage_m = 120.0;
  c.dataset.session_duration_s = 3600.0;
  c.dataset.sessions = 60;
  c.dataset.sequences.stride = 4;
  desk_training(c.train);
  return c;
}

RunConfig RunConfig::from_preset(const std::string& name) {
  if (name == "campus") return campus();
  if (name == "urban") return urban();
  throw std::invalid_argument("unknown preset '" + name + "' (expected campus or urban)");
}

void RunConfig::validate() const {
  world.validate();
  noise.validate();
  dataset.validate();
  model.validate();
  train.validate();
  eval.validate();
  if (seeds.empty()) throw std::invalid_argument("RunConfig: seeds must not be empty");
  if (out_dir.empty()) throw std::invalid_argument("RunConfig: out_dir must not be empty");
  if (static_cast<int>(dataset.sequences.seq_len) != model.seq_len) {
    throw std::invalid_argument("RunConfig: dataset seq_len must equal model seq_len");
  }
  if (dataset.fpp != model.fpp || dataset.gmp != model.gmp) {
    throw std::invalid_argument("RunConfig: dataset and model resolutions differ");
  }
}

// --- JSON ---------------------------------------------------------------------

void to_json(json& j, const GeoBounds& b) {
  j = json{{"lat_min", b.lat_min()}, {"lat_max", b.lat_max()}, {"lon_min", b.lon_min()}, {"lon_max", b.lon_max()}};
}

void from_json(const json& j, GeoBounds& b) {
  b = GeoBounds(j.at("lat_min").get<double>(), j.at("lat_max").get<double>(), j.at("lon_min").get<double>(),
                j.at("lon_max").get<double>());
}

namespace {

json resolution_json(const Resolution& r) { return json{{"width", r.width}, {"height", r.height}}; }

Resolution resolution_from(const json& j, Resolution fallback) {
  return {j.value("width", fallback.width), j.value("height", fallback.height)};
}

template <typename T>
void take(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

std::string kl_name(KlReduction r) { return r == KlReduction::kMean ? "mean" : "sum"; }

KlReduction kl_from(const std::string& s) {
  if (s == "sum") return KlReduction::kSum;
  if (s == "mean") return KlReduction::kMean;
  throw std::invalid_argument("unknown kl_reduction '" + s + "' (expected sum or mean)");
}

json world_json(const WorldSpec& w) {
  return json{{"seed", w.seed},
              {"width_m", w.width_m},
              {"height_m", w.height_m},
              {"bounds", w.bounds},
              {"cell_size_m", w.cell_size_m},
              {"building_density", w.building_density},
              {"palette_size", w.palette_size},
              {"path_waypoint_count", w.path_waypoint_count},
              {"distractor_count", w.distractor_count},
              {"corridor_width_m", w.corridor_width_m},
              {"building_min_m", w.building_min_m},
              {"building_max_m", w.building_max_m}};
}

void world_from(const json& j, WorldSpec& w) {
  const GeoCoordinate origin{w.bounds.lat_min(), w.bounds.lon_min()};
  take(j, "seed", w.seed);
  take(j, "width_m", w.width_m);
  take(j, "height_m", w.height_m);
  if (j.contains("bounds")) {
    w.bounds = j.at("bounds").get<GeoBounds>();
  } else if (j.contains("width_m") || j.contains("height_m")) {
    // Keep the preset's south-west corner and follow the new extent.
    w.bounds = bounds_from_extent(origin, w.width_m, w.height_m);
  }
  take(j, "cell_size_m", w.cell_size_m);
  take(j, "building_density", w.building_density);
  take(j, "palette_size", w.palette_size);
  take(j, "path_waypoint_count", w.path_waypoint_count);
  take(j, "distractor_count", w.distractor_count);
  take(j, "corridor_width_m", w.corridor_width_m);
  take(j, "building_min_m", w.building_min_m);
  take(j, "building_max_m", w.building_max_m);
}

json noise_json(const SensorNoiseSpec& n) {
  return json{{"rtk_sigma_m", n.rtk_sigma_m},
              {"rtk_accuracy_mean_m", n.rtk_accuracy_mean_m},
              {"rtk_accuracy_spread_m", n.rtk_accuracy_spread_m},
              {"rtk_bad_fix_prob", n.rtk_bad_fix_prob},
              {"phone_sigma_m", n.phone_sigma_m},
              {"phone_outlier_prob", n.phone_outlier_prob},
              {"phone_outlier_sigma_m", n.phone_outlier_sigma_m}};
}

void noise_from(const json& j, SensorNoiseSpec& n) {
  take(j, "rtk_sigma_m", n.rtk_sigma_m);
  take(j, "rtk_accuracy_mean_m", n.rtk_accuracy_mean_m);
  take(j, "rtk_accuracy_spread_m", n.rtk_accuracy_spread_m);
  take(j, "rtk_bad_fix_prob", n.rtk_bad_fix_prob);
  take(j, "phone_sigma_m", n.phone_sigma_m);
  take(j, "phone_outlier_prob", n.phone_outlier_prob);
  take(j, "phone_outlier_sigma_m", n.phone_outlier_sigma_m);
}

json dataset_json(const DatasetParams& d) {
  return json{{"fpp", resolution_json(d.fpp)},
              {"gmp", resolution_json(d.gmp)},
              {"gmp_coverage_m", d.gmp_coverage_m},
              {"speed_mps", d.speed_mps},
              {"session_duration_s", d.session_duration_s},
              {"sessions", d.sessions},
              {"seq_len", d.sequences.seq_len},
              {"frame_interval_s", d.sequences.frame_interval_s},
              {"gap_tolerance_s", d.sequences.gap_tolerance_s},
              {"stride", d.sequences.stride},
              {"max_accuracy_m", d.max_accuracy_m},
              {"seed", d.seed}};
}

void dataset_from(const json& j, DatasetParams& d) {
  if (j.contains("fpp")) d.fpp = resolution_from(j.at("fpp"), d.fpp);
  if (j.contains("gmp")) d.gmp = resolution_from(j.at("gmp"), d.gmp);
  take(j, "gmp_coverage_m", d.gmp_coverage_m);
  take(j, "speed_mps", d.speed_mps);
  take(j, "session_duration_s", d.session_duration_s);
  take(j, "sessions", d.sessions);
  take(j, "seq_len", d.sequences.seq_len);
  take(j, "frame_interval_s", d.sequences.frame_interval_s);
  take(j, "gap_tolerance_s", d.sequences.gap_tolerance_s);
  take(j, "stride", d.sequences.stride);
  take(j, "max_accuracy_m", d.max_accuracy_m);
  take(j, "seed", d.seed);
}

json eval_json(const EvalParams& e) {
  return json{{"max_threshold_m", e.max_threshold_m}, {"lpc_points", e.lpc_points},
              {"test_duration_s", e.test_duration_s}, {"test_seed", e.test_seed},
              {"include_warm_up", e.include_warm_up}, {"min_frames", e.min_frames},
              {"pairing_window_s", e.pairing_window_s}, {"gap_tolerance_s", e.gap_tolerance_s}};
}

void eval_from(const json& j, EvalParams& e) {
  take(j, "max_threshold_m", e.max_threshold_m);
  take(j, "lpc_points", e.lpc_points);
  take(j, "test_duration_s", e.test_duration_s);
  take(j, "test_seed", e.test_seed);
  take(j, "include_warm_up", e.include_warm_up);
  take(j, "min_frames", e.min_frames);
  take(j, "pairing_window_s", e.pairing_window_s);
  take(j, "gap_tolerance_s", e.gap_tolerance_s);
}

json search_json(const SearchSpace& s) {
  return json{{"learning_rates", s.learning_rates}, {"seq_lens", s.seq_lens},   {"frame_steps", s.frame_steps},
              {"latent_dims", s.latent_dims},       {"d_models", s.d_models},   {"n_heads", s.n_heads},
              {"n_layers", s.n_layers}};
}

void search_from(const json& j, SearchSpace& s) {
  take(j, "learning_rates", s.learning_rates);
  take(j, "seq_lens", s.seq_lens);
  take(j, "frame_steps", s.frame_steps);
  take(j, "latent_dims", s.latent_dims);
  take(j, "d_models", s.d_models);
  take(j, "n_heads", s.n_heads);
  take(j, "n_layers", s.n_layers);
}

}  // namespace

void to_json(json& j, const ModelConfig& c) {
  j = json{{"variant", to_string(c.variant)},
           {"enc_channels", c.enc_channels},
           {"enc_kernel", c.enc_kernel},
           {"dec_channels", c.dec_channels},
           {"dec_kernel", c.dec_kernel},
           {"latent_dim", c.latent_dim},
           {"d_model", c.d_model},
           {"n_heads", c.n_heads},
           {"n_layers", c.n_layers},
           {"ffn_mult", c.ffn_mult},
           {"rnn_hidden", c.rnn_hidden},
           {"coord_hidden", c.coord_hidden},
           {"seq_len", c.seq_len},
           {"fpp", resolution_json(c.fpp)},
           {"gmp", resolution_json(c.gmp)},
           {"reconstruction_enabled", c.reconstruction_enabled}};
}

void from_json(const json& j, ModelConfig& c) {
  if (j.contains("variant")) c.variant = variant_from_string(j.at("variant").get<std::string>());
  take(j, "enc_channels", c.enc_channels);
  take(j, "enc_kernel", c.enc_kernel);
  take(j, "dec_channels", c.dec_channels);
  take(j, "dec_kernel", c.dec_kernel);
  take(j, "latent_dim", c.latent_dim);
  take(j, "d_model", c.d_model);
  take(j, "n_heads", c.n_heads);
  take(j, "n_layers", c.n_layers);
  take(j, "ffn_mult", c.ffn_mult);
  take(j, "rnn_hidden", c.rnn_hidden);
  take(j, "coord_hidden", c.coord_hidden);
  take(j, "seq_len", c.seq_len);
  if (j.contains("fpp")) c.fpp = resolution_from(j.at("fpp"), c.fpp);
  if (j.contains("gmp")) c.gmp = resolution_from(j.at("gmp"), c.gmp);
  take(j, "reconstruction_enabled", c.reconstruction_enabled);
}

void to_json(json& j, const TrainConfig& c) {
  j = json{{"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
           {"max_epochs", c.max_epochs},       {"anneal_steps", c.anneal_steps},
           {"patience", c.patience},           {"val_fraction", c.val_fraction},
           {"seed", c.seed},                   {"adam_beta1", c.adam_beta1},
           {"adam_beta2", c.adam_beta2},       {"adam_eps", c.adam_eps},
           {"grad_clip", c.grad_clip},         {"max_steps", c.max_steps},
           {"kl_reduction", kl_name(c.kl_reduction)}};
}

void from_json(const json& j, TrainConfig& c) {
  take(j, "learning_rate", c.learning_rate);
  take(j, "batch_size", c.batch_size);
  take(j, "max_epochs", c.max_epochs);
  take(j, "anneal_steps", c.anneal_steps);
  take(j, "patience", c.patience);
  take(j, "val_fraction", c.val_fraction);
  take(j, "seed", c.seed);
  take(j, "adam_beta1", c.adam_beta1);
  take(j, "adam_beta2", c.adam_beta2);
  take(j, "adam_eps", c.adam_eps);
  take(j, "grad_clip", c.grad_clip);
  take(j, "max_steps", c.max_steps);
  if (j.contains("kl_reduction")) c.kl_reduction = kl_from(j.at("kl_reduction").get<std::string>());
}

void to_json(json& j, const RunConfig& c) {
  j = json{{"preset", c.preset},
           {"world", world_json(c.world)},
           {"noise", noise_json(c.noise)},
           {"dataset", dataset_json(c.dataset)},
           {"model", c.model},
           {"train", c.train},
           {"eval", eval_json(c.eval)},
           {"search", search_json(c.search)},
           {"seeds", c.seeds},
           {"out_dir", c.out_dir}};
}

void from_json(const json& j, RunConfig& c) {
  c = RunConfig::from_preset(j.value("preset", std::string("campus")));
  if (j.contains("world")) world_from(j.at("world"), c.world);
  if (j.contains("noise")) noise_from(j.at("noise"), c.noise);
  if (j.contains("dataset")) dataset_from(j.at("dataset"), c.dataset);
  if (j.contains("model")) from_json(j.at("model"), c.model);
  if (j.contains("train")) from_json(j.at("train"), c.train);
  if (j.contains("eval")) eval_from(j.at("eval"), c.eval);
  if (j.contains("search")) search_from(j.at("search"), c.search);
  take(j, "seeds", c.seeds);
  take(j, "out_dir", c.out_dir);
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  RunConfig c;
  try {
    from_json(j, c);
  } catch (const json::exception& e) {
    throw std::invalid_argument("config " + path.string() + ": " + e.what());
  }
  return c;
}

void save_run_config(const std::filesystem::path& path, const RunConfig& c) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << json(c).dump(2) << '\n';
}

std::string fnv1a_hex(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string config_hash(const RunConfig& c) {
  json j = c;
  j.erase("out_dir");
  return fnv1a_hex(j.dump());
}

}  // namespace strm
