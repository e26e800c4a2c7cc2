#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "strm/datapipe.hpp"
#include "strm/model.hpp"
#include "strm/train.hpp"
#include "strm/worldsim.hpp"

namespace strm {

struct EvalParams {
  /// Upper end of the LPC grid; <= 0 selects 10% of the world diagonal.
  double max_threshold_m = 0.0;
  int lpc_points = 200;
  double test_duration_s = 3600.0;
  /// Seed of the held-out trajectory (same world, fresh path).
  std::uint64_t test_seed = 9001;
  bool include_warm_up = false;
  int min_frames = 2;
  double pairing_window_s = 0.5;
  double gap_tolerance_s = 1.0;

  void validate() const;
  bool operator==(const EvalParams&) const = default;
};

/// Everything a CLI command needs; reproducible from this document and the seeds.
struct RunConfig {
  std::string preset = "campus";
  WorldSpec world = WorldSpec::campus();
  SensorNoiseSpec noise;
  DatasetParams dataset;
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
  EvalParams eval;
  SearchSpace search;
  std::vector<std::uint64_t> seeds{1, 2, 3};
  std::string out_dir = "out";

  static RunConfig campus();
  static RunConfig urban();
  static RunConfig from_preset(const std::string& name);

  /// Validates every section; throws std::invalid_argument.
  void validate() const;
};

void to_json(nlohmann::ordered_json& j, const GeoBounds& b);
void from_json(const nlohmann::ordered_json& j, GeoBounds& b);
void to_json(nlohmann::ordered_json& j, const ModelConfig& c);
void from_json(const nlohmann::ordered_json& j, ModelConfig& c);
void to_json(nlohmann::ordered_json& j, const TrainConfig& c);
void from_json(const nlohmann::ordered_json& j, TrainConfig& c);
void to_json(nlohmann::ordered_json& j, const RunConfig& c);
/// Missing keys keep the values of the named preset ("preset" key, default campus).
void from_json(const nlohmann::ordered_json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& c);

/// 16 hex digits of FNV-1a over the canonical JSON text. The output directory
/// is left out so moving a run does not change its identity.
std::string config_hash(const RunConfig& c);
std::string fnv1a_hex(const std::string& text);

}  // namespace strm
