#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "strm/config.hpp"

using namespace strm;
using json = nlohmann::ordered_json;

TEST_CASE("run config json round trip") {
  for (const RunConfig& c : {RunConfig::campus(), RunConfig::urban()}) {
    const json j = c;
    const RunConfig back = j.get<RunConfig>();
    CHECK(json(back) == j);
    CHECK(config_hash(back) == config_hash(c));
    CHECK_NOTHROW(back.validate());
  }
}

TEST_CASE("presets differ where they should") {
  const RunConfig c = RunConfig::campus(), u = RunConfig::urban();
  CHECK(c.world.width_m == 200);
  CHECK(c.world.height_m == 120);
  CHECK(c.dataset.speed_mps == doctest::Approx(0.66));
  CHECK(u.world.distractor_count > 0);
  CHECK(config_hash(c) != config_hash(u));
  CHECK_THROWS_AS(RunConfig::from_preset("moon"), std::invalid_argument);
}

TEST_CASE("config hash follows content") {
  RunConfig c = RunConfig::campus();
  const std::string h = config_hash(c);
  CHECK(h.size() == 16);
  CHECK(config_hash(RunConfig::campus()) == h);
  c.out_dir = "elsewhere";
  CHECK(config_hash(c) == h);
  c.train.learning_rate *= 2;
  CHECK(config_hash(c) != h);
  CHECK(fnv1a_hex("") == "cbf29ce484222325");
  CHECK(fnv1a_hex("a") == "af63dc4c8601ec8c");
}

TEST_CASE("partial documents fill in from the preset") {
  const auto path = std::filesystem::temp_directory_path() / "strm_partial_config.json";
  {
    std::ofstream(path) << R"({"preset": "urban", "seeds": [4, 5], "train": {"max_epochs": 7}})";
  }
  const RunConfig c = load_run_config(path);
  CHECK(c.preset == "urban");
  CHECK(c.seeds == std::vector<std::uint64_t>{4, 5});
  CHECK(c.train.max_epochs == 7);
  CHECK(c.world == RunConfig::urban().world);

  std::ofstream(path) << R"({"train": {"kl_reduction": "median"}})";
  CHECK_THROWS_AS(load_run_config(path), std::invalid_argument);
  std::ofstream(path) << "{ not json";
  CHECK_THROWS_AS(load_run_config(path), std::invalid_argument);
  std::filesystem::remove(path);
}

TEST_CASE("validation rejects inconsistent documents") {
  RunConfig c = RunConfig::campus();
  c.seeds.clear();
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = RunConfig::campus();
  c.model.seq_len = 12;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = RunConfig::campus();
  c.model.fpp = {32, 32};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = RunConfig::campus();
  c.world.building_density = 1.5;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);

  c = RunConfig::campus();
  c.train.learning_rate = -1;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}
