#pragma once

// Small worlds and datasets shared by the tests.

#include "strm/datapipe.hpp"
#include "strm/model.hpp"

namespace strm::fixture {

inline const World& campus_world() {
  static const World w = generate_world(WorldSpec::campus(1));
  return w;
}

/// 8x8 images, 3-frame windows at stride 1: matches ModelConfig::micro().
inline Dataset micro_dataset(double duration_s = 600.0, std::uint64_t seed = 1) {
  DatasetParams p;
  p.fpp = {8, 8};
  p.gmp = {8, 8};
  p.gmp_coverage_m = 40.0;
  p.session_duration_s = duration_s;
  p.sequences.seq_len = 3;
  p.sequences.stride = 1;
  p.seed = seed;
  SensorNoiseSpec noise;
  noise.rtk_bad_fix_prob = 0.0;
  return build_dataset(campus_world(), noise, p);
}

}  // namespace strm::fixture
