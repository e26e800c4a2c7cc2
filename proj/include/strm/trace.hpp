#pragma once

#include <vector>

#include "strm/geo.hpp"

namespace strm {

struct TraceEntry {
  double t_s = 0.0;
  GeoCoordinate pred;
  GeoCoordinate truth;
  double deviation_m = 0.0;
  bool warm_up = false;
  double inference_ms = 0.0;
  // False when no truth fix fell inside the pairing window; such entries are
  // kept for inspection but ignored by the metrics.
  bool paired = true;

  bool operator==(const TraceEntry&) const = default;
};

/// Timestamped (prediction, truth, deviation) stream.
struct LocalizationTrace {
  std::vector<TraceEntry> entries;

  std::size_t size() const { return entries.size(); }
  bool empty() const { return entries.empty(); }

  bool operator==(const LocalizationTrace&) const = default;
};

/// Deviations that take part in metrics: paired entries, optionally including warm-up.
std::vector<double> metric_deviations(const LocalizationTrace& trace, bool include_warm_up = false);

}  // namespace strm
