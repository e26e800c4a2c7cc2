#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "strm/geo.hpp"
#include "strm/trace.hpp"

namespace strm {

struct LpcCurve {
  std::vector<double> thresholds;  // even grid over [0, max_threshold_m]
  std::vector<double> accuracy;    // fraction of deviations <= threshold
  double max_threshold_m = 0.0;
  double auc = 0.0;
};

/// Accuracy-vs-threshold curve over the given deviations.
LpcCurve lpc(std::span<const double> deviations, double max_threshold_m, int n_points = 200);
/// Same over a trace's metric deviations (paired, warm-up excluded unless requested).
LpcCurve lpc(const LocalizationTrace& trace, double max_threshold_m, int n_points = 200,
             bool include_warm_up = false);

/// Trapezoidal area under accuracy(threshold), divided by the threshold range.
double auc(const LpcCurve& curve);

/// Exact median; the lower of the two middle values when N is even.
double median_deviation(std::span<const double> deviations);
double median_deviation(const LocalizationTrace& trace, bool include_warm_up = false);

/// 10% of the bounds' diagonal.
double default_max_threshold(const GeoBounds& bounds);

struct ConfidenceBand {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> runs;  // accuracy per run
  std::vector<double> min, mean, max;
  std::vector<double> run_auc;
  double mean_auc = 0.0;
  std::vector<double> run_median;
};

/// Pointwise envelope and mean over runs on a shared grid.
ConfidenceBand confidence_band(std::span<const LocalizationTrace> traces, double max_threshold_m, int n_points = 200,
                               bool include_warm_up = false);

struct AblationRow {
  std::string label;
  int seeds = 0;
  double mean_auc = 0.0;
  double min_auc = 0.0;
  double max_auc = 0.0;
  /// Mean over seeds of each seed's median deviation.
  double median_deviation_m = 0.0;
  std::string source = "computed";

  bool operator==(const AblationRow&) const = default;
};

struct AblationTable {
  double max_threshold_m = 0.0;
  std::vector<AblationRow> rows;  // sorted by mean AUC, best first
  std::vector<AblationRow> references;

  bool operator==(const AblationTable&) const = default;
};

using LabeledTraces = std::pair<std::string, std::vector<LocalizationTrace>>;

AblationTable compare_ablation(std::span<const LabeledTraces> results, double max_threshold_m, int n_points = 200,
                               bool include_warm_up = false);

struct ReferenceBaseline {
  std::string name;
  std::string setting;
  double auc = 0.0;
  std::string source;
};

/// External AUC constants for annotation only; never compared against computed results.
std::vector<ReferenceBaseline> reference_baselines();

/// Reference rows (tagged) for the reconstruction ablation table.
std::vector<AblationRow> reference_ablation_rows();

/// threshold, run_0..run_k, mean, min, max
void write_band_csv(const std::filesystem::path& path, const ConfidenceBand& band);
/// threshold, accuracy
void write_curve_csv(const std::filesystem::path& path, const LpcCurve& curve);

/// label, seeds, mean_auc, min_auc, max_auc, median_deviation_m, source; plus a
/// leading comment line with the threshold range.
void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table);
AblationTable read_ablation_csv(const std::filesystem::path& path);

}  // namespace strm
