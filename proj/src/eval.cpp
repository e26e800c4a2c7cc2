#include "strm/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace strm {

std::vector<double> metric_deviations(const LocalizationTrace& trace, bool include_warm_up) {
  std::vector<double> out;
  out.reserve(trace.entries.size());
  for (const TraceEntry& e : trace.entries) {
    if (!e.paired) continue;
    if (e.warm_up && !include_warm_up) continue;
    out.push_back(e.deviation_m);
  }
  return out;
}

LpcCurve lpc(std::span<const double> deviations, double max_threshold_m, int n_points) {
  if (deviations.empty()) throw std::invalid_argument("lpc: no deviations to evaluate");
  if (!(max_threshold_m > 0.0) || !std::isfinite(max_threshold_m)) {
    throw std::invalid_argument("lpc: max_threshold_m must be positive");
  }
  if (n_points < 2) throw std::invalid_argument("lpc: n_points must be >= 2");
  std::vector<double> sorted(deviations.begin(), deviations.end());
  std::sort(sorted.begin(), sorted.end());
  LpcCurve c;
  c.max_threshold_m = max_threshold_m;
  c.thresholds.resize(static_cast<std::size_t>(n_points));
  c.accuracy.resize(static_cast<std::size_t>(n_points));
  const auto n = static_cast<double>(sorted.size());
  for (int i = 0; i < n_points; ++i) {
    const double tau = max_threshold_m * static_cast<double>(i) / static_cast<double>(n_points - 1);
    const auto count = std::upper_bound(sorted.begin(), sorted.end(), tau) - sorted.begin();
    c.thresholds[static_cast<std::size_t>(i)] = tau;
    c.accuracy[static_cast<std::size_t>(i)] = static_cast<double>(count) / n;
  }
  c.auc = auc(c);
  return c;
}

LpcCurve lpc(const LocalizationTrace& trace, double max_threshold_m, int n_points, bool include_warm_up) {
  const auto d = metric_deviations(trace, include_warm_up);
  if (d.empty()) throw std::invalid_argument("lpc: trace has no entries after warm-up filtering");
  return lpc(d, max_threshold_m, n_points);
}

double auc(const LpcCurve& curve) {
  if (curve.thresholds.size() < 2 || curve.thresholds.size() != curve.accuracy.size()) {
    throw std::invalid_argument("auc: curve needs at least two matching points");
  }
  double area = 0.0;
  for (std::size_t i = 1; i < curve.thresholds.size(); ++i) {
    area += 0.5 * (curve.accuracy[i] + curve.accuracy[i - 1]) * (curve.thresholds[i] - curve.thresholds[i - 1]);
  }
  const double range = curve.thresholds.back() - curve.thresholds.front();
  return area / range;
}

double median_deviation(std::span<const double> deviations) {
  if (deviations.empty()) throw std::invalid_argument("median_deviation: no deviations");
  std::vector<double> v(deviations.begin(), deviations.end());
  const std::size_t k = (v.size() - 1) / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

double median_deviation(const LocalizationTrace& trace, bool include_warm_up) {
  return median_deviation(metric_deviations(trace, include_warm_up));
}

double default_max_threshold(const GeoBounds& bounds) { return 0.1 * diagonal_meters(bounds); }

ConfidenceBand confidence_band(std::span<const LocalizationTrace> traces, double max_threshold_m, int n_points,
                               bool include_warm_up) {
  if (traces.empty()) throw std::invalid_argument("confidence_band: no runs");
  ConfidenceBand b;
  for (const LocalizationTrace& t : traces) {
    const LpcCurve c = lpc(t, max_threshold_m, n_points, include_warm_up);
    if (b.thresholds.empty()) b.thresholds = c.thresholds;
    b.runs.push_back(c.accuracy);
    b.run_auc.push_back(c.auc);
    b.run_median.push_back(median_deviation(t, include_warm_up));
  }
  const std::size_t n = b.thresholds.size();
  b.min.assign(n, 0.0);
  b.mean.assign(n, 0.0);
  b.max.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double lo = b.runs[0][i], hi = b.runs[0][i], sum = 0.0;
    for (const auto& r : b.runs) {
      lo = std::min(lo, r[i]);
      hi = std::max(hi, r[i]);
      sum += r[i];
    }
    b.min[i] = lo;
    b.max[i] = hi;
    b.mean[i] = sum / static_cast<double>(b.runs.size());
  }
  b.mean_auc = std::accumulate(b.run_auc.begin(), b.run_auc.end(), 0.0) / static_cast<double>(b.run_auc.size());
  return b;
}

AblationTable compare_ablation(std::span<const LabeledTraces> results, double max_threshold_m, int n_points,
                               bool include_warm_up) {
  if (results.empty()) throw std::invalid_argument("compare_ablation: no results");
  AblationTable table;
  table.max_threshold_m = max_threshold_m;
  for (const auto& [label, traces] : results) {
    if (label.find(',') != std::string::npos) throw std::invalid_argument("compare_ablation: label contains a comma");
    const ConfidenceBand b = confidence_band(traces, max_threshold_m, n_points, include_warm_up);
    AblationRow r;
    r.label = label;
    r.seeds = static_cast<int>(traces.size());
    r.mean_auc = b.mean_auc;
    r.min_auc = *std::min_element(b.run_auc.begin(), b.run_auc.end());
    r.max_auc = *std::max_element(b.run_auc.begin(), b.run_auc.end());
    r.median_deviation_m =
        std::accumulate(b.run_median.begin(), b.run_median.end(), 0.0) / static_cast<double>(b.run_median.size());
    table.rows.push_back(r);
  }
  std::stable_sort(table.rows.begin(), table.rows.end(),
                   [](const AblationRow& a, const AblationRow& b) { return a.mean_auc > b.mean_auc; });
  table.references = reference_ablation_rows();
  return table;
}

std::vector<ReferenceBaseline> reference_baselines() {
  const std::string src = "external reference (threshold range unstated)";
  return {
      {"VAE-Transformer", "campus robot", 0.777, src},
      {"Phone GPS", "campus robot", 0.797, src},
      {"VIGOR-200", "campus robot", 0.295, src},
      {"TransGeo", "campus robot", 0.225, src},
  };
}

std::vector<AblationRow> reference_ablation_rows() {
  const std::string src = "external reference";
  auto row = [&](const char* label, double auc_value) {
    AblationRow r;
    r.label = label;
    r.seeds = 3;
    r.mean_auc = auc_value;
    r.min_auc = auc_value;
    r.max_auc = auc_value;
    r.median_deviation_m = std::nan("");
    r.source = src;
    return r;
  };
  return {row("transformer campus w/ recon", 0.777), row("transformer campus w/o recon", 0.794),
          row("transformer urban w/ recon", 0.652), row("transformer urban w/o recon", 0.564)};
}

void write_band_csv(const std::filesystem::path& path, const ConfidenceBand& band) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "threshold_m";
  for (std::size_t r = 0; r < band.runs.size(); ++r) out << ",run_" << r;
  out << ",mean,min,max\n";
  for (std::size_t i = 0; i < band.thresholds.size(); ++i) {
    out << band.thresholds[i];
    for (const auto& r : band.runs) out << ',' << r[i];
    out << ',' << band.mean[i] << ',' << band.min[i] << ',' << band.max[i] << '\n';
  }
}

void write_curve_csv(const std::filesystem::path& path, const LpcCurve& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "threshold_m,accuracy\n";
  for (std::size_t i = 0; i < curve.thresholds.size(); ++i) out << curve.thresholds[i] << ',' << curve.accuracy[i] << '\n';
}

namespace {

void write_rows(std::ostream& out, const std::vector<AblationRow>& rows) {
  for (const AblationRow& r : rows) {
    out << r.label << ',' << r.seeds << ',' << r.mean_auc << ',' << r.min_auc << ',' << r.max_auc << ','
        << r.median_deviation_m << ',' << r.source << '\n';
  }
}

double parse_double(const std::string& s) {
  if (s == "nan" || s == "-nan") return std::nan("");
  return std::stod(s);
}

}  // namespace

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.precision(17);
  out << "# max_threshold_m=" << table.max_threshold_m << '\n';
  out << "label,seeds,mean_auc,min_auc,max_auc,median_deviation_m,source\n";
  write_rows(out, table.rows);
  write_rows(out, table.references);
}

AblationTable read_ablation_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  AblationTable table;
  std::string line;
  std::getline(in, line);
  const std::string prefix = "# max_threshold_m=";
  if (line.rfind(prefix, 0) != 0) throw std::runtime_error("ablation csv: missing threshold line");
  table.max_threshold_m = std::stod(line.substr(prefix.size()));
  std::getline(in, line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw std::runtime_error("ablation csv: expected 7 fields in '" + line + "'");
    AblationRow r;
    r.label = f[0];
    r.seeds = std::stoi(f[1]);
    r.mean_auc = parse_double(f[2]);
    r.min_auc = parse_double(f[3]);
    r.max_auc = parse_double(f[4]);
    r.median_deviation_m = parse_double(f[5]);
    r.source = f[6];
    (r.source == "computed" ? table.rows : table.references).push_back(r);
  }
  return table;
}

}  // namespace strm
