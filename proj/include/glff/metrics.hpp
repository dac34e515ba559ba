#pragma once

#include <filesystem>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "glff/detector.hpp"
#include "glff/manifest.hpp"

namespace glff {

/// Mann-Whitney statistic: P(pos > neg) with half credit for ties.
double auc(std::span<const double> pos, std::span<const double> neg);

/// Fraction of samples with (score >= threshold) == (label == 1).
double overall_accuracy(std::span<const double> scores, std::span<const int> labels,
                        double threshold = 0.5);

struct RocPoint {
  double fpr = 0.0;
  double tpr = 0.0;
  double threshold = std::numeric_limits<double>::infinity();
};

/// Staircase from (0,0) (threshold +inf) through one point per distinct
/// score, descending, ending at (1,1). A sample is called fake when
/// score >= threshold.
std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels);
/// Trapezoidal area under a ROC curve.
double roc_area(std::span<const RocPoint> curve);

struct ScoreEntry {
  std::string sample_id;
  double fake_probability = 0.0;
  int label = 0;
  std::string generator;
  Protocol protocol = Protocol::unprocessed;
};
using ScoreSet = std::vector<ScoreEntry>;

struct MetricsRow {
  std::string protocol;
  std::string generator;  // "__avg__" for averages
  std::size_t n_pos = 0;
  std::size_t n_neg = 0;
  double oa = 0.0;
  double auc = 0.0;
};

struct CellCurve {
  std::string protocol;
  std::string generator;
  std::vector<RocPoint> curve;
};

/// Per-(protocol, generator) cells against the shared pool of real images,
/// followed by per-protocol averages and a grand average over protocols
/// (protocol "__all__"). Cells are sorted, so the report does not depend on
/// the order of the input.
struct MetricsReport {
  std::vector<MetricsRow> cells;
  std::vector<MetricsRow> protocol_averages;
  MetricsRow grand_average;
  std::vector<CellCurve> curves;
};

MetricsReport build_report(const ScoreSet& scores, double threshold = 0.5);

/// Scores every manifest record with `detector`.
ScoreSet score_manifest(const std::vector<SampleRecord>& records, Detector& detector);

/// score_manifest + build_report.
MetricsReport protocol_report(const std::vector<SampleRecord>& records, Detector& detector);

/// Header `protocol,generator,n_pos,n_neg,oa,auc`; averages follow the cells.
void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report);
/// Header `fpr,tpr,threshold`.
void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> curve);
std::string format_table(const MetricsReport& report);

}  // namespace glff
