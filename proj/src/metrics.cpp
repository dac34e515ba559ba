#include "glff/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "glff/config.hpp"
#include "glff/image.hpp"

namespace glff {

namespace {

std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

}  // namespace

double auc(std::span<const double> pos, std::span<const double> neg) {
  if (pos.empty() || neg.empty()) throw ConfigError("auc needs positive and negative scores");
  std::vector<double> sorted(neg.begin(), neg.end());
  std::sort(sorted.begin(), sorted.end());
  // Twice the credit, so ties stay integral.
  std::int64_t credit2 = 0;
  for (double p : pos) {
    const auto lo = std::lower_bound(sorted.begin(), sorted.end(), p);
    const auto hi = std::upper_bound(lo, sorted.end(), p);
    credit2 += 2 * (lo - sorted.begin()) + (hi - lo);
  }
  return static_cast<double>(credit2) /
         (2.0 * static_cast<double>(pos.size()) * static_cast<double>(neg.size()));
}

double overall_accuracy(std::span<const double> scores, std::span<const int> labels,
                        double threshold) {
  if (scores.empty() || scores.size() != labels.size())
    throw ConfigError("overall accuracy needs equally many scores and labels");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < scores.size(); ++i)
    if ((scores[i] >= threshold) == (labels[i] == 1)) ++correct;
  return static_cast<double>(correct) / static_cast<double>(scores.size());
}

std::vector<RocPoint> roc_curve(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) throw ConfigError("roc needs one label per score");
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  const auto n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ConfigError("roc needs both classes");

  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });

  std::vector<RocPoint> curve{{0.0, 0.0, std::numeric_limits<double>::infinity()}};
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double t = scores[order[i]];
    for (; i < order.size() && scores[order[i]] == t; ++i) (labels[order[i]] == 1 ? tp : fp)++;
    curve.push_back({static_cast<double>(fp) / n_neg, static_cast<double>(tp) / n_pos, t});
  }
  return curve;
}

double roc_area(std::span<const RocPoint> curve) {
  double area = 0.0;
  for (std::size_t i = 1; i < curve.size(); ++i)
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2.0;
  return area;
}

MetricsReport build_report(const ScoreSet& scores, double threshold) {
  std::vector<double> negatives;
  std::map<std::pair<std::string, std::string>, std::vector<double>> cells;
  for (const auto& e : scores) {
    if (!(e.fake_probability >= 0.0 && e.fake_probability <= 1.0))
      throw NumericError("fake probability outside [0,1] for " + e.sample_id);
    if (e.label == 0)
      negatives.push_back(e.fake_probability);
    else
      cells[{to_string(e.protocol), e.generator}].push_back(e.fake_probability);
  }
  if (negatives.empty()) throw ConfigError("manifest has no real (label 0) images");
  if (cells.empty()) throw ConfigError("manifest has no fake (label 1) images");
  // Negative order affects nothing below, but keep it canonical for the ROC
  // tie-walk.
  std::sort(negatives.begin(), negatives.end());

  MetricsReport report;
  std::map<std::string, std::vector<const MetricsRow*>> by_protocol;
  report.cells.reserve(cells.size());
  for (auto& [key, pos] : cells) {
    std::sort(pos.begin(), pos.end());
    std::vector<double> all(pos);
    all.insert(all.end(), negatives.begin(), negatives.end());
    std::vector<int> labels(pos.size(), 1);
    labels.resize(all.size(), 0);

    MetricsRow row;
    row.protocol = key.first;
    row.generator = key.second;
    row.n_pos = pos.size();
    row.n_neg = negatives.size();
    row.oa = overall_accuracy(all, labels, threshold);
    row.auc = auc(pos, negatives);
    report.cells.push_back(row);
    report.curves.push_back({key.first, key.second, roc_curve(all, labels)});
  }
  for (const auto& row : report.cells) by_protocol[row.protocol].push_back(&row);

  std::vector<double> protocol_aucs;
  std::vector<double> protocol_oas;
  std::size_t total_pos = 0;
  for (const auto& [protocol, rows] : by_protocol) {
    std::vector<double> aucs;
    std::vector<double> oas;
    MetricsRow avg;
    avg.protocol = protocol;
    avg.generator = "__avg__";
    avg.n_neg = negatives.size();
    for (const auto* r : rows) {
      aucs.push_back(r->auc);
      oas.push_back(r->oa);
      avg.n_pos += r->n_pos;
    }
    avg.auc = mean_of(aucs);
    avg.oa = mean_of(oas);
    total_pos += avg.n_pos;
    protocol_aucs.push_back(avg.auc);
    protocol_oas.push_back(avg.oa);
    report.protocol_averages.push_back(avg);
  }
  report.grand_average.protocol = "__all__";
  report.grand_average.generator = "__avg__";
  report.grand_average.n_pos = total_pos;
  report.grand_average.n_neg = negatives.size();
  report.grand_average.auc = mean_of(protocol_aucs);
  report.grand_average.oa = mean_of(protocol_oas);
  return report;
}

ScoreSet score_manifest(const std::vector<SampleRecord>& records, Detector& detector) {
  ScoreSet out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (!std::filesystem::exists(r.path)) throw IoError("missing image " + r.path);
    auto image = load_image(r.path, detector.input_size());
    out.push_back({r.path, detector.fake_probability(image.pixels), r.label, r.generator, r.protocol});
  }
  return out;
}

MetricsReport protocol_report(const std::vector<SampleRecord>& records, Detector& detector) {
  return build_report(score_manifest(records, detector));
}

void write_metrics_csv(const std::filesystem::path& path, const MetricsReport& report) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "protocol,generator,n_pos,n_neg,oa,auc\n";
  auto row = [&](const MetricsRow& r) {
    out << r.protocol << ',' << r.generator << ',' << r.n_pos << ',' << r.n_neg << ',' << fmt(r.oa)
        << ',' << fmt(r.auc) << '\n';
  };
  for (const auto& r : report.cells) row(r);
  for (const auto& r : report.protocol_averages) row(r);
  row(report.grand_average);
}

void write_roc_csv(const std::filesystem::path& path, std::span<const RocPoint> curve) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "fpr,tpr,threshold\n";
  for (const auto& p : curve) out << fmt(p.fpr) << ',' << fmt(p.tpr) << ',' << fmt(p.threshold) << '\n';
}

std::string format_table(const MetricsReport& report) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %-20s %7s %7s %8s %8s\n", "protocol", "generator", "n_pos",
                "n_neg", "OA", "AUC");
  os << line;
  auto row = [&](const MetricsRow& r) {
    std::snprintf(line, sizeof line, "%-16s %-20s %7zu %7zu %8.4f %8.4f\n", r.protocol.c_str(),
                  r.generator.c_str(), r.n_pos, r.n_neg, r.oa, r.auc);
    os << line;
  };
  for (const auto& r : report.cells) row(r);
  os << std::string(71, '-') << '\n';
  for (const auto& r : report.protocol_averages) row(r);
  row(report.grand_average);
  return os.str();
}

}  // namespace glff
