#include "dsre/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "json.hpp"

namespace dsre {

std::vector<EvalRecord> rank_records(std::vector<EvalRecord> records) {
  for (const EvalRecord& r : records) {
    if (!std::isfinite(r.score)) throw MetricsError("non-finite score for pair " + r.pair);
  }
  std::sort(records.begin(), records.end(), [](const EvalRecord& a, const EvalRecord& b) {
    if (a.score != b.score) return a.score > b.score;
    if (a.pair != b.pair) return a.pair < b.pair;
    return a.relation < b.relation;
  });
  return records;
}

std::vector<PrPoint> pr_curve(const std::vector<EvalRecord>& records, std::size_t positives) {
  if (positives == 0) throw MetricsError("pr_curve: no positive facts");
  const std::vector<EvalRecord> ranked = rank_records(records);
  std::vector<PrPoint> curve;
  curve.reserve(ranked.size());
  std::size_t hits = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (ranked[k].correct) ++hits;
    const double h = static_cast<double>(hits);
    curve.push_back({k + 1, ranked[k].score, h / static_cast<double>(k + 1), h / static_cast<double>(positives)});
  }
  return curve;
}

double auc(const std::vector<PrPoint>& curve) {
  if (curve.empty()) return 0.0;
  double area = 0.0;
  double prev_recall = 0.0;
  double prev_precision = curve.front().precision;
  for (const PrPoint& p : curve) {
    area += (p.recall - prev_recall) * (p.precision + prev_precision) / 2.0;
    prev_recall = p.recall;
    prev_precision = p.precision;
  }
  return area;
}

double p_at_n(const std::vector<EvalRecord>& records, std::size_t n) {
  if (n == 0) throw MetricsError("p_at_n: N must be positive");
  if (n > records.size()) {
    throw MetricsError("p_at_n: N=" + std::to_string(n) + " exceeds " + std::to_string(records.size()) + " records");
  }
  const std::vector<EvalRecord> ranked = rank_records(records);
  const auto hits = std::count_if(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(n),
                                  [](const EvalRecord& r) { return r.correct; });
  return static_cast<double>(hits) / static_cast<double>(n);
}

MetricsSummary summarize(const std::vector<EvalRecord>& records, std::size_t positives) {
  MetricsSummary s;
  s.auc = auc(pr_curve(records, positives));
  if (records.size() >= 300) {
    s.p100 = p_at_n(records, 100);
    s.p200 = p_at_n(records, 200);
    s.p300 = p_at_n(records, 300);
    s.p_mean = (s.p100 + s.p200 + s.p300) / 3.0;
  }
  return s;
}

void write_curve_csv(const std::filesystem::path& path, const std::vector<PrPoint>& curve) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "rank,score,precision,recall\n";
  char buf[128];
  for (const PrPoint& p : curve) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", p.rank, p.score, p.precision, p.recall);
    out << buf;
  }
}

std::string summary_json(const MetricsSummary& summary) {
  nlohmann::ordered_json j;
  j["auc"] = summary.auc;
  j["p@100"] = summary.p100;
  j["p@200"] = summary.p200;
  j["p@300"] = summary.p300;
  j["p@mean"] = summary.p_mean;
  return j.dump(2) + "\n";
}

void write_summary_json(const std::filesystem::path& path, const MetricsSummary& summary) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << summary_json(summary);
}

}  // namespace dsre
