#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsre {

class MetricsError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// One scored (entity pair, non-NA relation) prediction.
struct EvalRecord {
  std::string pair;
  int relation = 0;
  double score = 0.0;
  bool correct = false;
};

struct PrPoint {
  std::size_t rank = 0;  // 1-based
  double score = 0.0;
  double precision = 0.0;
  double recall = 0.0;
};

/// Records by score descending; ties by (pair, relation) ascending.
std::vector<EvalRecord> rank_records(std::vector<EvalRecord> records);

/// Cumulative precision and recall at every rank. `positives` is the number
/// of facts in the test KB and must be positive.
std::vector<PrPoint> pr_curve(const std::vector<EvalRecord>& records, std::size_t positives);

/// Trapezoidal area over recall, with the curve extended flat to recall 0.
double auc(const std::vector<PrPoint>& curve);

/// Fraction of correct records among the N best. Requires 1 <= N <= size.
double p_at_n(const std::vector<EvalRecord>& records, std::size_t n);

struct MetricsSummary {
  double auc = 0.0;
  double p100 = 0.0;
  double p200 = 0.0;
  double p300 = 0.0;
  double p_mean = 0.0;
};

/// AUC plus P@100/200/300 and their mean. P@N is computed only when there are
/// at least 300 records; otherwise the P@N fields are left at 0.
MetricsSummary summarize(const std::vector<EvalRecord>& records, std::size_t positives);

void write_curve_csv(const std::filesystem::path& path, const std::vector<PrPoint>& curve);
std::string summary_json(const MetricsSummary& summary);
void write_summary_json(const std::filesystem::path& path, const MetricsSummary& summary);

}  // namespace dsre
