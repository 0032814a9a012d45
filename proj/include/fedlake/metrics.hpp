#pragma once

#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace fedlake {

struct ClassMetrics {
  std::string label;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long long support = 0;
};

/// Evaluation summary. Binary problems report the positive class (index 1);
/// multiclass problems report macro averages over the classes that occur in
/// the true or predicted labels. f1 is the harmonic mean of the reported
/// precision and recall.
struct MetricsReport {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc_roc = 0.5;
  std::vector<ClassMetrics> per_class;
  /// confusion[true][predicted].
  std::vector<std::vector<long long>> confusion;
  long long n_test = 0;
  std::vector<std::string> flags;
};

/// Accuracy/precision/recall/F1 derived from a confusion matrix alone.
MetricsReport metrics_from_confusion(const std::vector<std::vector<long long>>& confusion,
                                     const std::vector<std::string>& class_names);

/// Rank-statistic (Mann-Whitney) AUC; tied pairs count 1/2. Returns -1 when
/// either class is absent.
double binary_auc(std::span<const double> scores, std::span<const bool> positive);

/// `scores[i]` holds one score per class for sample i.
MetricsReport compute_metrics(std::span<const int> predicted,
                              const std::vector<std::vector<double>>& scores,
                              std::span<const int> truth,
                              const std::vector<std::string>& class_names);

nlohmann::json to_json(const MetricsReport& m);
MetricsReport metrics_report_from_json(const nlohmann::json& j);

}  // namespace fedlake
