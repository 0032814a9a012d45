#include "fedlake/metrics.hpp"

#include <algorithm>
#include <memory>
#include <numeric>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

double ratio(long long num, long long den, bool& empty) {
  if (den == 0) {
    empty = true;
    return 0.0;
  }
  return static_cast<double>(num) / static_cast<double>(den);
}

double harmonic(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

}  // namespace

MetricsReport metrics_from_confusion(const std::vector<std::vector<long long>>& confusion,
                                     const std::vector<std::string>& class_names) {
  const std::size_t k = confusion.size();
  MetricsReport m;
  m.confusion = confusion;
  std::vector<long long> row_sum(k, 0), col_sum(k, 0);
  long long correct = 0;
  for (std::size_t t = 0; t < k; ++t) {
    for (std::size_t p = 0; p < k; ++p) {
      row_sum[t] += confusion[t][p];
      col_sum[p] += confusion[t][p];
      m.n_test += confusion[t][p];
    }
    correct += confusion[t][t];
  }
  if (m.n_test == 0) throw ValidationError("metrics need at least one sample");
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.n_test);

  bool empty_denominator = false;
  for (std::size_t c = 0; c < k; ++c) {
    ClassMetrics cm;
    cm.label = c < class_names.size() ? class_names[c] : std::to_string(c);
    bool local_empty = false;
    cm.precision = ratio(confusion[c][c], col_sum[c], local_empty);
    cm.recall = ratio(confusion[c][c], row_sum[c], local_empty);
    cm.f1 = harmonic(cm.precision, cm.recall);
    cm.support = row_sum[c];
    m.per_class.push_back(std::move(cm));
  }

  if (k == 2) {
    const ClassMetrics& pos = m.per_class[1];
    empty_denominator = col_sum[1] == 0 || row_sum[1] == 0;
    m.precision = pos.precision;
    m.recall = pos.recall;
  } else {
    std::size_t used = 0;
    for (std::size_t c = 0; c < k; ++c) {
      if (row_sum[c] == 0 && col_sum[c] == 0) continue;
      if (row_sum[c] == 0 || col_sum[c] == 0) empty_denominator = true;
      m.precision += m.per_class[c].precision;
      m.recall += m.per_class[c].recall;
      ++used;
    }
    if (used > 0) {
      m.precision /= static_cast<double>(used);
      m.recall /= static_cast<double>(used);
    }
  }
  m.f1 = harmonic(m.precision, m.recall);
  if (empty_denominator) m.flags.push_back("empty_denominator");
  return m;
}

double binary_auc(std::span<const double> scores, std::span<const bool> positive) {
  const std::size_t n = scores.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  long long n_pos = 0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) {
      if (positive[order[t]]) {
        rank_sum += avg_rank;
        ++n_pos;
      }
    }
    i = j + 1;
  }
  const long long n_neg = static_cast<long long>(n) - n_pos;
  if (n_pos == 0 || n_neg == 0) return -1.0;
  const double u = rank_sum - 0.5 * static_cast<double>(n_pos) * static_cast<double>(n_pos + 1);
  return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

MetricsReport compute_metrics(std::span<const int> predicted,
                              const std::vector<std::vector<double>>& scores,
                              std::span<const int> truth,
                              const std::vector<std::string>& class_names) {
  if (predicted.size() != truth.size() || scores.size() != truth.size()) {
    throw ValidationError("metrics inputs differ in length", "length_mismatch");
  }
  if (truth.empty()) throw ValidationError("metrics need at least one sample");
  const std::size_t k = class_names.size();
  std::vector<std::vector<long long>> confusion(k, std::vector<long long>(k, 0));
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const auto t = static_cast<std::size_t>(truth[i]);
    const auto p = static_cast<std::size_t>(predicted[i]);
    if (t >= k || p >= k) throw ValidationError("label index out of range");
    ++confusion[t][p];
  }
  MetricsReport m = metrics_from_confusion(confusion, class_names);

  std::vector<double> s(truth.size());
  auto positive = std::make_unique<bool[]>(truth.size());
  auto auc_for = [&](std::size_t c) {
    for (std::size_t i = 0; i < truth.size(); ++i) {
      s[i] = scores[i][c];
      positive[i] = truth[i] == static_cast<int>(c);
    }
    return binary_auc(s, std::span<const bool>(positive.get(), truth.size()));
  };
  if (k == 2) {
    const double auc = auc_for(1);
    if (auc < 0.0) {
      m.flags.push_back("auc_undefined");
      m.auc_roc = 0.5;
    } else {
      m.auc_roc = auc;
    }
  } else {
    double sum = 0.0;
    std::size_t used = 0;
    for (std::size_t c = 0; c < k; ++c) {
      const double auc = auc_for(c);
      if (auc < 0.0) continue;
      sum += auc;
      ++used;
    }
    if (used < k) m.flags.push_back("auc_classes_skipped");
    m.auc_roc = used ? sum / static_cast<double>(used) : 0.5;
  }
  return m;
}

json to_json(const MetricsReport& m) {
  json per_class = json::array();
  for (const auto& c : m.per_class) {
    per_class.push_back({{"label", c.label},
                         {"precision", c.precision},
                         {"recall", c.recall},
                         {"f1", c.f1},
                         {"support", c.support}});
  }
  return {{"accuracy", m.accuracy},   {"precision", m.precision},   {"recall", m.recall},
          {"f1", m.f1},               {"auc_roc", m.auc_roc},       {"per_class", std::move(per_class)},
          {"confusion", m.confusion}, {"n_test", m.n_test},         {"flags", m.flags}};
}

MetricsReport metrics_report_from_json(const json& j) {
  MetricsReport m;
  m.accuracy = j.at("accuracy").get<double>();
  m.precision = j.at("precision").get<double>();
  m.recall = j.at("recall").get<double>();
  m.f1 = j.at("f1").get<double>();
  m.auc_roc = j.at("auc_roc").get<double>();
  for (const auto& c : j.at("per_class")) {
    m.per_class.push_back({c.at("label").get<std::string>(), c.at("precision").get<double>(),
                           c.at("recall").get<double>(), c.at("f1").get<double>(),
                           c.at("support").get<long long>()});
  }
  m.confusion = j.at("confusion").get<std::vector<std::vector<long long>>>();
  m.n_test = j.at("n_test").get<long long>();
  m.flags = j.value("flags", std::vector<std::string>{});
  return m;
}

}  // namespace fedlake
