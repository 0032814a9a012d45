#include "fedlake/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

EncodingLayout encoding_layout(const GlobalSchema& schema, const std::vector<std::string>& features) {
  std::vector<std::size_t> order;
  for (const auto& f : features) order.push_back(schema.index_of(f));
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());

  EncodingLayout layout;
  for (std::size_t idx : order) {
    const AttributeDef& a = schema.attributes[idx];
    if (!a.categorical() && !a.range) {
      throw ValidationError("numeric feature " + a.name + " needs a schema range for scaling");
    }
    layout.features.push_back(a.name);
    layout.offsets.push_back(layout.width);
    layout.width += a.categorical() ? a.vocabulary.size() : 1;
  }
  return layout;
}

std::vector<double> encode_row(const Record& row, const GlobalSchema& schema,
                               const EncodingLayout& layout) {
  std::vector<double> out(layout.width, 0.0);
  for (std::size_t f = 0; f < layout.features.size(); ++f) {
    const AttributeDef& a = schema.at(layout.features[f]);
    auto it = row.find(a.name);
    if (it == row.end()) throw ValidationError("missing feature value: " + a.name);
    if (a.categorical()) {
      const auto* s = std::get_if<std::string>(&it->second);
      const std::size_t k = s ? a.vocabulary_index(*s) : std::string::npos;
      if (k == std::string::npos) {
        throw ValidationError("out-of-vocabulary value for " + a.name, "out_of_vocabulary");
      }
      out[layout.offsets[f] + k] = 1.0;
    } else {
      const auto* d = std::get_if<double>(&it->second);
      if (!d || !std::isfinite(*d)) throw ValidationError("non-numeric value for " + a.name);
      out[layout.offsets[f]] = (*d - a.range->first) / (a.range->second - a.range->first);
    }
  }
  return out;
}

Matrix one_hot_encode(const std::vector<Record>& rows, const GlobalSchema& schema,
                      const std::vector<std::string>& features) {
  const EncodingLayout layout = encoding_layout(schema, features);
  Matrix m(rows.size(), layout.width);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const auto encoded = encode_row(rows[r], schema, layout);
    std::copy(encoded.begin(), encoded.end(), m.row(r).begin());
  }
  return m;
}

int encode_label(const Record& row, const AttributeDef& target) {
  auto it = row.find(target.name);
  if (it == row.end()) throw ValidationError("missing target value: " + target.name);
  const auto* s = std::get_if<std::string>(&it->second);
  const std::size_t k = s ? target.vocabulary_index(*s) : std::string::npos;
  if (k == std::string::npos) {
    throw ValidationError("out-of-vocabulary target for " + target.name, "out_of_vocabulary");
  }
  return static_cast<int>(k);
}

double chi_squared_critical_005(std::size_t dof) {
  static constexpr double kTable[] = {3.841,  5.991,  7.815,  9.488,  11.070, 12.592, 14.067,
                                      15.507, 16.919, 18.307, 19.675, 21.026, 22.362, 23.685,
                                      24.996, 26.296, 27.587, 28.869, 30.144, 31.410};
  if (dof < 1 || dof > std::size(kTable)) {
    throw ValidationError("chi-squared table covers 1..20 degrees of freedom, got " +
                          std::to_string(dof));
  }
  return kTable[dof - 1];
}

ChiSquaredResult chi_squared_imbalance(std::span<const long long> class_counts) {
  ChiSquaredResult r;
  const long long total = std::accumulate(class_counts.begin(), class_counts.end(), 0LL);
  if (class_counts.size() < 2) {
    r.degenerate = true;
    r.reject = true;
    return r;
  }
  if (total <= 0) throw ValidationError("chi-squared test needs a positive total count");
  const double expected = static_cast<double>(total) / static_cast<double>(class_counts.size());
  for (long long observed : class_counts) {
    const double d = static_cast<double>(observed) - expected;
    r.statistic += d * d / expected;
  }
  r.dof = class_counts.size() - 1;
  r.critical = chi_squared_critical_005(r.dof);
  r.reject = r.statistic > r.critical;
  return r;
}

std::vector<std::size_t> nearest_neighbors(const Matrix& points, std::size_t i, std::size_t k) {
  std::vector<std::pair<double, std::size_t>> dist;
  dist.reserve(points.rows());
  const auto xi = points.row(i);
  for (std::size_t j = 0; j < points.rows(); ++j) {
    if (j == i) continue;
    const auto xj = points.row(j);
    double d = 0.0;
    for (std::size_t c = 0; c < xi.size(); ++c) d += (xi[c] - xj[c]) * (xi[c] - xj[c]);
    dist.emplace_back(d, j);
  }
  k = std::min(k, dist.size());
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::size_t> out;
  for (std::size_t n = 0; n < k; ++n) out.push_back(dist[n].second);
  return out;
}

std::vector<double> interpolate(std::span<const double> x, std::span<const double> neighbor,
                                double lambda) {
  std::vector<double> out(x.size());
  for (std::size_t c = 0; c < x.size(); ++c) out[c] = x[c] + lambda * (neighbor[c] - x[c]);
  return out;
}

Matrix smote(const Matrix& minority, std::size_t k, std::size_t n_synthetic, Rng& rng) {
  const std::size_t m = minority.rows();
  if (m < 2) throw ValidationError("SMOTE needs at least 2 minority samples");
  if (k < 1 || k > m - 1) {
    throw ValidationError("SMOTE k must be in [1, minority-1], got " + std::to_string(k));
  }
  Matrix out(0, minority.cols());
  if (n_synthetic == 0) return out;
  std::vector<std::vector<std::size_t>> neighbors(m);
  for (std::size_t i = 0; i < m; ++i) neighbors[i] = nearest_neighbors(minority, i, k);
  std::uniform_real_distribution<double> gap(0.0, 1.0);
  for (std::size_t s = 0; s < n_synthetic; ++s) {
    const std::size_t base = s % m;
    std::uniform_int_distribution<std::size_t> pick(0, neighbors[base].size() - 1);
    const std::size_t nn = neighbors[base][pick(rng)];
    out.append_row(interpolate(minority.row(base), minority.row(nn), gap(rng)));
  }
  return out;
}

AdasynResult adasyn(const Matrix& features, std::span<const int> labels, int minority_class,
                    double beta, std::size_t k, Rng& rng) {
  if (!(beta > 0.0 && beta <= 1.0)) throw ValidationError("ADASYN beta must be in (0, 1]");
  if (k < 1) throw ValidationError("ADASYN k must be >= 1");
  std::vector<std::size_t> minority_idx;
  std::map<int, std::size_t> class_sizes;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++class_sizes[labels[i]];
    if (labels[i] == minority_class) minority_idx.push_back(i);
  }
  const std::size_t m_s = minority_idx.size();
  if (m_s < 2) throw ValidationError("ADASYN needs at least 2 minority samples");
  std::size_t m_l = 0;
  for (const auto& [c, n] : class_sizes) {
    if (c != minority_class) m_l = std::max(m_l, n);
  }

  AdasynResult result;
  result.synthetic = Matrix(0, features.cols());
  if (m_l <= m_s) return result;
  result.target_total =
      static_cast<std::size_t>(std::llround(static_cast<double>(m_l - m_s) * beta));
  const double G = static_cast<double>(result.target_total);

  // Borderline ratio over the whole training set.
  std::vector<double> ratio(m_s, 0.0);
  double ratio_sum = 0.0;
  for (std::size_t i = 0; i < m_s; ++i) {
    const auto nn = nearest_neighbors(features, minority_idx[i], k);
    std::size_t other = 0;
    for (std::size_t j : nn) other += labels[j] != minority_class;
    ratio[i] = static_cast<double>(other) / static_cast<double>(nn.size());
    ratio_sum += ratio[i];
  }

  result.per_sample.assign(m_s, 0);
  if (ratio_sum == 0.0) {
    result.uniform_fallback = true;
    for (std::size_t i = 0; i < m_s; ++i) {
      result.per_sample[i] = result.target_total / m_s + (i < result.target_total % m_s ? 1 : 0);
    }
  } else {
    std::size_t total = 0;
    std::vector<double> exact(m_s);
    for (std::size_t i = 0; i < m_s; ++i) {
      exact[i] = ratio[i] / ratio_sum * G;
      result.per_sample[i] = static_cast<std::size_t>(std::llround(exact[i]));
      total += result.per_sample[i];
    }
    // Trim rounding overshoot from the entries that were rounded up the most.
    while (total > result.target_total) {
      std::size_t worst = m_s;
      double worst_excess = 0.0;
      for (std::size_t i = 0; i < m_s; ++i) {
        const double excess = static_cast<double>(result.per_sample[i]) - exact[i];
        if (result.per_sample[i] > 0 && (worst == m_s || excess > worst_excess)) {
          worst = i;
          worst_excess = excess;
        }
      }
      --result.per_sample[worst];
      --total;
    }
  }

  const Matrix minority = features.select_rows(minority_idx);
  const std::size_t k_min = std::min(k, m_s - 1);
  std::uniform_real_distribution<double> gap(0.0, 1.0);
  for (std::size_t i = 0; i < m_s; ++i) {
    if (result.per_sample[i] == 0) continue;
    const auto nn = nearest_neighbors(minority, i, k_min);
    std::uniform_int_distribution<std::size_t> pick(0, nn.size() - 1);
    for (std::size_t g = 0; g < result.per_sample[i]; ++g) {
      const std::size_t j = nn[pick(rng)];
      result.synthetic.append_row(interpolate(minority.row(i), minority.row(j), gap(rng)));
    }
  }
  return result;
}

SplitResult train_test_split(std::size_t n, double fraction, std::uint64_t seed) {
  if (n < 2) throw ValidationError("train/test split needs at least 2 rows");
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ValidationError("split fraction must be in (0, 1)");
  }
  SplitResult r;
  r.fraction_warning = fraction < 0.75 || fraction > 0.80;
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto n_train = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  r.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  r.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return r;
}

std::string_view to_string(BalanceMethod m) {
  switch (m) {
    case BalanceMethod::none:
      return "none";
    case BalanceMethod::smote:
      return "smote";
    case BalanceMethod::adasyn:
      return "adasyn";
  }
  return "?";
}

BalanceMethod balance_method_from_string(std::string_view s) {
  if (s == "none") return BalanceMethod::none;
  if (s == "smote") return BalanceMethod::smote;
  if (s == "adasyn") return BalanceMethod::adasyn;
  throw ValidationError("unknown balancing method: " + std::string(s));
}

Dataset balance_training_set(const Dataset& train, std::size_t num_classes,
                             const BalanceConfig& config, Rng& rng, BalanceReport& report) {
  report = BalanceReport{};
  std::vector<long long> counts(num_classes, 0);
  for (int y : train.labels) ++counts[static_cast<std::size_t>(y)];
  std::vector<long long> observed;
  for (long long c : counts) {
    if (c > 0) observed.push_back(c);
  }
  if (observed.empty()) return train;
  report.chi_squared = chi_squared_imbalance(observed);
  const long long lo = *std::min_element(observed.begin(), observed.end());
  const long long hi = *std::max_element(observed.begin(), observed.end());
  report.minority_fraction = static_cast<double>(lo) / static_cast<double>(lo + hi);
  if (report.chi_squared.degenerate) report.flags.push_back("degenerate_single_class");

  const bool gate = config.method != BalanceMethod::none && !report.chi_squared.degenerate &&
                    report.chi_squared.reject &&
                    report.minority_fraction < config.minority_threshold;
  if (!gate) return train;

  Dataset out = train;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const long long have = counts[c];
    if (have == 0 || have == hi) continue;
    if (have < 2) {
      report.flags.push_back("class_too_small:" + std::to_string(c));
      continue;
    }
    Matrix synthetic;
    if (config.method == BalanceMethod::smote) {
      std::vector<std::size_t> idx;
      for (std::size_t i = 0; i < train.size(); ++i) {
        if (train.labels[i] == static_cast<int>(c)) idx.push_back(i);
      }
      const Matrix minority = train.features.select_rows(idx);
      const std::size_t k = std::min<std::size_t>(config.k, idx.size() - 1);
      synthetic = smote(minority, k, static_cast<std::size_t>(hi - have), rng);
    } else {
      AdasynResult a = adasyn(train.features, train.labels, static_cast<int>(c), config.beta,
                              config.k, rng);
      if (a.uniform_fallback) report.flags.push_back("adasyn_uniform_fallback:" + std::to_string(c));
      synthetic = std::move(a.synthetic);
    }
    for (std::size_t r = 0; r < synthetic.rows(); ++r) {
      out.features.append_row(synthetic.row(r));
      out.labels.push_back(static_cast<int>(c));
    }
    report.synthetic_rows += synthetic.rows();
  }
  report.applied = report.synthetic_rows > 0;
  return out;
}

json to_json(const BalanceConfig& c) {
  return {{"method", to_string(c.method)},
          {"k", c.k},
          {"beta", c.beta},
          {"minority_threshold", c.minority_threshold}};
}

BalanceConfig balance_config_from_json(const json& j) {
  BalanceConfig c;
  if (j.is_null()) return c;
  c.method = balance_method_from_string(j.value("method", std::string(to_string(c.method))));
  c.k = j.value("k", c.k);
  c.beta = j.value("beta", c.beta);
  c.minority_threshold = j.value("minority_threshold", c.minority_threshold);
  if (c.k < 1) throw ValidationError("balance k must be >= 1");
  if (!(c.beta > 0.0 && c.beta <= 1.0)) throw ValidationError("balance beta must be in (0, 1]");
  return c;
}

json to_json(const BalanceReport& r) {
  return {{"chi_squared", r.chi_squared.statistic},
          {"dof", r.chi_squared.dof},
          {"reject", r.chi_squared.reject},
          {"minority_fraction", r.minority_fraction},
          {"applied", r.applied},
          {"synthetic_rows", r.synthetic_rows},
          {"flags", r.flags}};
}

}  // namespace fedlake
