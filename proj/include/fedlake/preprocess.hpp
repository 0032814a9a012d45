#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedlake/catalog.hpp"
#include "fedlake/matrix.hpp"
#include "fedlake/value.hpp"

namespace fedlake {

using Rng = std::mt19937_64;

/// Column layout of the one-hot design matrix. Features are placed in schema
/// order regardless of the order they were requested in, so every node that
/// shares a schema produces the same geometry.
struct EncodingLayout {
  std::vector<std::string> features;
  std::vector<std::size_t> offsets;
  std::size_t width = 0;
};

EncodingLayout encoding_layout(const GlobalSchema& schema, const std::vector<std::string>& features);

/// Categorical -> one indicator per vocabulary entry; numeric -> one column
/// min-max scaled by the schema range. Throws ValidationError on values
/// outside the vocabulary or numeric features without a range.
Matrix one_hot_encode(const std::vector<Record>& rows, const GlobalSchema& schema,
                      const std::vector<std::string>& features);
std::vector<double> encode_row(const Record& row, const GlobalSchema& schema,
                               const EncodingLayout& layout);

/// Class index of `row[target]` in the target vocabulary.
int encode_label(const Record& row, const AttributeDef& target);

struct ChiSquaredResult {
  double statistic = 0.0;
  std::size_t dof = 0;
  double critical = 0.0;
  bool reject = false;
  bool degenerate = false;
};

/// Critical value of the chi-squared distribution at alpha = 0.05.
double chi_squared_critical_005(std::size_t dof);

/// Pearson goodness-of-fit against the uniform distribution over the given
/// classes. A single class is reported as degenerate and rejected.
ChiSquaredResult chi_squared_imbalance(std::span<const long long> class_counts);

/// Indices of the k nearest rows to row `i` (Euclidean, excluding i); ties go
/// to the lower index.
std::vector<std::size_t> nearest_neighbors(const Matrix& points, std::size_t i, std::size_t k);

/// x + lambda * (neighbor - x).
std::vector<double> interpolate(std::span<const double> x, std::span<const double> neighbor,
                                double lambda);

/// Synthetic minority samples. Base points are visited round-robin; each
/// draws a neighbor uniformly from its k nearest minority neighbors and a
/// gap lambda ~ U[0,1].
Matrix smote(const Matrix& minority, std::size_t k, std::size_t n_synthetic, Rng& rng);

struct AdasynResult {
  Matrix synthetic;
  /// Target total G = round((majority - minority) * beta).
  std::size_t target_total = 0;
  /// Per minority sample (in minority order) number of synthetic rows.
  std::vector<std::size_t> per_sample;
  /// Set when no minority point has a majority neighbor.
  bool uniform_fallback = false;
};

/// One-vs-rest ADASYN for `minority_class` against the largest other class.
AdasynResult adasyn(const Matrix& features, std::span<const int> labels, int minority_class,
                    double beta, std::size_t k, Rng& rng);

struct SplitResult {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  /// Fraction outside the recommended 0.75-0.80 band.
  bool fraction_warning = false;
};

/// Seeded random permutation; |train| = round(f n) clamped so both sides
/// are non-empty.
SplitResult train_test_split(std::size_t n, double fraction, std::uint64_t seed);

enum class BalanceMethod { none, smote, adasyn };

std::string_view to_string(BalanceMethod m);
BalanceMethod balance_method_from_string(std::string_view s);

struct BalanceConfig {
  BalanceMethod method = BalanceMethod::smote;
  std::size_t k = 5;
  double beta = 1.0;
  /// The gate also needs min/(min+max) below this.
  double minority_threshold = 0.35;
};

struct BalanceReport {
  ChiSquaredResult chi_squared;
  double minority_fraction = 0.0;
  bool applied = false;
  std::size_t synthetic_rows = 0;
  std::vector<std::string> flags;
};

/// Applies the imbalance gate and, when it fires, oversamples every
/// non-majority class toward the majority count. Synthetic rows are
/// appended after the originals.
Dataset balance_training_set(const Dataset& train, std::size_t num_classes,
                             const BalanceConfig& config, Rng& rng, BalanceReport& report);

nlohmann::json to_json(const BalanceConfig& c);
BalanceConfig balance_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const BalanceReport& r);

}  // namespace fedlake
