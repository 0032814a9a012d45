#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedlake/matrix.hpp"
#include "fedlake/preprocess.hpp"

namespace fedlake {

enum class ModelKind { logistic, linear_svm_hinge, decision_tree };

std::string_view to_string(ModelKind k);
ModelKind model_kind_from_string(std::string_view s);
inline bool is_linear(ModelKind k) { return k != ModelKind::decision_tree; }

/// Flat parameters of a multiclass linear model: one row per class holding
/// `feature_width` weights followed by the bias.
struct ParameterVector {
  ModelKind kind = ModelKind::logistic;
  std::size_t num_classes = 0;
  std::size_t feature_width = 0;
  std::vector<double> values;

  static ParameterVector zeros(ModelKind kind, std::size_t num_classes, std::size_t feature_width);

  std::size_t stride() const { return feature_width + 1; }
  double& weight(std::size_t c, std::size_t j) { return values[c * stride() + j]; }
  double weight(std::size_t c, std::size_t j) const { return values[c * stride() + j]; }
  double& bias(std::size_t c) { return values[c * stride() + feature_width]; }
  double bias(std::size_t c) const { return values[c * stride() + feature_width]; }

  /// Length and finiteness; throws ValidationError.
  void validate() const;
  std::string digest() const;

  bool operator==(const ParameterVector&) const = default;
};

/// Training hyperparameters shared by local rounds, grid search and the
/// federation loop.
struct TrainConfig {
  ModelKind kind = ModelKind::logistic;
  double learning_rate = 0.5;
  std::size_t local_epochs = 1;
  /// 0 means full batch.
  std::size_t batch_size = 0;
  double l2 = 1e-4;
  std::uint64_t seed = 0;
  std::size_t rounds = 200;
  std::size_t max_depth = 6;
  std::size_t min_leaf = 5;

  /// Throws ValidationError on out-of-range values.
  void validate() const;
};

nlohmann::json to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j, TrainConfig base = {});
nlohmann::json to_json(const ParameterVector& p);
ParameterVector parameter_vector_from_json(const nlohmann::json& j);

/// w_c . x + b_c for every class.
std::vector<double> decision_scores(const ParameterVector& params, std::span<const double> x);

/// Softmax of the decision scores; sums to 1.
std::vector<double> class_probabilities(const ParameterVector& params, std::span<const double> x);

int predict_class(const ParameterVector& params, std::span<const double> x);

/// Mean data loss over the rows plus (l2/2) * ||W without bias||^2.
/// Logistic: multinomial cross-entropy. Hinge: one-vs-rest squared hinge.
double objective(const ParameterVector& params, const Matrix& features,
                 std::span<const int> labels, double l2);

/// Gradient of `objective`, same layout as params.values.
std::vector<double> objective_gradient(const ParameterVector& params, const Matrix& features,
                                       std::span<const int> labels, double l2);

/// params - lr * (grad of mean batch loss + l2 * W), bias unregularized.
/// Throws NumericalError on a non-finite gradient.
ParameterVector sgd_step(const ParameterVector& params, const Matrix& features,
                         std::span<const int> labels, double learning_rate, double l2);

/// `config.local_epochs` passes over the data. Minibatches are drawn from a
/// permutation seeded by config.seed, so the result is deterministic.
ParameterVector train_linear(ParameterVector params, const Dataset& data, const TrainConfig& config);

}  // namespace fedlake
