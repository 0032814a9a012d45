#include "fedlake/linear_model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::logistic:
      return "logistic";
    case ModelKind::linear_svm_hinge:
      return "linear_svm_hinge";
    case ModelKind::decision_tree:
      return "decision_tree";
  }
  return "?";
}

ModelKind model_kind_from_string(std::string_view s) {
  if (s == "logistic") return ModelKind::logistic;
  if (s == "linear_svm_hinge" || s == "svm") return ModelKind::linear_svm_hinge;
  if (s == "decision_tree") return ModelKind::decision_tree;
  throw ValidationError("unknown model kind: " + std::string(s));
}

ParameterVector ParameterVector::zeros(ModelKind kind, std::size_t num_classes,
                                       std::size_t feature_width) {
  ParameterVector p;
  p.kind = kind;
  p.num_classes = num_classes;
  p.feature_width = feature_width;
  p.values.assign(num_classes * (feature_width + 1), 0.0);
  return p;
}

void ParameterVector::validate() const {
  if (values.size() != num_classes * (feature_width + 1)) {
    throw ValidationError("parameter length " + std::to_string(values.size()) + " != " +
                              std::to_string(num_classes) + " x (" +
                              std::to_string(feature_width) + " + 1)",
                          "dimension_mismatch");
  }
  for (double v : values) {
    if (!std::isfinite(v)) throw ValidationError("non-finite parameter", "non_finite");
  }
}

std::string ParameterVector::digest() const {
  std::string bytes(values.size() * sizeof(double), '\0');
  if (!values.empty()) std::memcpy(bytes.data(), values.data(), bytes.size());
  return fnv1a_hex(bytes);
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ValidationError("learning rate must be > 0");
  if (!(l2 >= 0.0)) throw ValidationError("regularization must be >= 0");
  if (rounds < 1) throw ValidationError("rounds must be >= 1");
}

json to_json(const TrainConfig& c) {
  return {{"kind", to_string(c.kind)},   {"learning_rate", c.learning_rate},
          {"local_epochs", c.local_epochs}, {"batch_size", c.batch_size},
          {"l2", c.l2},                  {"seed", c.seed},
          {"rounds", c.rounds},          {"max_depth", c.max_depth},
          {"min_leaf", c.min_leaf}};
}

TrainConfig train_config_from_json(const json& j, TrainConfig c) {
  if (j.is_null()) return c;
  if (!j.is_object()) throw ValidationError("train_config must be an object");
  if (j.contains("kind")) c.kind = model_kind_from_string(j.at("kind").get<std::string>());
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.local_epochs = j.value("local_epochs", c.local_epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.l2 = j.value("l2", c.l2);
  c.seed = j.value("seed", c.seed);
  c.rounds = j.value("rounds", c.rounds);
  c.max_depth = j.value("max_depth", c.max_depth);
  c.min_leaf = j.value("min_leaf", c.min_leaf);
  c.validate();
  return c;
}

json to_json(const ParameterVector& p) {
  return {{"kind", to_string(p.kind)},
          {"num_classes", p.num_classes},
          {"feature_width", p.feature_width},
          {"values", p.values}};
}

ParameterVector parameter_vector_from_json(const json& j) {
  ParameterVector p;
  p.kind = model_kind_from_string(j.at("kind").get<std::string>());
  p.num_classes = j.at("num_classes").get<std::size_t>();
  p.feature_width = j.at("feature_width").get<std::size_t>();
  p.values = j.at("values").get<std::vector<double>>();
  p.validate();
  return p;
}

std::vector<double> decision_scores(const ParameterVector& params, std::span<const double> x) {
  std::vector<double> s(params.num_classes);
  for (std::size_t c = 0; c < params.num_classes; ++c) {
    double acc = params.bias(c);
    for (std::size_t j = 0; j < params.feature_width; ++j) acc += params.weight(c, j) * x[j];
    s[c] = acc;
  }
  return s;
}

namespace {

void softmax_inplace(std::vector<double>& s) {
  const double hi = *std::max_element(s.begin(), s.end());
  double z = 0.0;
  for (double& v : s) {
    v = std::exp(v - hi);
    z += v;
  }
  for (double& v : s) v /= z;
}

void check_dims(const ParameterVector& params, const Matrix& features, std::span<const int> labels) {
  if (features.rows() != labels.size()) {
    throw ValidationError("feature/label length mismatch", "dimension_mismatch");
  }
  if (features.rows() > 0 && features.cols() != params.feature_width) {
    throw ValidationError("feature width " + std::to_string(features.cols()) +
                              " != parameter width " + std::to_string(params.feature_width),
                          "dimension_mismatch");
  }
  if (params.values.size() != params.num_classes * params.stride()) {
    throw ValidationError("parameter length mismatch", "dimension_mismatch");
  }
}

/// Adds d(loss_i)/d(score_c) for one sample into `dscore` and returns loss_i.
double sample_loss(ModelKind kind, const std::vector<double>& scores, int label,
                   std::vector<double>& dscore) {
  const std::size_t k = scores.size();
  if (kind == ModelKind::logistic) {
    std::vector<double> p = scores;
    softmax_inplace(p);
    for (std::size_t c = 0; c < k; ++c) dscore[c] = p[c] - (static_cast<int>(c) == label ? 1.0 : 0.0);
    // log-sum-exp for a stable -log p_y
    const double hi = *std::max_element(scores.begin(), scores.end());
    double z = 0.0;
    for (double s : scores) z += std::exp(s - hi);
    return hi + std::log(z) - scores[static_cast<std::size_t>(label)];
  }
  double loss = 0.0;
  for (std::size_t c = 0; c < k; ++c) {
    const double y = static_cast<int>(c) == label ? 1.0 : -1.0;
    const double margin = 1.0 - y * scores[c];
    if (margin > 0.0) {
      loss += margin * margin;
      dscore[c] = -2.0 * margin * y;
    } else {
      dscore[c] = 0.0;
    }
  }
  return loss;
}

}  // namespace

std::vector<double> class_probabilities(const ParameterVector& params, std::span<const double> x) {
  auto s = decision_scores(params, x);
  softmax_inplace(s);
  return s;
}

int predict_class(const ParameterVector& params, std::span<const double> x) {
  const auto s = decision_scores(params, x);
  return static_cast<int>(std::max_element(s.begin(), s.end()) - s.begin());
}

double objective(const ParameterVector& params, const Matrix& features,
                 std::span<const int> labels, double l2) {
  check_dims(params, features, labels);
  std::vector<double> dscore(params.num_classes);
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    loss += sample_loss(params.kind, decision_scores(params, features.row(i)), labels[i], dscore);
  }
  if (features.rows() > 0) loss /= static_cast<double>(features.rows());
  double reg = 0.0;
  for (std::size_t c = 0; c < params.num_classes; ++c) {
    for (std::size_t j = 0; j < params.feature_width; ++j) reg += params.weight(c, j) * params.weight(c, j);
  }
  return loss + 0.5 * l2 * reg;
}

std::vector<double> objective_gradient(const ParameterVector& params, const Matrix& features,
                                       std::span<const int> labels, double l2) {
  check_dims(params, features, labels);
  const std::size_t stride = params.stride();
  std::vector<double> grad(params.values.size(), 0.0);
  std::vector<double> dscore(params.num_classes);
  const std::size_t n = features.rows();
  for (std::size_t i = 0; i < n; ++i) {
    const auto x = features.row(i);
    sample_loss(params.kind, decision_scores(params, x), labels[i], dscore);
    for (std::size_t c = 0; c < params.num_classes; ++c) {
      if (dscore[c] == 0.0) continue;
      double* g = grad.data() + c * stride;
      for (std::size_t j = 0; j < params.feature_width; ++j) g[j] += dscore[c] * x[j];
      g[params.feature_width] += dscore[c];
    }
  }
  if (n > 0) {
    const double inv = 1.0 / static_cast<double>(n);
    for (double& g : grad) g *= inv;
  }
  for (std::size_t c = 0; c < params.num_classes; ++c) {
    for (std::size_t j = 0; j < params.feature_width; ++j) {
      grad[c * stride + j] += l2 * params.weight(c, j);
    }
  }
  return grad;
}

ParameterVector sgd_step(const ParameterVector& params, const Matrix& features,
                         std::span<const int> labels, double learning_rate, double l2) {
  const auto grad = objective_gradient(params, features, labels, l2);
  ParameterVector out = params;
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) throw NumericalError("non-finite gradient");
    out.values[i] -= learning_rate * grad[i];
  }
  return out;
}

ParameterVector train_linear(ParameterVector params, const Dataset& data, const TrainConfig& config) {
  if (config.local_epochs == 0) return params;
  const std::size_t n = data.size();
  if (n == 0) throw ValidationError("empty training set");
  if (config.batch_size == 0 || config.batch_size >= n) {
    for (std::size_t e = 0; e < config.local_epochs; ++e) {
      params = sgd_step(params, data.features, data.labels, config.learning_rate, config.l2);
    }
    return params;
  }
  Rng rng(config.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  for (std::size_t e = 0; e < config.local_epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::size_t end = std::min(n, start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const Matrix batch = data.features.select_rows(idx);
      std::vector<int> labels;
      labels.reserve(idx.size());
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      params = sgd_step(params, batch, labels, config.learning_rate, config.l2);
    }
  }
  return params;
}

}  // namespace fedlake
