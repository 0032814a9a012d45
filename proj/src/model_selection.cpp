#include "fedlake/model_selection.hpp"

#include <cmath>
#include <map>
#include <numeric>

#include "fedlake/error.hpp"
#include "fedlake/tree.hpp"

namespace fedlake {

using nlohmann::json;

std::vector<TrainConfig> expand_grid(const TrainConfig& base, const HyperGrid& grid) {
  auto or_base = [](const auto& axis, auto value) {
    using T = std::decay_t<decltype(value)>;
    return axis.empty() ? std::vector<T>{value} : std::vector<T>(axis.begin(), axis.end());
  };
  std::vector<TrainConfig> out;
  for (double lr : or_base(grid.learning_rates, base.learning_rate)) {
    for (double l2 : or_base(grid.l2s, base.l2)) {
      for (std::size_t epochs : or_base(grid.local_epochs, base.local_epochs)) {
        for (std::size_t depth : or_base(grid.max_depths, base.max_depth)) {
          TrainConfig c = base;
          c.learning_rate = lr;
          c.l2 = l2;
          c.local_epochs = epochs;
          c.max_depth = depth;
          out.push_back(c);
        }
      }
    }
  }
  return out;
}

std::vector<std::size_t> assign_folds(std::span<const int> labels, std::size_t folds,
                                      std::uint64_t seed, bool& stratified) {
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::map<int, std::size_t> class_sizes;
  for (int y : labels) ++class_sizes[y];
  stratified = true;
  for (const auto& [_, size] : class_sizes) {
    if (size < folds) stratified = false;
  }

  std::vector<std::size_t> fold(n, 0);
  if (!stratified) {
    for (std::size_t i = 0; i < n; ++i) fold[order[i]] = i % folds;
    return fold;
  }
  // Round-robin within each class continues where the previous class ended,
  // which keeps fold sizes within one of each other.
  std::size_t next = 0;
  for (const auto& [cls, _] : class_sizes) {
    for (std::size_t i : order) {
      if (labels[i] != cls) continue;
      fold[i] = next;
      next = (next + 1) % folds;
    }
  }
  return fold;
}

namespace {

double fold_accuracy(const TrainConfig& config, const Dataset& train, const Dataset& valid,
                     std::size_t num_classes, bool& diverged) {
  std::size_t correct = 0;
  if (config.kind == ModelKind::decision_tree) {
    const DecisionTree tree = cart_train(train.features, train.labels, num_classes, config.max_depth,
                                         config.min_leaf, config.seed);
    for (std::size_t i = 0; i < valid.size(); ++i) {
      correct += tree.predict(valid.features.row(i)) == valid.labels[i];
    }
  } else {
    ParameterVector params;
    try {
      params = train_linear(ParameterVector::zeros(config.kind, num_classes, train.features.cols()),
                            train, config);
      if (!std::isfinite(objective(params, train.features, train.labels, config.l2))) {
        throw NumericalError("non-finite loss");
      }
      for (double v : params.values) {
        if (!std::isfinite(v)) throw NumericalError("non-finite parameters");
      }
    } catch (const NumericalError&) {
      diverged = true;
      return 0.0;
    }
    for (std::size_t i = 0; i < valid.size(); ++i) {
      correct += predict_class(params, valid.features.row(i)) == valid.labels[i];
    }
  }
  return valid.size() ? static_cast<double>(correct) / static_cast<double>(valid.size()) : 0.0;
}

Dataset subset(const Dataset& data, const std::vector<std::size_t>& idx) {
  Dataset out;
  out.features = data.features.select_rows(idx);
  for (std::size_t i : idx) out.labels.push_back(data.labels[i]);
  return out;
}

}  // namespace

GridSearchResult grid_search(const std::vector<TrainConfig>& grid, std::size_t folds,
                             const Dataset& data, std::size_t num_classes, std::uint64_t seed) {
  if (grid.empty()) throw ValidationError("grid must be non-empty");
  if (folds < 2) throw ValidationError("cross-validation needs at least 2 folds");
  if (data.size() < folds) throw ValidationError("fewer samples than folds");

  GridSearchResult result;
  const auto fold_of = assign_folds(data.labels, folds, seed, result.stratified);
  std::vector<Dataset> train_parts(folds), valid_parts(folds);
  for (std::size_t f = 0; f < folds; ++f) {
    std::vector<std::size_t> tr, va;
    for (std::size_t i = 0; i < data.size(); ++i) (fold_of[i] == f ? va : tr).push_back(i);
    train_parts[f] = subset(data, tr);
    valid_parts[f] = subset(data, va);
  }

  for (std::size_t g = 0; g < grid.size(); ++g) {
    CvRow row;
    row.config = grid[g];
    for (std::size_t f = 0; f < folds; ++f) {
      row.fold_scores.push_back(
          fold_accuracy(grid[g], train_parts[f], valid_parts[f], num_classes, row.diverged));
    }
    row.mean_score = std::accumulate(row.fold_scores.begin(), row.fold_scores.end(), 0.0) /
                     static_cast<double>(folds);
    if (g == 0 || row.mean_score > result.table[result.best_index].mean_score) result.best_index = g;
    result.table.push_back(std::move(row));
  }
  result.best = result.table[result.best_index].config;
  return result;
}

json to_json(const GridSearchResult& r) {
  json table = json::array();
  for (const auto& row : r.table) {
    table.push_back({{"config", to_json(row.config)},
                     {"fold_scores", row.fold_scores},
                     {"mean_score", row.mean_score},
                     {"diverged", row.diverged}});
  }
  return {{"best", to_json(r.best)},
          {"best_index", r.best_index},
          {"stratified", r.stratified},
          {"table", std::move(table)}};
}

}  // namespace fedlake
