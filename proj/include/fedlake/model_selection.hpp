#pragma once

#include <cstdint>
#include <vector>

#include "fedlake/linear_model.hpp"
#include "fedlake/matrix.hpp"

namespace fedlake {

/// Hyperparameter axes; the grid is their Cartesian product, expanded with
/// learning_rates outermost and max_depths innermost.
struct HyperGrid {
  std::vector<double> learning_rates;
  std::vector<double> l2s;
  std::vector<std::size_t> local_epochs;
  std::vector<std::size_t> max_depths;
};

/// Expands `grid` over `base`; axes left empty keep the base value.
std::vector<TrainConfig> expand_grid(const TrainConfig& base, const HyperGrid& grid);

/// Fold assignment for k-fold CV. Stratified round-robin within each class
/// after a seeded shuffle; plain round-robin when a class has fewer than
/// `folds` members (flagged through `stratified`).
std::vector<std::size_t> assign_folds(std::span<const int> labels, std::size_t folds,
                                      std::uint64_t seed, bool& stratified);

struct CvRow {
  TrainConfig config;
  std::vector<double> fold_scores;
  double mean_score = 0.0;
  bool diverged = false;
};

struct GridSearchResult {
  TrainConfig best;
  std::size_t best_index = 0;
  std::vector<CvRow> table;
  bool stratified = true;
};

/// Exhaustive search; score = mean validation accuracy across folds. A
/// configuration whose training produces non-finite values scores 0 on that
/// fold. Ties keep the earliest grid entry.
GridSearchResult grid_search(const std::vector<TrainConfig>& grid, std::size_t folds,
                             const Dataset& data, std::size_t num_classes, std::uint64_t seed);

nlohmann::json to_json(const GridSearchResult& r);

}  // namespace fedlake
