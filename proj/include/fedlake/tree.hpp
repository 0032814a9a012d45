#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedlake/matrix.hpp"
#include "json.hpp"

namespace fedlake {

/// Binary CART classifier over continuous features.
struct DecisionTree {
  struct Node {
    /// -1 marks a leaf.
    int feature = -1;
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    /// Per-class training counts reaching this node.
    std::vector<long long> counts;
    int prediction = 0;
  };

  std::size_t num_classes = 0;
  std::vector<Node> nodes;

  const Node& leaf_for(std::span<const double> x) const;
  int predict(std::span<const double> x) const;
  /// Share of the majority class in the leaf reached by x.
  double leaf_purity(std::span<const double> x) const;
  /// Normalized class counts of the reached leaf.
  std::vector<double> leaf_distribution(std::span<const double> x) const;
  std::size_t depth() const;
};

/// Greedy Gini splits on midpoints between distinct sorted values. Ties go to
/// the lowest feature index, then the lowest threshold. `seed` is accepted
/// for interface symmetry; the builder itself uses no randomness.
DecisionTree cart_train(const Matrix& features, std::span<const int> labels,
                        std::size_t num_classes, std::size_t max_depth, std::size_t min_leaf,
                        std::uint64_t seed = 0);

/// Majority vote across trees; ties go to the label with the highest summed
/// leaf purity among its voters, then the lexicographically smallest name.
int vote_trees(std::span<const DecisionTree> trees, std::span<const double> x,
               const std::vector<std::string>& class_names);

/// Vote shares per class for the same ensemble.
std::vector<double> vote_distribution(std::span<const DecisionTree> trees, std::span<const double> x);

nlohmann::json to_json(const DecisionTree& tree);
DecisionTree decision_tree_from_json(const nlohmann::json& j);

}  // namespace fedlake
