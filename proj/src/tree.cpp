#include "fedlake/tree.hpp"

#include <algorithm>
#include <numeric>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

double gini(const std::vector<long long>& counts, long long total) {
  if (total == 0) return 0.0;
  double sum_sq = 0.0;
  for (long long c : counts) {
    const double p = static_cast<double>(c) / static_cast<double>(total);
    sum_sq += p * p;
  }
  return 1.0 - sum_sq;
}

int majority(const std::vector<long long>& counts) {
  return static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

class Builder {
 public:
  Builder(const Matrix& x, std::span<const int> y, std::size_t num_classes, std::size_t max_depth,
          std::size_t min_leaf)
      : x_(x), y_(y), k_(num_classes), max_depth_(max_depth), min_leaf_(std::max<std::size_t>(1, min_leaf)) {}

  DecisionTree build() {
    tree_.num_classes = k_;
    std::vector<std::size_t> all(y_.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    grow(all, 0);
    return std::move(tree_);
  }

 private:
  int grow(const std::vector<std::size_t>& idx, std::size_t depth) {
    const int id = static_cast<int>(tree_.nodes.size());
    tree_.nodes.emplace_back();
    std::vector<long long> counts(k_, 0);
    for (std::size_t i : idx) ++counts[static_cast<std::size_t>(y_[i])];
    tree_.nodes[id].counts = counts;
    tree_.nodes[id].prediction = majority(counts);

    const bool pure = std::count_if(counts.begin(), counts.end(), [](long long c) { return c > 0; }) <= 1;
    if (pure || depth >= max_depth_ || idx.size() < 2 * min_leaf_) return id;

    int best_feature = -1;
    double best_threshold = 0.0;
    double best_impurity = 0.0;
    const auto total = static_cast<long long>(idx.size());
    std::vector<std::pair<double, int>> column(idx.size());
    for (std::size_t f = 0; f < x_.cols(); ++f) {
      for (std::size_t n = 0; n < idx.size(); ++n) column[n] = {x_(idx[n], f), y_[idx[n]]};
      std::sort(column.begin(), column.end());
      std::vector<long long> left(k_, 0);
      std::vector<long long> right = counts;
      for (std::size_t n = 0; n + 1 < column.size(); ++n) {
        ++left[static_cast<std::size_t>(column[n].second)];
        --right[static_cast<std::size_t>(column[n].second)];
        if (column[n].first == column[n + 1].first) continue;
        const auto nl = static_cast<long long>(n + 1);
        const long long nr = total - nl;
        if (nl < static_cast<long long>(min_leaf_) || nr < static_cast<long long>(min_leaf_)) continue;
        const double impurity =
            (static_cast<double>(nl) * gini(left, nl) + static_cast<double>(nr) * gini(right, nr)) /
            static_cast<double>(total);
        if (best_feature < 0 || impurity < best_impurity - 1e-12) {
          best_feature = static_cast<int>(f);
          best_threshold = 0.5 * (column[n].first + column[n + 1].first);
          best_impurity = impurity;
        }
      }
    }
    if (best_feature < 0) return id;

    std::vector<std::size_t> l, r;
    for (std::size_t i : idx) {
      (x_(i, static_cast<std::size_t>(best_feature)) <= best_threshold ? l : r).push_back(i);
    }
    tree_.nodes[id].feature = best_feature;
    tree_.nodes[id].threshold = best_threshold;
    const int left_id = grow(l, depth + 1);
    tree_.nodes[id].left = left_id;
    const int right_id = grow(r, depth + 1);
    tree_.nodes[id].right = right_id;
    return id;
  }

  const Matrix& x_;
  std::span<const int> y_;
  std::size_t k_;
  std::size_t max_depth_;
  std::size_t min_leaf_;
  DecisionTree tree_;
};

}  // namespace

const DecisionTree::Node& DecisionTree::leaf_for(std::span<const double> x) const {
  if (nodes.empty()) throw ValidationError("empty decision tree");
  std::size_t at = 0;
  while (nodes[at].feature >= 0) {
    at = static_cast<std::size_t>(x[static_cast<std::size_t>(nodes[at].feature)] <= nodes[at].threshold
                                      ? nodes[at].left
                                      : nodes[at].right);
  }
  return nodes[at];
}

int DecisionTree::predict(std::span<const double> x) const { return leaf_for(x).prediction; }

double DecisionTree::leaf_purity(std::span<const double> x) const {
  const Node& leaf = leaf_for(x);
  const long long total = std::accumulate(leaf.counts.begin(), leaf.counts.end(), 0LL);
  if (total == 0) return 0.0;
  return static_cast<double>(leaf.counts[static_cast<std::size_t>(leaf.prediction)]) /
         static_cast<double>(total);
}

std::vector<double> DecisionTree::leaf_distribution(std::span<const double> x) const {
  const Node& leaf = leaf_for(x);
  const long long total = std::accumulate(leaf.counts.begin(), leaf.counts.end(), 0LL);
  std::vector<double> out(num_classes, 0.0);
  for (std::size_t c = 0; c < num_classes; ++c) {
    out[c] = total ? static_cast<double>(leaf.counts[c]) / static_cast<double>(total) : 0.0;
  }
  return out;
}

std::size_t DecisionTree::depth() const {
  std::vector<std::size_t> d(nodes.size(), 0);
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    best = std::max(best, d[i]);
    if (nodes[i].feature >= 0) {
      d[static_cast<std::size_t>(nodes[i].left)] = d[i] + 1;
      d[static_cast<std::size_t>(nodes[i].right)] = d[i] + 1;
    }
  }
  return best;
}

DecisionTree cart_train(const Matrix& features, std::span<const int> labels, std::size_t num_classes,
                        std::size_t max_depth, std::size_t min_leaf, std::uint64_t /*seed*/) {
  if (labels.empty()) throw ValidationError("CART needs at least one sample");
  if (features.rows() != labels.size()) throw ValidationError("feature/label length mismatch");
  return Builder(features, labels, num_classes, max_depth, min_leaf).build();
}

int vote_trees(std::span<const DecisionTree> trees, std::span<const double> x,
               const std::vector<std::string>& class_names) {
  if (trees.empty()) throw ValidationError("no trained trees to vote with", "no_model");
  const std::size_t k = trees.front().num_classes;
  std::vector<int> votes(k, 0);
  std::vector<double> purity(k, 0.0);
  for (const auto& t : trees) {
    const int label = t.predict(x);
    ++votes[static_cast<std::size_t>(label)];
    purity[static_cast<std::size_t>(label)] += t.leaf_purity(x);
  }
  int best = -1;
  for (std::size_t c = 0; c < k; ++c) {
    if (votes[c] == 0) continue;
    if (best < 0) {
      best = static_cast<int>(c);
      continue;
    }
    const auto b = static_cast<std::size_t>(best);
    if (votes[c] > votes[b] ||
        (votes[c] == votes[b] &&
         (purity[c] > purity[b] || (purity[c] == purity[b] && class_names[c] < class_names[b])))) {
      best = static_cast<int>(c);
    }
  }
  return best;
}

std::vector<double> vote_distribution(std::span<const DecisionTree> trees, std::span<const double> x) {
  if (trees.empty()) throw ValidationError("no trained trees to vote with", "no_model");
  std::vector<double> out(trees.front().num_classes, 0.0);
  for (const auto& t : trees) out[static_cast<std::size_t>(t.predict(x))] += 1.0;
  for (double& v : out) v /= static_cast<double>(trees.size());
  return out;
}

json to_json(const DecisionTree& tree) {
  json nodes = json::array();
  for (const auto& n : tree.nodes) {
    nodes.push_back({{"feature", n.feature},
                     {"threshold", n.threshold},
                     {"left", n.left},
                     {"right", n.right},
                     {"counts", n.counts},
                     {"prediction", n.prediction}});
  }
  return {{"num_classes", tree.num_classes}, {"nodes", std::move(nodes)}};
}

DecisionTree decision_tree_from_json(const json& j) {
  DecisionTree t;
  t.num_classes = j.at("num_classes").get<std::size_t>();
  for (const auto& n : j.at("nodes")) {
    DecisionTree::Node node;
    node.feature = n.at("feature").get<int>();
    node.threshold = n.at("threshold").get<double>();
    node.left = n.at("left").get<int>();
    node.right = n.at("right").get<int>();
    node.counts = n.at("counts").get<std::vector<long long>>();
    node.prediction = n.at("prediction").get<int>();
    t.nodes.push_back(std::move(node));
  }
  const auto count = static_cast<int>(t.nodes.size());
  for (const auto& n : t.nodes) {
    if (n.feature >= 0 && (n.left <= 0 || n.left >= count || n.right <= 0 || n.right >= count)) {
      throw ValidationError("malformed decision tree");
    }
  }
  return t;
}

}  // namespace fedlake
