#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <vector>

#include "fedlake/datanode.hpp"

namespace fedlake {

/// The coordinator's view of one node. Implementations translate transport
/// failures into FederationError and node-side errors back into the
/// library's exception types.
class NodeClient {
 public:
  virtual ~NodeClient() = default;

  virtual const std::string& node_id() const = 0;
  virtual bool healthy() = 0;
  virtual NodeMetadata metadata() = 0;
  virtual SubQueryResult subquery(const LocalSubQuery& sq) = 0;
  virtual CacheInfo build_cache(const CacheRequest& request) = 0;
  virtual RoundResult train_round(const RoundRequest& request) = 0;
  virtual MetricsReport evaluate(Pattern pattern, const ParameterVector& params) = 0;
  virtual MetricsReport evaluate_trees(Pattern pattern, const std::vector<DecisionTree>& trees) = 0;
  virtual DecisionTree train_tree(Pattern pattern, const TrainConfig& config) = 0;
  virtual std::vector<ModelLogEntry> model_log(Pattern pattern) = 0;
};

/// Calls an in-process DataNode directly.
class LocalNodeClient : public NodeClient {
 public:
  explicit LocalNodeClient(std::shared_ptr<DataNode> node) : node_(std::move(node)) {}

  const std::string& node_id() const override { return node_->node_id(); }
  bool healthy() override { return true; }
  NodeMetadata metadata() override { return node_->metadata(); }
  SubQueryResult subquery(const LocalSubQuery& sq) override { return node_->execute_subquery(sq); }
  CacheInfo build_cache(const CacheRequest& request) override {
    return node_->build_training_cache(request);
  }
  RoundResult train_round(const RoundRequest& request) override {
    return node_->local_train_round(request);
  }
  MetricsReport evaluate(Pattern pattern, const ParameterVector& params) override {
    return node_->local_evaluate(pattern, params);
  }
  MetricsReport evaluate_trees(Pattern pattern, const std::vector<DecisionTree>& trees) override {
    return node_->local_evaluate_trees(pattern, trees);
  }
  DecisionTree train_tree(Pattern pattern, const TrainConfig& config) override {
    return node_->train_tree(pattern, config);
  }
  std::vector<ModelLogEntry> model_log(Pattern pattern) override { return node_->model_log(pattern); }

  const std::shared_ptr<DataNode>& node() const { return node_; }

 private:
  std::shared_ptr<DataNode> node_;
};

/// Talks to a node's HTTP API at `base_url` (e.g. "http://127.0.0.1:8101").
class HttpNodeClient : public NodeClient {
 public:
  HttpNodeClient(std::string node_id, std::string base_url, std::string token,
                 std::chrono::milliseconds timeout = std::chrono::seconds(30));

  const std::string& node_id() const override { return node_id_; }
  bool healthy() override;
  NodeMetadata metadata() override;
  SubQueryResult subquery(const LocalSubQuery& sq) override;
  CacheInfo build_cache(const CacheRequest& request) override;
  RoundResult train_round(const RoundRequest& request) override;
  MetricsReport evaluate(Pattern pattern, const ParameterVector& params) override;
  MetricsReport evaluate_trees(Pattern pattern, const std::vector<DecisionTree>& trees) override;
  DecisionTree train_tree(Pattern pattern, const TrainConfig& config) override;
  std::vector<ModelLogEntry> model_log(Pattern pattern) override;

 private:
  nlohmann::json get(const std::string& path);
  nlohmann::json post(const std::string& path, const nlohmann::json& body);

  std::string node_id_;
  std::string base_url_;
  std::string token_;
  std::chrono::milliseconds timeout_;
};

/// Clients for every node in the catalog, addressed by their base_url.
std::vector<std::shared_ptr<NodeClient>> http_clients_for(const CatalogStore& catalog,
                                                          const std::string& token,
                                                          std::chrono::milliseconds timeout);

/// In-process nodes for every catalog entry, read from
/// `dir`/{node_id}.csv and `dir`/{node_id}.mapping.json.
std::vector<std::shared_ptr<NodeClient>> local_clients_from_dir(const CatalogStore& catalog,
                                                                const std::string& dir);

}  // namespace fedlake
