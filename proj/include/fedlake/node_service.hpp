#pragma once

#include <memory>
#include <string>

#include "fedlake/datanode.hpp"

namespace fedlake {

/// HTTP front of a DataNode. Every route requires the `X-Fed-Token` header.
///
///   GET  /health              {"status":"ok","node_id":...}
///   GET  /metadata            NodeMetadata
///   POST /subquery            LocalSubQuery -> SubQueryResult
///   POST /train/cache         CacheRequest -> CacheInfo
///   POST /train/round         RoundRequest -> RoundResult
///   POST /train/evaluate      {pattern, model | trees} -> MetricsReport
///   POST /train/tree          {pattern, config} -> DecisionTree
///   POST /train/select        {pattern, grid:[TrainConfig], folds, seed} -> CV table
///   GET  /metrics/{pattern}   last MetricsReport (404 before any evaluation)
///   GET  /modellog/{pattern}  {"pattern":..., "entries":[ModelLogEntry]}
class NodeService {
 public:
  NodeService(std::shared_ptr<DataNode> node, std::string token);
  ~NodeService();
  NodeService(const NodeService&) = delete;
  NodeService& operator=(const NodeService&) = delete;

  /// Binds and serves on a background thread; port 0 picks a free port.
  /// Returns the bound port. Throws ValidationError when binding fails.
  int start(const std::string& host, int port);
  /// Serves on the calling thread until stop().
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace fedlake
