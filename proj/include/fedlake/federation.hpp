#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fedlake/catalog.hpp"
#include "fedlake/node_client.hpp"
#include "fedlake/query.hpp"

namespace fedlake {

enum class AggregationMode { unweighted, sample_weighted };

std::string_view to_string(AggregationMode m);
AggregationMode aggregation_mode_from_string(std::string_view s);

struct FedAvgEntry {
  std::string node_id;
  std::vector<double> params;
  std::size_t n_train = 0;
};

/// Averages the entries in the order given (the coordinator passes them
/// sorted by node id). Unweighted: (1/N) sum W_k. Sample weighted:
/// sum n_k W_k / sum n_k. Computed as a running mean so that identical
/// inputs come back bit-for-bit.
std::vector<double> fedavg(const std::vector<FedAvgEntry>& entries, AggregationMode mode);

struct FederationConfig {
  std::size_t rounds = 200;
  AggregationMode mode = AggregationMode::unweighted;
  std::chrono::milliseconds round_timeout = std::chrono::seconds(60);
  std::size_t min_nodes = 1;
  /// Stop when aggregated accuracy moves less than 1e-4 over 10 rounds.
  bool early_stop = false;
  BalanceConfig balance;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json to_json(const FederationConfig& c);
FederationConfig federation_config_from_json(const nlohmann::json& j, FederationConfig base = {});

/// Test metrics combined across nodes: `weighted` is the n_test-weighted
/// mean of node metrics (the headline figure), `pooled` is recomputed from
/// the summed confusion matrices.
struct AggregatedMetrics {
  double accuracy = 0.0;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double auc_roc = 0.0;
  long long n_test = 0;
  MetricsReport pooled;
};

AggregatedMetrics aggregate_metrics(const std::vector<MetricsReport>& per_node);

struct RoundRecord {
  std::size_t round = 0;
  std::vector<std::string> participants;
  std::vector<std::size_t> n_train;
  std::vector<std::string> skipped;
  AggregatedMetrics metrics;
};

struct GlobalModel {
  Pattern pattern = Pattern::ae_risk;
  ParameterVector params;
  /// Decision-tree kind only: one tree per node, combined by voting.
  std::vector<DecisionTree> trees;
  std::vector<std::string> tree_nodes;
  std::vector<std::string> features;
  std::vector<std::string> class_names;
  std::string fingerprint;
  TrainConfig train_config;
  AggregationMode mode = AggregationMode::unweighted;
  std::vector<RoundRecord> history;
  bool aborted = false;
  std::string abort_reason;

  std::size_t rounds() const { return history.size(); }
};

nlohmann::json to_json(const GlobalModel& m);
GlobalModel global_model_from_json(const nlohmann::json& j);
/// Compact form for API responses: no parameter values, last round only.
nlohmann::json summary_json(const GlobalModel& m);

/// Global-vocabulary counts from one node: key = group_by values + target value.
struct CountPartial {
  std::string node_id;
  std::vector<std::string> group_by;
  std::string target;
  std::map<std::vector<std::string>, long long> counts;
};

/// Nested object keyed by group_by values in order; each leaf is
/// {"counts":{value:n}, "total":n, "most_likely":value, "share":x}.
nlohmann::json merge_count_trees(const std::vector<CountPartial>& partials);

/// Majority vote over per-node trees with leaf-purity and label tie-breaks.
std::string federated_tree_vote(const GlobalModel& model, std::span<const double> x);

struct NodePartial {
  std::string node_id;
  bool ok = false;
  std::string error_code;
  std::string error;
  double elapsed_ms = 0.0;
  std::size_t items = 0;
};

struct AggregatedResult {
  AnalyticalQuery query;
  std::string text;
  Aggregation aggregation = Aggregation::row_union;
  std::vector<NodePartial> partials;
  nlohmann::json merged;
  bool partial = false;
  std::vector<std::string> failed_nodes;
  std::string digest;
};

nlohmann::json to_json(const AggregatedResult& r);

struct NodeHealth {
  std::string node_id;
  bool healthy = false;
  std::optional<NodeMetadata> metadata;
  std::string error;
};

nlohmann::json to_json(const NodeHealth& h);

/// Runs federated queries and training sessions over a fixed node registry.
/// Queries may run concurrently with each other and with training; at most
/// one training session per pattern runs at a time.
class Coordinator {
 public:
  Coordinator(std::shared_ptr<CatalogStore> catalog, std::vector<std::shared_ptr<NodeClient>> nodes,
              FederationConfig config = {});

  const CatalogStore& catalog() const { return *catalog_; }
  const FederationConfig& config() const { return config_; }
  std::vector<std::string> node_ids() const;

  AggregatedResult run_query(const std::string& text);
  GlobalModel train(Pattern pattern, const TrainConfig& train_config,
                    std::optional<FederationConfig> overrides = std::nullopt);
  std::vector<std::pair<std::string, CacheInfo>> build_caches(Pattern pattern,
                                                              const FederationConfig& config);
  std::vector<NodeHealth> node_health();

  std::optional<GlobalModel> model(Pattern pattern) const;
  void set_model(GlobalModel model);

 private:
  nlohmann::json infer(const AnalyticalQuery& query) const;
  NodeClient& client(const std::string& node_id) const;

  std::shared_ptr<CatalogStore> catalog_;
  std::vector<std::shared_ptr<NodeClient>> nodes_;
  FederationConfig config_;

  mutable std::mutex models_mutex_;
  std::map<Pattern, GlobalModel> models_;
  std::map<Pattern, std::unique_ptr<std::mutex>> training_locks_;
};

/// Centralized oracle used by tests and the acceptance suite: applies a
/// global filter to already-translated rows.
bool matches(const std::vector<Predicate>& filter, const Record& row);

/// Encodes a prediction query's equality literals into the model's feature
/// layout. Categorical features without a literal get an all-zero block.
/// Numeric features without a literal take the midpoint of the interval left
/// by any bounds in the filter, or of their declared range when unbounded.
/// Unspecified names are returned.
std::vector<double> encode_query_features(const AnalyticalQuery& query, const GlobalSchema& schema,
                                          const EncodingLayout& layout,
                                          std::vector<std::string>& unspecified);

}  // namespace fedlake
