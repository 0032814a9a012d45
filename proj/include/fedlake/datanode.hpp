#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "fedlake/catalog.hpp"
#include "fedlake/linear_model.hpp"
#include "fedlake/metrics.hpp"
#include "fedlake/model_selection.hpp"
#include "fedlake/pattern.hpp"
#include "fedlake/preprocess.hpp"
#include "fedlake/subquery.hpp"
#include "fedlake/tree.hpp"

namespace fedlake {

struct ColumnDecl {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
};

struct LocalDataset {
  std::string table;
  std::vector<ColumnDecl> columns;
  std::vector<std::vector<Value>> rows;

  std::size_t row_count() const { return rows.size(); }
  /// npos when absent.
  std::size_t column_index(const std::string& name) const;
};

struct IngestReport {
  std::size_t rows_read = 0;
  /// 1-based data-row numbers (header excluded) dropped for bad cells.
  std::vector<std::size_t> dropped_rows;
};

struct IngestResult {
  LocalDataset dataset;
  IngestReport report;
};

/// Reads a comma-separated UTF-8 file whose header names every declared
/// column (extra columns are ignored). Rows with unparseable numeric cells
/// or empty categorical cells are dropped and reported.
IngestResult ingest_csv(const std::string& path, const std::string& table,
                        const std::vector<ColumnDecl>& declared);
IngestResult ingest_csv_text(const std::string& text, const std::string& table,
                             const std::vector<ColumnDecl>& declared);

/// What a node knows about the federation: the global schema and its own
/// mapping. Serialized as {"schema": {...}, "node": {...catalog node entry}}.
struct NodeDocument {
  GlobalSchema schema;
  NodeMapping mapping;

  /// Mapped local columns with kinds taken from the schema, in schema order.
  std::vector<ColumnDecl> declared_columns() const;
};

NodeDocument node_document_from_json(const nlohmann::json& j);
NodeDocument load_node_document(const std::string& path);
nlohmann::json to_json(const NodeDocument& doc);

struct NodeMetadata {
  std::string node_id;
  std::string table;
  std::vector<ColumnDecl> columns;
  std::size_t row_count = 0;
};

struct CacheRequest {
  Pattern pattern = Pattern::ae_risk;
  BalanceConfig balance;
  double split_fraction = 0.8;
  std::uint64_t seed = 0;

  /// Stable across nodes: schema version, pattern, balancing, split, seed.
  std::string fingerprint(int schema_version) const;
};

struct CacheInfo {
  std::string fingerprint;
  std::size_t n_train = 0;
  std::size_t n_test = 0;
  std::size_t n_synthetic = 0;
  std::size_t feature_width = 0;
  std::size_t num_classes = 0;
  bool rebuilt = false;
  bool fraction_warning = false;
  BalanceReport balance;
};

/// Preprocessed matrices for one prediction pattern.
struct TrainingCache {
  std::string fingerprint;
  EncodingLayout layout;
  std::vector<std::string> class_names;
  /// Dataset row indices of each split (clean rows only).
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> test_rows;
  /// Training split after balancing; the first `n_original_train` rows are
  /// real, the rest synthetic.
  Dataset train;
  std::size_t n_original_train = 0;
  Dataset test;
  BalanceReport balance;
  bool fraction_warning = false;
};

struct RoundRequest {
  Pattern pattern = Pattern::ae_risk;
  std::size_t round = 1;
  ParameterVector params;
  TrainConfig config;
  /// Optional; when set it must match the node's cache.
  std::string fingerprint;
};

struct RoundResult {
  ParameterVector params;
  std::size_t n_train = 0;
};

struct ModelLogEntry {
  std::size_t session = 0;
  std::size_t round = 0;
  Pattern pattern = Pattern::ae_risk;
  std::string digest;
  MetricsReport metrics;
};

/// An autonomous hospital node. Read-only requests run concurrently; at most
/// one training request per pattern runs at a time and others get BusyError.
class DataNode {
 public:
  DataNode(NodeDocument doc, LocalDataset data, IngestReport report = {});

  static std::shared_ptr<DataNode> from_files(const std::string& csv_path,
                                              const std::string& mapping_path);

  const std::string& node_id() const { return doc_.mapping.node_id(); }
  const NodeDocument& document() const { return doc_; }
  const IngestReport& ingest_report() const { return report_; }

  NodeMetadata metadata() const;
  SubQueryResult execute_subquery(const LocalSubQuery& sq) const;

  CacheInfo build_training_cache(const CacheRequest& request);
  std::shared_ptr<const TrainingCache> cache(Pattern pattern) const;

  RoundResult local_train_round(const RoundRequest& request);
  MetricsReport local_evaluate(Pattern pattern, const ParameterVector& params);
  MetricsReport local_evaluate_trees(Pattern pattern, const std::vector<DecisionTree>& trees);
  DecisionTree train_tree(Pattern pattern, const TrainConfig& config);
  GridSearchResult select_model(Pattern pattern, const std::vector<TrainConfig>& grid,
                                std::size_t folds, std::uint64_t seed);

  std::vector<ModelLogEntry> model_log(Pattern pattern) const;
  std::optional<MetricsReport> last_metrics(Pattern pattern) const;

 private:
  std::shared_ptr<const TrainingCache> require_cache(Pattern pattern) const;
  std::unique_lock<std::mutex> lock_training(Pattern pattern);
  std::vector<Record> global_rows() const;
  MetricsReport evaluate_linear(const TrainingCache& cache, const ParameterVector& params) const;

  NodeDocument doc_;
  LocalDataset data_;
  IngestReport report_;

  mutable std::mutex state_mutex_;
  std::map<Pattern, std::shared_ptr<const TrainingCache>> caches_;
  std::map<Pattern, std::vector<ModelLogEntry>> logs_;
  std::map<Pattern, MetricsReport> last_metrics_;
  std::map<Pattern, std::unique_ptr<std::mutex>> training_locks_;
};

nlohmann::json to_json(const NodeMetadata& m);
NodeMetadata node_metadata_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CacheRequest& r);
CacheRequest cache_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CacheInfo& c);
CacheInfo cache_info_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoundRequest& r);
RoundRequest round_request_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RoundResult& r);
RoundResult round_result_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ModelLogEntry& e);
ModelLogEntry model_log_entry_from_json(const nlohmann::json& j);

/// Accepts "AE_TYPE", "ae_type" and the other prediction spellings.
Pattern prediction_pattern_from_text(const std::string& text);

}  // namespace fedlake
