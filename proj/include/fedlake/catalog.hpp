#pragma once

#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "fedlake/subquery.hpp"
#include "fedlake/value.hpp"

namespace fedlake {

struct AttributeDef {
  std::string name;
  AttributeKind kind = AttributeKind::categorical;
  std::vector<std::string> vocabulary;
  std::optional<std::string> unit;
  std::optional<std::pair<double, double>> range;

  bool categorical() const { return kind == AttributeKind::categorical; }
  /// Index of `value` in the vocabulary, or npos.
  std::size_t vocabulary_index(const std::string& value) const;
};

struct GlobalSchema {
  int version = 1;
  std::vector<AttributeDef> attributes;

  const AttributeDef* find(const std::string& name) const;
  const AttributeDef& at(const std::string& name) const;
  /// Position of the attribute in file order, which is also one-hot order.
  std::size_t index_of(const std::string& name) const;
  /// Throws ValidationError naming the offending path.
  void validate() const;
};

/// Per-node translation between global attributes and local columns.
class NodeMapping {
 public:
  NodeMapping() = default;
  NodeMapping(std::string node_id, std::string base_url, std::string table,
              std::map<std::string, std::string> columns,
              std::map<std::string, std::map<std::string, std::string>> values);

  /// Checks the mapping against `schema`; throws ValidationError.
  void validate(const GlobalSchema& schema, const std::string& path) const;

  const std::string& node_id() const { return node_id_; }
  const std::string& base_url() const { return base_url_; }
  const std::string& table() const { return table_; }
  const std::map<std::string, std::string>& columns() const { return columns_; }
  const std::map<std::string, std::map<std::string, std::string>>& values() const {
    return values_;
  }
  std::set<std::string> covered_attributes() const;
  bool covers(const std::string& attribute) const { return columns_.count(attribute) != 0; }

  const std::string& local_column(const std::string& attribute) const;
  /// Global attribute for a local column, or nullptr.
  const std::string* global_attribute(const std::string& column) const;
  /// Local encoding of a categorical global value; nullopt when the node
  /// has no encoding for it. Attributes without a value map pass through.
  std::optional<std::string> local_value(const AttributeDef& attr,
                                         const std::string& global_value) const;
  /// Inverse of local_value; nullopt when the local value is unknown.
  std::optional<std::string> global_value(const AttributeDef& attr,
                                          const std::string& local_value) const;

 private:
  std::string node_id_;
  std::string base_url_;
  std::string table_;
  std::map<std::string, std::string> columns_;
  std::map<std::string, std::map<std::string, std::string>> values_;
  std::map<std::string, std::string> column_to_attribute_;
  std::map<std::string, std::map<std::string, std::string>> inverse_values_;
};

struct SavedResult {
  std::string query_text;
  std::chrono::system_clock::time_point timestamp;
  std::string digest;
};

/// Schema + node mappings (immutable after load) and the append-only log of
/// aggregated results.
class CatalogStore {
 public:
  CatalogStore(GlobalSchema schema, std::map<std::string, NodeMapping> mappings);

  const GlobalSchema& schema() const { return schema_; }
  /// Sorted by node_id.
  const std::map<std::string, NodeMapping>& mappings() const { return mappings_; }

  /// Appends one entry; timestamps never go backwards. Thread-safe.
  void record_result(const std::string& query_text, const std::string& digest);
  std::vector<SavedResult> saved_results() const;

 private:
  struct ResultLog {
    mutable std::mutex mutex;
    std::vector<SavedResult> entries;
  };

  GlobalSchema schema_;
  std::map<std::string, NodeMapping> mappings_;
  std::unique_ptr<ResultLog> log_;
};

GlobalSchema schema_from_json(const nlohmann::json& j, const std::string& path = "");
nlohmann::json to_json(const GlobalSchema& schema);
NodeMapping node_mapping_from_json(const nlohmann::json& j, const GlobalSchema& schema,
                                   const std::string& path);
nlohmann::json to_json(const NodeMapping& mapping);

/// Parses and validates a catalog document (see README for the format).
CatalogStore load_catalog(const std::string& document);
CatalogStore load_catalog_file(const std::string& path);
nlohmann::json to_json(const CatalogStore& store);

/// Rewrites a global conjunction into the node's vocabulary. Throws
/// UncoveredAttributeError when a filter attribute is not mapped.
LocalSubQuery to_local(const std::vector<Predicate>& filter, const NodeMapping& mapping,
                       const GlobalSchema& schema);

/// Renames local columns to global attributes and decodes categorical cells.
std::vector<Record> to_global(const std::vector<Record>& rows, const NodeMapping& mapping,
                              const GlobalSchema& schema);

}  // namespace fedlake
