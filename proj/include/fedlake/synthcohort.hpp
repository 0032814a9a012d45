#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "fedlake/catalog.hpp"
#include "fedlake/datanode.hpp"

namespace fedlake {

/// One row of a conditional table: applies when every listed attribute
/// matches (categorical: value in the list; numeric: within [min, max]).
struct CohortCondition {
  std::vector<std::string> values;
  std::optional<double> min;
  std::optional<double> max;
};

struct CohortRule {
  std::map<std::string, CohortCondition> when;
  std::map<std::string, double> then;
};

struct NumericMarginal {
  enum class Shape { uniform, normal } shape = Shape::uniform;
  double a = 0.0;  // uniform low or normal mean
  double b = 1.0;  // uniform high or normal sd
  std::optional<std::pair<double, double>> clip;
};

/// How one attribute is drawn. Categorical attributes use either a marginal
/// or an ordered first-match rule table over earlier attributes; numeric
/// attributes use a NumericMarginal. `label` attributes get label noise.
struct CohortAttribute {
  AttributeDef def;
  std::map<std::string, double> marginal;
  std::vector<CohortRule> rules;
  NumericMarginal numeric;
  bool label = false;
};

struct CohortNode {
  std::string node_id;
  std::size_t rows = 0;
  std::string base_url;
  std::string table;
  std::map<std::string, std::string> columns;
  std::map<std::string, std::map<std::string, std::string>> values;
};

struct CohortSpec {
  std::uint64_t seed = 0;
  double label_noise = 0.0;
  int schema_version = 1;
  std::vector<CohortAttribute> attributes;
  std::vector<CohortNode> nodes;

  GlobalSchema schema() const;
  /// Probability sums, rule references, noise range, node mappings.
  void validate() const;
};

CohortSpec cohort_spec_from_json(const nlohmann::json& j);
nlohmann::json to_json(const CohortSpec& spec);

/// Three hospitals (France, Spain, the Netherlands) of 2,000 patients each,
/// with local column names and value encodings that differ per node.
CohortSpec default_cohort_spec();

struct GeneratedNode {
  NodeMapping mapping;
  /// Rows in global names and vocabulary.
  std::vector<Record> global_rows;
  /// The same rows as the node stores them.
  LocalDataset local;
  /// Per label attribute: noise-free value and whether noise flipped it.
  std::map<std::string, std::vector<std::string>> clean_labels;
  std::map<std::string, std::vector<bool>> flipped;
};

struct Cohort {
  GlobalSchema schema;
  std::vector<GeneratedNode> nodes;
  nlohmann::json manifest;

  /// {"version","attributes","nodes"} as load_catalog expects.
  nlohmann::json catalog_json() const;
  CatalogStore catalog() const;
  /// In-process nodes serving the generated data.
  std::vector<std::shared_ptr<DataNode>> data_nodes() const;
};

/// Deterministic for a given spec (including its seed).
Cohort generate_cohort(const CohortSpec& spec);

std::string to_csv(const LocalDataset& data);

/// Writes {node}.csv, {node}.mapping.json, catalog.json and manifest.json.
void write_cohort(const Cohort& cohort, const std::string& dir);

}  // namespace fedlake
