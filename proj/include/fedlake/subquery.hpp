#pragma once

#include <map>
#include <string>
#include <vector>

#include "fedlake/value.hpp"

namespace fedlake {

/// Predicate over a node's local column names and local value encodings.
struct LocalPredicate {
  std::string column;
  Comparator op = Comparator::eq;
  Value value;

  bool operator==(const LocalPredicate&) const = default;
};

enum class SubQueryMode { select_rows, count_by };

/// A query fragment in a node's own vocabulary.
struct LocalSubQuery {
  std::string table;
  std::vector<LocalPredicate> filter;
  SubQueryMode mode = SubQueryMode::select_rows;
  /// count_by: grouping columns, in order.
  std::vector<std::string> group_columns;
  /// select_rows: projected columns; empty means every column.
  std::vector<std::string> columns;
  /// Set when a categorical literal has no encoding at the node, so the
  /// conjunction can match nothing there.
  bool unsatisfiable = false;

  bool operator==(const LocalSubQuery&) const = default;
};

/// What a node returns for a LocalSubQuery. Exactly one of rows/counts is
/// meaningful, according to `mode`.
struct SubQueryResult {
  SubQueryMode mode = SubQueryMode::select_rows;
  std::vector<Record> rows;
  /// Group-key tuple (local values) -> count.
  std::map<std::vector<std::string>, long long> counts;
};

nlohmann::json to_json(const LocalSubQuery& sq);
LocalSubQuery subquery_from_json(const nlohmann::json& j);
nlohmann::json to_json(const SubQueryResult& r);
SubQueryResult subquery_result_from_json(const nlohmann::json& j);

}  // namespace fedlake
