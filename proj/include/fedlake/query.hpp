#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fedlake/catalog.hpp"
#include "fedlake/pattern.hpp"
#include "fedlake/subquery.hpp"

namespace fedlake {

/// Parsed analytical query.
///
/// Grammar (keywords case-insensitive, literals case-sensitive):
///
///     query  := SELECT [where]
///             | TREE ident BY ident {"," ident} [where]
///             | PREDICT (treatment | ae_caused | ae_risk | ae_type) [where]
///     where  := WHERE cond {AND cond}
///     cond   := ident op literal
///     op     := "=" | "!=" | "<" | "<=" | ">" | ">="
///     literal:= 'text' | ['-'] digits ['.' digits]
///
/// Filters are pure conjunctions; OR and NOT are rejected.
struct AnalyticalQuery {
  Pattern pattern = Pattern::retrieve;
  std::vector<Predicate> filter;
  std::optional<std::string> target;
  std::vector<std::string> group_by;

  bool operator==(const AnalyticalQuery&) const = default;

  /// Filter attributes, target and group-by, deduplicated, in first-use order.
  std::vector<std::string> referenced_attributes() const;
};

enum class Aggregation { row_union, count_tree_merge, model_inference };

std::string_view to_string(Aggregation a);
Aggregation aggregation_for(Pattern p);

struct QueryPlan {
  AnalyticalQuery query;
  /// Sorted by node_id.
  std::vector<std::pair<std::string, LocalSubQuery>> subqueries;
  Aggregation aggregation = Aggregation::row_union;
};

/// Throws ParseError (syntax_error, unknown_attribute, type_mismatch,
/// unknown_pattern) positioned at the offending token.
AnalyticalQuery parse_query(const std::string& text, const GlobalSchema& schema);

/// Canonical single-line text; parse_query(render_query(q)) == q.
std::string render_query(const AnalyticalQuery& query);

/// One subquery per node covering every referenced attribute. Throws
/// FederationError("unanswerable") when no node qualifies.
QueryPlan plan_query(const AnalyticalQuery& query, const CatalogStore& catalog);

nlohmann::json to_json(const AnalyticalQuery& q);

}  // namespace fedlake
