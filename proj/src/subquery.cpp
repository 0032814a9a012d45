#include "fedlake/subquery.hpp"

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

std::string_view mode_name(SubQueryMode m) {
  return m == SubQueryMode::select_rows ? "select_rows" : "count_by";
}

SubQueryMode mode_from(const std::string& s) {
  if (s == "select_rows") return SubQueryMode::select_rows;
  if (s == "count_by") return SubQueryMode::count_by;
  throw ValidationError("unknown subquery mode: " + s);
}

}  // namespace

json to_json(const LocalSubQuery& sq) {
  json filter = json::array();
  for (const auto& p : sq.filter) {
    filter.push_back({{"column", p.column}, {"op", to_string(p.op)}, {"value", to_json(p.value)}});
  }
  return {{"table", sq.table},
          {"filter", std::move(filter)},
          {"mode", mode_name(sq.mode)},
          {"group_columns", sq.group_columns},
          {"columns", sq.columns},
          {"unsatisfiable", sq.unsatisfiable}};
}

LocalSubQuery subquery_from_json(const json& j) {
  if (!j.is_object()) throw ValidationError("subquery must be an object");
  LocalSubQuery sq;
  sq.table = j.value("table", "");
  for (const auto& p : j.value("filter", json::array())) {
    LocalPredicate lp;
    lp.column = p.at("column").get<std::string>();
    if (!parse_comparator(p.at("op").get<std::string>(), lp.op)) {
      throw ValidationError("unknown comparator: " + p.at("op").dump());
    }
    lp.value = value_from_json(p.at("value"));
    sq.filter.push_back(std::move(lp));
  }
  sq.mode = mode_from(j.value("mode", "select_rows"));
  sq.group_columns = j.value("group_columns", std::vector<std::string>{});
  sq.columns = j.value("columns", std::vector<std::string>{});
  sq.unsatisfiable = j.value("unsatisfiable", false);
  return sq;
}

json to_json(const SubQueryResult& r) {
  json out = {{"mode", mode_name(r.mode)}};
  if (r.mode == SubQueryMode::select_rows) {
    json rows = json::array();
    for (const auto& row : r.rows) rows.push_back(to_json(row));
    out["rows"] = std::move(rows);
  } else {
    json groups = json::array();
    for (const auto& [key, count] : r.counts) groups.push_back({{"key", key}, {"count", count}});
    out["groups"] = std::move(groups);
  }
  return out;
}

SubQueryResult subquery_result_from_json(const json& j) {
  SubQueryResult r;
  r.mode = mode_from(j.at("mode").get<std::string>());
  if (r.mode == SubQueryMode::select_rows) {
    for (const auto& row : j.at("rows")) r.rows.push_back(record_from_json(row));
  } else {
    for (const auto& g : j.at("groups")) {
      r.counts[g.at("key").get<std::vector<std::string>>()] += g.at("count").get<long long>();
    }
  }
  return r;
}

}  // namespace fedlake
