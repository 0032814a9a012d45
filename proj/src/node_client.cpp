#include "fedlake/node_client.hpp"

#include <httplib.h>

#include "http_json.hpp"

namespace fedlake {

using nlohmann::json;

HttpNodeClient::HttpNodeClient(std::string node_id, std::string base_url, std::string token,
                               std::chrono::milliseconds timeout)
    : node_id_(std::move(node_id)),
      base_url_(std::move(base_url)),
      token_(std::move(token)),
      timeout_(timeout) {
  if (timeout_.count() <= 0) throw ValidationError("node timeout must be positive");
}

namespace {

httplib::Client make_client(const std::string& base_url, std::chrono::milliseconds timeout) {
  httplib::Client cli(base_url);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  return cli;
}

json decode(const httplib::Result& res, const std::string& where) {
  if (!res) {
    throw FederationError(where + ": " + httplib::to_string(res.error()), "node_unreachable");
  }
  if (res->status != 200) http::rethrow_remote(res->status, res->body, where);
  try {
    return json::parse(res->body);
  } catch (const json::parse_error& e) {
    throw FederationError(where + ": malformed response: " + e.what(), "node_protocol");
  }
}

}  // namespace

json HttpNodeClient::get(const std::string& path) {
  auto cli = make_client(base_url_, timeout_);
  return decode(cli.Get(path, {{"X-Fed-Token", token_}}), node_id_ + " GET " + path);
}

json HttpNodeClient::post(const std::string& path, const json& body) {
  auto cli = make_client(base_url_, timeout_);
  return decode(cli.Post(path, {{"X-Fed-Token", token_}}, body.dump(), "application/json"),
                node_id_ + " POST " + path);
}

bool HttpNodeClient::healthy() {
  try {
    return get("/health").value("status", "") == "ok";
  } catch (const Error&) {
    return false;
  }
}

NodeMetadata HttpNodeClient::metadata() { return node_metadata_from_json(get("/metadata")); }

SubQueryResult HttpNodeClient::subquery(const LocalSubQuery& sq) {
  return subquery_result_from_json(post("/subquery", to_json(sq)));
}

CacheInfo HttpNodeClient::build_cache(const CacheRequest& request) {
  return cache_info_from_json(post("/train/cache", to_json(request)));
}

RoundResult HttpNodeClient::train_round(const RoundRequest& request) {
  return round_result_from_json(post("/train/round", to_json(request)));
}

MetricsReport HttpNodeClient::evaluate(Pattern pattern, const ParameterVector& params) {
  return metrics_report_from_json(
      post("/train/evaluate", {{"pattern", pattern_name(pattern)}, {"model", to_json(params)}}));
}

MetricsReport HttpNodeClient::evaluate_trees(Pattern pattern, const std::vector<DecisionTree>& trees) {
  json arr = json::array();
  for (const auto& t : trees) arr.push_back(to_json(t));
  return metrics_report_from_json(
      post("/train/evaluate", {{"pattern", pattern_name(pattern)}, {"trees", std::move(arr)}}));
}

DecisionTree HttpNodeClient::train_tree(Pattern pattern, const TrainConfig& config) {
  return decision_tree_from_json(
      post("/train/tree", {{"pattern", pattern_name(pattern)}, {"config", to_json(config)}}));
}

std::vector<ModelLogEntry> HttpNodeClient::model_log(Pattern pattern) {
  const json j = get("/modellog/" + std::string(pattern_name(pattern)));
  std::vector<ModelLogEntry> out;
  for (const auto& e : j.at("entries")) out.push_back(model_log_entry_from_json(e));
  return out;
}

std::vector<std::shared_ptr<NodeClient>> http_clients_for(const CatalogStore& catalog,
                                                          const std::string& token,
                                                          std::chrono::milliseconds timeout) {
  std::vector<std::shared_ptr<NodeClient>> out;
  for (const auto& [id, mapping] : catalog.mappings()) {
    if (mapping.base_url().empty()) {
      throw ValidationError("node " + id + " has no base_url", "missing_base_url");
    }
    out.push_back(std::make_shared<HttpNodeClient>(id, mapping.base_url(), token, timeout));
  }
  return out;
}

std::vector<std::shared_ptr<NodeClient>> local_clients_from_dir(const CatalogStore& catalog,
                                                                const std::string& dir) {
  std::vector<std::shared_ptr<NodeClient>> out;
  for (const auto& [id, mapping] : catalog.mappings()) {
    const std::string base = dir + "/" + id;
    out.push_back(std::make_shared<LocalNodeClient>(DataNode::from_files(base + ".csv", base + ".mapping.json")));
  }
  return out;
}

}  // namespace fedlake
