// fedlake command-line entry point.
//
// Exit status: 0 success, 1 user error (bad input, bad query, bad config),
// 2 federation error (nodes unreachable, no model, unanswerable query).
// Stdout carries only the JSON payload; diagnostics go to stderr.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <httplib.h>
#include <json.hpp>

#include "fedlake/error.hpp"
#include "fedlake/federation.hpp"
#include "fedlake/gateway.hpp"
#include "fedlake/node_service.hpp"
#include "fedlake/synthcohort.hpp"

using nlohmann::json;
using namespace fedlake;

namespace {

constexpr int kOk = 0;
constexpr int kUserError = 1;
constexpr int kFederationError = 2;

std::string env_or(const char* name, const std::string& fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

int fail(int status, const json& body) {
  std::cout << body.dump() << std::endl;
  std::cerr << "fedlake: " << body.at("error").at("message").get<std::string>() << std::endl;
  return status;
}

int exit_status_for(const std::exception& e) {
  if (dynamic_cast<const FederationError*>(&e) || dynamic_cast<const BusyError*>(&e)) return kFederationError;
  if (dynamic_cast<const Error*>(&e) || dynamic_cast<const json::exception*>(&e)) return kUserError;
  return kFederationError;
}

json error_json(const std::exception& e) {
  if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
    return {{"error", {{"code", pe->code()}, {"message", pe->what()}, {"line", pe->line()}, {"column", pe->column()}}}};
  }
  if (const auto* fe = dynamic_cast<const Error*>(&e)) return {{"error", {{"code", fe->code()}, {"message", fe->what()}}}};
  return {{"error", {{"code", "internal_error"}, {"message", e.what()}}}};
}

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read " + path, "io_error");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ValidationError(path + ": " + e.what(), "parse_error");
  }
}

struct FederationOptions {
  std::string catalog;
  std::string data_dir;
  std::string node_token;
  long long timeout_ms = 60000;
  std::string gateway;
  std::string token;

  void attach(CLI::App* cmd) {
    cmd->add_option("--catalog", catalog, "Catalog JSON (default: $FEDLAKE_CATALOG or <data-dir>/catalog.json)");
    cmd->add_option("--data-dir", data_dir, "Run the nodes in-process from a generated cohort directory");
    cmd->add_option("--node-token", node_token, "X-Fed-Token for node APIs (default: $FEDLAKE_NODE_TOKEN)");
    cmd->add_option("--timeout-ms", timeout_ms, "Per-request node timeout")->check(CLI::PositiveNumber);
    cmd->add_option("--gateway", gateway, "Send the request to a running gateway, e.g. http://127.0.0.1:8080");
    cmd->add_option("--token", token, "Bearer token for --gateway (default: $FEDLAKE_TOKEN)");
  }

  std::shared_ptr<Coordinator> coordinator() const {
    std::string path = catalog.empty() ? env_or("FEDLAKE_CATALOG", "") : catalog;
    if (path.empty() && !data_dir.empty()) path = data_dir + "/catalog.json";
    if (path.empty()) {
      throw ValidationError("no catalog: pass --catalog, --data-dir or set FEDLAKE_CATALOG", "missing_catalog");
    }
    auto store = std::make_shared<CatalogStore>(load_catalog_file(path));
    FederationConfig config;
    config.round_timeout = std::chrono::milliseconds(timeout_ms);
    std::vector<std::shared_ptr<NodeClient>> clients;
    if (!data_dir.empty()) {
      clients = local_clients_from_dir(*store, data_dir);
    } else {
      const std::string t = node_token.empty() ? env_or("FEDLAKE_NODE_TOKEN", "") : node_token;
      if (t.empty()) throw ValidationError("no node token: pass --node-token or set FEDLAKE_NODE_TOKEN");
      clients = http_clients_for(*store, t, config.round_timeout);
    }
    return std::make_shared<Coordinator>(store, std::move(clients), config);
  }

  /// Calls the gateway; returns the exit status after printing the body.
  int remote(const std::string& method, const std::string& path, const json& body) const {
    const std::string bearer = token.empty() ? env_or("FEDLAKE_TOKEN", "") : token;
    httplib::Client cli(gateway);
    const auto timeout = std::chrono::milliseconds(timeout_ms);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(std::chrono::hours(1));
    httplib::Headers headers = {{"Authorization", "Bearer " + bearer}};
    auto res = method == "GET" ? cli.Get(path, headers) : cli.Post(path, headers, body.dump(), "application/json");
    if (!res) {
      return fail(kFederationError,
                  {{"error", {{"code", "gateway_unreachable"}, {"message", httplib::to_string(res.error())}}}});
    }
    json payload;
    try {
      payload = json::parse(res->body);
    } catch (const json::parse_error&) {
      return fail(kFederationError, {{"error", {{"code", "gateway_protocol"}, {"message", res->body}}}});
    }
    if (res->status == 200) {
      std::cout << payload.dump() << std::endl;
      return kOk;
    }
    const int status = res->status >= 500 || res->status == 404 || res->status == 409 || res->status == 422
                           ? kFederationError
                           : kUserError;
    if (!payload.contains("error")) payload = {{"error", {{"code", "http_error"}, {"message", res->body}}}};
    return fail(status, payload);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedlake: federated analytics over hospital data nodes"};
  app.require_subcommand(1);

  // serve
  auto* serve = app.add_subcommand("serve", "Run the gateway");
  FederationOptions serve_fed;
  serve_fed.attach(serve);
  std::string tokens_path;
  std::string host = "127.0.0.1";
  int port = -1;
  serve->add_option("--tokens", tokens_path, "Token file (default: $FEDLAKE_TOKENS)");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port (default: $FEDLAKE_PORT or 8080)");
  std::vector<std::string> model_files;
  serve->add_option("--model", model_files, "Preload saved models");

  // node serve
  auto* node = app.add_subcommand("node", "Data node commands");
  node->require_subcommand(1);
  auto* node_serve = node->add_subcommand("serve", "Serve one hospital dataset");
  std::string node_data, node_mapping, node_token, node_host = "127.0.0.1";
  int node_port = 0;
  node_serve->add_option("--data", node_data, "CSV file")->required();
  node_serve->add_option("--mapping", node_mapping, "Node document: {\"schema\":..., \"node\":...}")->required();
  node_serve->add_option("--port", node_port, "Port")->required();
  node_serve->add_option("--host", node_host, "Bind address");
  node_serve->add_option("--token", node_token, "X-Fed-Token (default: $FEDLAKE_NODE_TOKEN)");

  // query
  auto* query = app.add_subcommand("query", "Run an analytical query");
  FederationOptions query_fed;
  query_fed.attach(query);
  std::string query_text;
  std::vector<std::string> query_models;
  query->add_option("text", query_text, "Query text")->required();
  query->add_option("--model", query_models, "Saved model(s) for PREDICT queries");

  // train
  auto* train = app.add_subcommand("train", "Run federated training for a prediction pattern");
  FederationOptions train_fed;
  train_fed.attach(train);
  std::string pattern_text, kind_text = "logistic", mode_text = "unweighted", save_path;
  TrainConfig tc;
  std::size_t min_nodes = 1;
  bool early_stop = false;
  std::string balance_text = "smote";
  train->add_option("--pattern", pattern_text, "treatment | ae_caused | ae_risk | ae_type")->required();
  train->add_option("--rounds", tc.rounds, "Federated rounds")->check(CLI::PositiveNumber);
  train->add_option("--kind", kind_text, "logistic | svm | decision_tree");
  train->add_option("--learning-rate", tc.learning_rate, "SGD step size");
  train->add_option("--local-epochs", tc.local_epochs, "Local epochs per round");
  train->add_option("--batch-size", tc.batch_size, "Minibatch size (0 = full batch)");
  train->add_option("--l2", tc.l2, "L2 penalty");
  train->add_option("--seed", tc.seed, "Seed");
  train->add_option("--max-depth", tc.max_depth, "Tree depth");
  train->add_option("--min-leaf", tc.min_leaf, "Tree minimum leaf size");
  train->add_option("--mode", mode_text, "unweighted | sample_weighted");
  train->add_option("--min-nodes", min_nodes, "Minimum participants per round");
  train->add_option("--balance", balance_text, "none | smote | adasyn");
  train->add_flag("--early-stop", early_stop, "Stop once accuracy plateaus");
  train->add_option("--save", save_path, "Write the trained model as JSON");

  // gen-cohort
  auto* gen = app.add_subcommand("gen-cohort", "Generate a synthetic multi-node cohort");
  std::string spec_path, out_dir;
  std::optional<std::uint64_t> gen_seed;
  bool print_spec = false;
  gen->add_option("--spec", spec_path, "Cohort spec JSON (default: built-in three-hospital cohort)");
  gen->add_option("--out", out_dir, "Output directory");
  gen->add_option("--seed", gen_seed, "Override the spec seed");
  gen->add_flag("--print-spec", print_spec, "Print the spec JSON instead of generating");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return kUserError;
  }

  try {
    if (*serve) {
      const std::string tp = tokens_path.empty() ? env_or("FEDLAKE_TOKENS", "") : tokens_path;
      if (tp.empty()) throw ValidationError("no token file: pass --tokens or set FEDLAKE_TOKENS");
      const int p = port >= 0 ? port : std::stoi(env_or("FEDLAKE_PORT", "8080"));
      auto coord = serve_fed.coordinator();
      for (const auto& f : model_files) coord->set_model(global_model_from_json(read_json_file(f)));
      Gateway gw(coord, TokenTable::load(tp));
      std::cerr << "fedlake: gateway listening on " << host << ":" << p << std::endl;
      gw.run(host, p);
      return kOk;
    }

    if (*node_serve) {
      const std::string t = node_token.empty() ? env_or("FEDLAKE_NODE_TOKEN", "") : node_token;
      if (t.empty()) throw ValidationError("no node token: pass --token or set FEDLAKE_NODE_TOKEN");
      auto dn = DataNode::from_files(node_data, node_mapping);
      const auto& report = dn->ingest_report();
      std::cerr << "fedlake: node " << dn->node_id() << " loaded " << dn->metadata().row_count << " rows";
      if (!report.dropped_rows.empty()) std::cerr << ", dropped " << report.dropped_rows.size() << " malformed";
      std::cerr << "; listening on " << node_host << ":" << node_port << std::endl;
      NodeService svc(dn, t);
      svc.run(node_host, node_port);
      return kOk;
    }

    if (*query) {
      if (!query_fed.gateway.empty()) return query_fed.remote("POST", "/query", {{"text", query_text}});
      auto coord = query_fed.coordinator();
      for (const auto& f : query_models) coord->set_model(global_model_from_json(read_json_file(f)));
      std::cout << to_json(coord->run_query(query_text)).dump() << std::endl;
      return kOk;
    }

    if (*train) {
      const Pattern p = prediction_pattern_from_text(pattern_text);
      tc.kind = model_kind_from_string(kind_text);
      FederationConfig fc;
      fc.rounds = tc.rounds;
      fc.mode = aggregation_mode_from_string(mode_text);
      fc.min_nodes = min_nodes;
      fc.early_stop = early_stop;
      fc.balance.method = balance_method_from_string(balance_text);
      fc.round_timeout = std::chrono::milliseconds(train_fed.timeout_ms);
      if (!train_fed.gateway.empty()) {
        return train_fed.remote("POST", "/train",
                                {{"pattern", pattern_name(p)},
                                 {"rounds", tc.rounds},
                                 {"train_config", to_json(tc)},
                                 {"federation", to_json(fc)}});
      }
      auto coord = train_fed.coordinator();
      const GlobalModel model = coord->train(p, tc, fc);
      if (!save_path.empty()) {
        std::ofstream out(save_path);
        if (!out) throw ValidationError("cannot write " + save_path, "io_error");
        out << to_json(model).dump() << "\n";
      }
      json body = summary_json(model);
      body["history"] = model_metrics_json(model).at("history");
      std::cout << body.dump() << std::endl;
      return model.aborted ? kFederationError : kOk;
    }

    if (*gen) {
      CohortSpec spec = spec_path.empty() ? default_cohort_spec() : cohort_spec_from_json(read_json_file(spec_path));
      if (gen_seed) spec.seed = *gen_seed;
      if (print_spec) {
        std::cout << to_json(spec).dump(2) << std::endl;
        return kOk;
      }
      if (out_dir.empty()) throw ValidationError("--out is required unless --print-spec is given");
      const Cohort cohort = generate_cohort(spec);
      write_cohort(cohort, out_dir);
      json nodes = json::array();
      for (const auto& n : cohort.nodes) {
        nodes.push_back({{"node_id", n.mapping.node_id()}, {"rows", n.local.rows.size()}});
      }
      std::cout << json{{"out", out_dir}, {"seed", spec.seed}, {"nodes", std::move(nodes)}}.dump() << std::endl;
      return kOk;
    }
  } catch (const std::exception& e) {
    return fail(exit_status_for(e), error_json(e));
  }
  return kOk;
}
