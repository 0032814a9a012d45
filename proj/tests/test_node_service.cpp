#include <doctest.h>

#include <httplib.h>
#include <json.hpp>

#include "fedlake/error.hpp"
#include "fedlake/node_client.hpp"
#include "fedlake/node_service.hpp"
#include "support/fixtures.hpp"

using namespace fedlake;
using nlohmann::json;

namespace {

const std::string kToken = "node-secret";

struct Served {
  fixture::Federation local;
  std::vector<std::unique_ptr<NodeService>> services;
  std::vector<int> ports;

  explicit Served(std::size_t rows) : local(fixture::make_federation(fixture::small_spec(rows))) {
    // Separate node instances so the HTTP side has its own caches.
    for (const auto& n : local.cohort.data_nodes()) {
      services.push_back(std::make_unique<NodeService>(n, kToken));
      ports.push_back(services.back()->start("127.0.0.1", 0));
    }
  }

  std::string url(std::size_t i) const { return "http://127.0.0.1:" + std::to_string(ports[i]); }

  std::shared_ptr<Coordinator> http_coordinator(FederationConfig cfg = {}) const {
    std::vector<std::shared_ptr<NodeClient>> clients;
    for (std::size_t i = 0; i < ports.size(); ++i) {
      clients.push_back(std::make_shared<HttpNodeClient>(local.nodes[i]->node_id(), url(i), kToken));
    }
    return std::make_shared<Coordinator>(local.catalog, clients, cfg);
  }
};

httplib::Headers auth(const std::string& token = kToken) { return {{"X-Fed-Token", token}}; }

}  // namespace

TEST_CASE("node routes require the federation token") {
  Served s(30);
  httplib::Client cli(s.url(0));
  for (const char* path : {"/health", "/metadata", "/metrics/ae_risk", "/modellog/ae_risk"}) {
    CAPTURE(path);
    auto none = cli.Get(path);
    REQUIRE(none);
    CHECK(none->status == 401);
    CHECK(json::parse(none->body).at("error").at("code") == "unauthorized");
    auto wrong = cli.Get(path, auth("guess"));
    CHECK(wrong->status == 401);
  }
  auto post = cli.Post("/subquery", "{}", "application/json");
  CHECK(post->status == 401);
  auto ok = cli.Get("/health", auth());
  CHECK(ok->status == 200);
  CHECK(json::parse(ok->body) == json{{"status", "ok"}, {"node_id", "node_fr"}});
  CHECK_THROWS_AS(NodeService(s.local.nodes[0], ""), ValidationError);
}

TEST_CASE("node error responses") {
  Served s(30);
  httplib::Client cli(s.url(1));
  auto bad_json = cli.Post("/subquery", auth(), "{not json", "application/json");
  CHECK(bad_json->status == 400);
  CHECK(json::parse(bad_json->body).at("error").at("code") == "bad_request");
  auto bad_pattern = cli.Get("/metrics/retrieve", auth());
  CHECK(bad_pattern->status == 400);
  auto before = cli.Get("/metrics/ae_type", auth());
  CHECK(before->status == 404);
  CHECK(json::parse(before->body).at("error").at("code") == "no_metrics");
  auto uncached = cli.Post("/train/round", auth(), json{{"pattern", "ae_type"}}.dump(), "application/json");
  CHECK(uncached->status == 400);
  CHECK(json::parse(uncached->body).contains("error"));
}

TEST_CASE("http federation matches the in-process one") {
  Served s(120);
  auto remote = s.http_coordinator();
  for (const char* q : {"SELECT WHERE age > 70 AND sex = 'male'", "TREE ae_type BY cancer_type, sex",
                        "SELECT WHERE cancer_type != 'nsclc'"}) {
    CAPTURE(q);
    json a = to_json(remote->run_query(q));
    json b = to_json(s.local.coordinator->run_query(q));
    CHECK(a.at("result") == b.at("result"));
    CHECK(a.at("digest") == b.at("digest"));
  }
  TrainConfig tc;
  tc.rounds = 5;
  const auto over_http = remote->train(Pattern::ae_risk, tc);
  const auto in_process = s.local.coordinator->train(Pattern::ae_risk, tc);
  CHECK(over_http.params == in_process.params);
  CHECK(over_http.history.back().metrics.accuracy == in_process.history.back().metrics.accuracy);

  httplib::Client cli(s.url(2));
  auto metrics = cli.Get("/metrics/ae_risk", auth());
  CHECK(metrics->status == 200);
  auto log = cli.Get("/modellog/ae_risk", auth());
  CHECK(json::parse(log->body).at("entries").size() == 5);

  tc.kind = ModelKind::decision_tree;
  const auto trees = remote->train(Pattern::ae_type, tc);
  CHECK(trees.trees.size() == 3);

  auto select = cli.Post("/train/select", auth(),
                         json{{"pattern", "ae_risk"}, {"grid", json::array({to_json(TrainConfig{})})}, {"folds", 3}}.dump(),
                         "application/json");
  CHECK(select->status == 200);
}

TEST_CASE("http client failure mapping") {
  HttpNodeClient nowhere("node_x", "http://127.0.0.1:1", kToken, std::chrono::milliseconds(300));
  CHECK_FALSE(nowhere.healthy());
  try {
    nowhere.metadata();
    FAIL("expected FederationError");
  } catch (const FederationError& e) {
    CHECK(e.code() == "node_unreachable");
  }
  Served s(10);
  HttpNodeClient wrong_token("node_fr", s.url(0), "nope");
  try {
    wrong_token.metadata();
    FAIL("expected FederationError");
  } catch (const FederationError& e) {
    CHECK(e.code() == "node_unauthorized");
  }
  HttpNodeClient client("node_fr", s.url(0), kToken);
  CHECK(client.healthy());
  CHECK(client.metadata().row_count == 10);
  RoundRequest r;
  r.pattern = Pattern::ae_type;
  CHECK_THROWS_AS(client.train_round(r), ValidationError);
  CHECK_THROWS_AS(HttpNodeClient("n", "http://x", kToken, std::chrono::milliseconds(0)), ValidationError);
}

TEST_CASE("a stopped node makes queries partial") {
  Served s(20);
  auto remote = s.http_coordinator();
  s.services[1]->stop();
  const auto r = remote->run_query("SELECT");
  CHECK(r.partial);
  CHECK(r.failed_nodes == std::vector<std::string>{"node_es"});
}
