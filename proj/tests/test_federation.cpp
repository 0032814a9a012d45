#include <doctest.h>

#include <atomic>
#include <future>
#include <numeric>
#include <thread>

#include <json.hpp>

#include "fedlake/error.hpp"
#include "fedlake/federation.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedlake;
using nlohmann::json;

namespace {

/// Forwards to a local node and fails on demand.
class FlakyClient : public NodeClient {
 public:
  explicit FlakyClient(std::shared_ptr<DataNode> node) : inner_(std::move(node)) {}

  std::atomic<bool> fail_queries{false};
  std::atomic<bool> fail_rounds{false};
  std::atomic<int> rounds_until_failure{-1};
  std::atomic<int> delay_ms{0};

  const std::string& node_id() const override { return inner_.node_id(); }
  bool healthy() override { return !fail_queries; }
  NodeMetadata metadata() override {
    if (fail_queries) throw FederationError("down", "node_unreachable");
    return inner_.metadata();
  }
  SubQueryResult subquery(const LocalSubQuery& sq) override {
    if (fail_queries) throw FederationError("down", "node_unreachable");
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms.load()));
    return inner_.subquery(sq);
  }
  CacheInfo build_cache(const CacheRequest& r) override { return inner_.build_cache(r); }
  RoundResult train_round(const RoundRequest& r) override {
    std::this_thread::sleep_for(std::chrono::milliseconds(delay_ms.load()));
    if (fail_rounds || rounds_until_failure == 0) throw FederationError("down", "node_unreachable");
    if (rounds_until_failure > 0) --rounds_until_failure;
    return inner_.train_round(r);
  }
  MetricsReport evaluate(Pattern p, const ParameterVector& params) override { return inner_.evaluate(p, params); }
  MetricsReport evaluate_trees(Pattern p, const std::vector<DecisionTree>& t) override {
    return inner_.evaluate_trees(p, t);
  }
  DecisionTree train_tree(Pattern p, const TrainConfig& c) override { return inner_.train_tree(p, c); }
  std::vector<ModelLogEntry> model_log(Pattern p) override { return inner_.model_log(p); }

 private:
  LocalNodeClient inner_;
};

struct FlakyFederation {
  Cohort cohort;
  std::vector<std::shared_ptr<FlakyClient>> clients;
  std::shared_ptr<Coordinator> coordinator;
};

FlakyFederation flaky_federation(std::size_t rows, FederationConfig cfg = {}) {
  FlakyFederation f{generate_cohort(fixture::small_spec(rows)), {}, {}};
  std::vector<std::shared_ptr<NodeClient>> clients;
  for (const auto& n : f.cohort.data_nodes()) {
    f.clients.push_back(std::make_shared<FlakyClient>(n));
    clients.push_back(f.clients.back());
  }
  f.coordinator = std::make_shared<Coordinator>(std::make_shared<CatalogStore>(f.cohort.catalog()), clients, cfg);
  return f;
}

DecisionTree leaf(std::vector<long long> counts) {
  DecisionTree t;
  t.num_classes = counts.size();
  DecisionTree::Node n;
  n.prediction = static_cast<int>(std::max_element(counts.begin(), counts.end()) - counts.begin());
  n.counts = std::move(counts);
  t.nodes.push_back(n);
  return t;
}

}  // namespace

TEST_CASE("fedavg by hand") {
  CHECK(fedavg({{"a", {1, 3}, 1}, {"b", {3, 5}, 1}}, AggregationMode::unweighted) == std::vector<double>{2, 4});
  CHECK(fedavg({{"a", {0, 0}, 1}, {"b", {3, 3}, 2}}, AggregationMode::sample_weighted) == std::vector<double>{2, 2});
  CHECK(fedavg({{"a", {0, 0}, 1}, {"b", {3, 3}, 2}}, AggregationMode::unweighted) == std::vector<double>{1.5, 1.5});
  CHECK(fedavg({{"a", {0.1, -7}, 9}}, AggregationMode::sample_weighted) == std::vector<double>{0.1, -7});
  const std::vector<FedAvgEntry> same(5, FedAvgEntry{"x", {0.1, 0.7, 1e-3}, 3});
  CHECK(fedavg(same, AggregationMode::unweighted) == same[0].params);
}

TEST_CASE("fedavg input errors") {
  auto code_of = [](const std::vector<FedAvgEntry>& e, AggregationMode m) {
    try {
      fedavg(e, m);
    } catch (const Error& err) {
      return err.code();
    }
    return std::string("none");
  };
  CHECK(code_of({}, AggregationMode::unweighted) != "none");
  CHECK(code_of({{"a", {1, 2}, 1}, {"b", {1}, 1}}, AggregationMode::unweighted) != "none");
  CHECK(code_of({{"a", {NAN}, 1}}, AggregationMode::unweighted) != "none");
  CHECK(code_of({{"a", {1}, 0}, {"b", {2}, 0}}, AggregationMode::sample_weighted) != "none");
  CHECK(aggregation_mode_from_string("weighted") == AggregationMode::sample_weighted);
  CHECK_THROWS_AS(aggregation_mode_from_string("median"), ValidationError);
}

TEST_CASE("count tree merge") {
  CountPartial a{"a", {"cancer_type"}, "treatment", {{{"melanoma", "A"}, 2}}};
  CountPartial b{"b", {"cancer_type"}, "treatment", {{{"melanoma", "A"}, 1}, {{"melanoma", "B"}, 4}}};
  const json one = merge_count_trees({a});
  CHECK(one.at("melanoma").at("counts") == json{{"A", 2}});
  CHECK(one.at("melanoma").at("total") == 2);

  const json merged = merge_count_trees({a, b});
  CHECK(merged.at("melanoma").at("counts") == json{{"A", 3}, {"B", 4}});
  CHECK(merged.at("melanoma").at("most_likely") == "B");
  CHECK(merged == merge_count_trees({b, a}));

  CountPartial c{"c", {"cancer_type"}, "treatment", {{{"nsclc", "chemoX"}, 3}, {{"nsclc", "immunoY"}, 5}}};
  const json leaf_c = merge_count_trees({c}).at("nsclc");
  CHECK(leaf_c.at("most_likely") == "immunoY");
  CHECK(leaf_c.at("share").get<double>() == doctest::Approx(0.625));

  CountPartial tie{"t", {"sex"}, "ae_type", {{{"female", "rash"}, 2}, {{"female", "colitis"}, 2}}};
  CHECK(merge_count_trees({tie}).at("female").at("most_likely") == "colitis");

  CountPartial two_level{"d", {"sex", "cancer_type"}, "ae_type", {{{"female", "nsclc", "rash"}, 1}}};
  CHECK(merge_count_trees({two_level}).at("female").at("nsclc").at("total") == 1);
  CHECK_THROWS_AS(merge_count_trees({a, two_level}), Error);
}

TEST_CASE("federated tree vote") {
  GlobalModel m;
  m.class_names = {"A", "B"};
  const double x[] = {0.0};
  m.trees = {leaf({3, 1})};
  CHECK(federated_tree_vote(m, x) == "A");
  m.trees = {leaf({3, 1}), leaf({5, 1}), leaf({1, 9})};
  CHECK(federated_tree_vote(m, x) == "A");
  m.trees = {leaf({9, 1}), leaf({4, 6})};
  CHECK(federated_tree_vote(m, x) == "A");
}

TEST_CASE("metric aggregation") {
  MetricsReport a = metrics_from_confusion({{8, 2}, {0, 10}}, {"no", "yes"});
  a.auc_roc = 0.9;
  MetricsReport b = metrics_from_confusion({{5, 5}, {5, 15}, }, {"no", "yes"});
  b.auc_roc = 0.6;
  const auto agg = aggregate_metrics({a, b});
  CHECK(agg.n_test == 50);
  CHECK(agg.accuracy == doctest::Approx((20 * a.accuracy + 30 * b.accuracy) / 50));
  CHECK(agg.auc_roc == doctest::Approx((20 * 0.9 + 30 * 0.6) / 50));
  CHECK(agg.pooled.confusion == std::vector<std::vector<long long>>{{13, 7}, {5, 25}});
  CHECK(agg.pooled.accuracy == doctest::Approx(38.0 / 50.0));
}

TEST_CASE("federation config json") {
  FederationConfig c;
  c.rounds = 12;
  c.mode = AggregationMode::sample_weighted;
  c.round_timeout = std::chrono::milliseconds(1500);
  c.min_nodes = 2;
  const auto back = federation_config_from_json(to_json(c));
  CHECK(back.rounds == 12);
  CHECK(back.mode == AggregationMode::sample_weighted);
  CHECK(back.round_timeout.count() == 1500);
  CHECK(back.min_nodes == 2);
  FederationConfig bad;
  bad.min_nodes = 0;
  CHECK_THROWS_AS(bad.validate(), ValidationError);
}

TEST_CASE("one node reduces to local training") {
  auto spec = fixture::small_spec(300);
  spec.nodes.resize(1);
  auto fed = fixture::make_federation(spec);
  TrainConfig tc;
  tc.rounds = 7;
  const auto model = fed.coordinator->train(Pattern::ae_risk, tc);
  CHECK(model.rounds() == 7);
  TrainConfig local = tc;
  local.local_epochs = 7;
  const auto cache = fed.nodes[0]->cache(Pattern::ae_risk);
  const auto expected = train_linear(ParameterVector::zeros(ModelKind::logistic, 2, cache->layout.width), cache->train, local);
  CHECK(model.params == expected);
}

TEST_CASE("two-node first round equals a pooled step") {
  auto spec = fixture::small_spec(250);
  spec.nodes.resize(2);
  auto fed = fixture::make_federation(spec);
  TrainConfig tc;
  tc.rounds = 1;
  CacheRequest cr;
  cr.pattern = Pattern::ae_type;
  cr.balance.method = BalanceMethod::none;
  FederationConfig fc;
  fc.balance.method = BalanceMethod::none;
  const auto model = fed.coordinator->train(Pattern::ae_type, tc, fc);
  const auto c0 = fed.nodes[0]->cache(Pattern::ae_type);
  const auto c1 = fed.nodes[1]->cache(Pattern::ae_type);
  REQUIRE(c0->train.size() == c1->train.size());
  const auto pooled = fixture::concat(c0->train, c1->train);
  const auto zero = ParameterVector::zeros(ModelKind::logistic, model.class_names.size(), c0->layout.width);
  TrainConfig one = tc;
  one.local_epochs = 1;
  const auto central = train_linear(zero, pooled, one);
  for (std::size_t i = 0; i < central.values.size(); ++i) {
    CHECK(std::abs(model.params.values[i] - central.values[i]) <= 1e-9);
  }
}

TEST_CASE("training sessions") {
  auto fed = fixture::make_federation(fixture::small_spec(200));
  TrainConfig tc;
  tc.rounds = 200;
  SUBCASE("history has one record per round") {
    const auto m = fed.coordinator->train(Pattern::ae_type, tc);
    CHECK(m.rounds() == 200);
    CHECK(m.history.front().round == 1);
    CHECK(m.history.back().round == 200);
    CHECK(m.history.back().participants.size() == 3);
    CHECK(fed.coordinator->model(Pattern::ae_type).has_value());
    const json s = summary_json(m);
    CHECK(s.at("rounds") == 200);
    CHECK_FALSE(s.contains("params"));
    const auto back = global_model_from_json(to_json(m));
    CHECK(back.params == m.params);
    CHECK(back.rounds() == 200);
    CHECK(back.history.back().metrics.accuracy == m.history.back().metrics.accuracy);
  }
  SUBCASE("early stop ends a plateau") {
    FederationConfig fc;
    fc.early_stop = true;
    tc.learning_rate = 1e-9;
    const auto m = fed.coordinator->train(Pattern::ae_risk, tc, fc);
    CHECK(m.rounds() == 10);
  }
  SUBCASE("decision trees vote across nodes") {
    tc.kind = ModelKind::decision_tree;
    const auto m = fed.coordinator->train(Pattern::ae_risk, tc);
    CHECK(m.rounds() == 1);
    CHECK(m.trees.size() == 3);
    CHECK(m.tree_nodes.size() == 3);
    const auto back = global_model_from_json(to_json(m));
    CHECK(back.trees.size() == 3);
    const json r = to_json(fed.coordinator->run_query("PREDICT ae_risk WHERE age = 70"));
    CHECK(r.at("result").at("model_kind") == "decision_tree");
  }
  SUBCASE("retrieval patterns cannot be trained") {
    CHECK_THROWS_AS(fed.coordinator->train(Pattern::retrieve, tc), ValidationError);
  }
}

TEST_CASE("node failures during training") {
  TrainConfig tc;
  tc.rounds = 5;
  SUBCASE("a failing node is skipped") {
    auto f = flaky_federation(200);
    f.clients[1]->rounds_until_failure = 2;
    const auto m = f.coordinator->train(Pattern::ae_risk, tc);
    CHECK_FALSE(m.aborted);
    CHECK(m.rounds() == 5);
    CHECK(m.history[1].participants.size() == 3);
    CHECK(m.history[2].participants.size() == 2);
    CHECK(m.history[2].skipped == std::vector<std::string>{f.clients[1]->node_id()});
  }
  SUBCASE("too few participants aborts and keeps the history") {
    FederationConfig fc;
    fc.min_nodes = 3;
    auto f = flaky_federation(200, fc);
    f.clients[0]->rounds_until_failure = 3;
    const auto m = f.coordinator->train(Pattern::ae_risk, tc);
    CHECK(m.aborted);
    CHECK(m.rounds() == 3);
    CHECK_FALSE(m.abort_reason.empty());
  }
  SUBCASE("a slow node misses the deadline") {
    FederationConfig fc;
    fc.round_timeout = std::chrono::milliseconds(100);
    auto f = flaky_federation(200, fc);
    f.clients[2]->delay_ms = 400;
    tc.rounds = 2;
    const auto m = f.coordinator->train(Pattern::ae_risk, tc);
    CHECK(m.history[0].skipped == std::vector<std::string>{f.clients[2]->node_id()});
    f.clients[2]->delay_ms = 0;
  }
  SUBCASE("one session per pattern") {
    auto f = flaky_federation(200);
    f.clients[0]->delay_ms = 30;
    tc.rounds = 10;
    auto first = std::async(std::launch::async, [&] { return f.coordinator->train(Pattern::ae_type, tc); });
    std::this_thread::sleep_for(std::chrono::milliseconds(60));
    CHECK_THROWS_AS(f.coordinator->train(Pattern::ae_type, tc), BusyError);
    // queries and other patterns proceed
    CHECK_NOTHROW(f.coordinator->run_query("SELECT WHERE age > 90"));
    TrainConfig quick;
    quick.rounds = 1;
    CHECK_NOTHROW(f.coordinator->train(Pattern::ae_risk, quick));
    CHECK(first.get().rounds() == 10);
  }
}

TEST_CASE("federated queries") {
  auto f = flaky_federation(300);
  SUBCASE("zero matches is a successful empty result") {
    const json r = to_json(f.coordinator->run_query("SELECT WHERE age >= 200"));
    CHECK(r.at("result").at("row_count") == 0);
    CHECK(r.at("partial") == false);
    CHECK(r.at("aggregation") == "ROW_UNION");
    CHECK(r.at("provenance").size() == 3);
  }
  SUBCASE("failed nodes are reported") {
    f.clients[0]->fail_queries = true;
    const json r = to_json(f.coordinator->run_query("TREE ae_type BY sex"));
    CHECK(r.at("partial") == true);
    CHECK(r.at("failed_nodes") == json::array({f.clients[0]->node_id()}));
    long long total = 0;
    for (const auto& [sex, leaf_node] : r.at("result").at("tree").items()) total += leaf_node.at("total").get<long long>();
    CHECK(total == 600);
  }
  SUBCASE("every node failing is an error") {
    for (auto& c : f.clients) c->fail_queries = true;
    try {
      f.coordinator->run_query("SELECT");
      FAIL("expected FederationError");
    } catch (const FederationError& e) {
      CHECK(e.code() == "federation_unavailable");
    }
  }
  SUBCASE("timeouts count as failures") {
    FederationConfig fc;
    fc.round_timeout = std::chrono::milliseconds(100);
    auto slow = flaky_federation(100, fc);
    slow.clients[1]->delay_ms = 500;
    const auto r = slow.coordinator->run_query("SELECT");
    CHECK(r.partial);
    CHECK(r.failed_nodes == std::vector<std::string>{slow.clients[1]->node_id()});
    slow.clients[1]->delay_ms = 0;
  }
  SUBCASE("results are logged in the catalog") {
    auto fed = fixture::make_federation(fixture::small_spec(50));
    const auto r = fed.coordinator->run_query("select where sex = 'female'");
    const auto log = fed.catalog->saved_results();
    REQUIRE(log.size() == 1);
    CHECK(log[0].digest == r.digest);
    CHECK(log[0].query_text == "SELECT WHERE sex = 'female'");
  }
}

TEST_CASE("prediction queries") {
  auto fed = fixture::make_federation(fixture::small_spec(300));
  const std::string scenario =
      "PREDICT ae_type WHERE sex = 'female' AND age = 40 AND cancer_type = 'melanoma' AND tnm_stage = 'T3AN2Cm0' "
      "AND treatment = 'pembrolizumab_200mg' AND frequency = 'q3w'";
  try {
    fed.coordinator->run_query(scenario);
    FAIL("expected no_model");
  } catch (const FederationError& e) {
    CHECK(e.code() == "no_model");
  }
  TrainConfig tc;
  tc.rounds = 30;
  fed.coordinator->train(Pattern::ae_type, tc);
  const json r = to_json(fed.coordinator->run_query(scenario));
  const json& res = r.at("result");
  CHECK(r.at("aggregation") == "MODEL_INFERENCE");
  double total = 0.0;
  for (const auto& [k, v] : res.at("distribution").items()) total += v.get<double>();
  CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.at("distribution").size() == fed.catalog->schema().at("ae_type").vocabulary.size());
  CHECK(res.at("ranking")[0].at("label") == res.at("predicted"));
  CHECK(res.at("model_rounds") == 30);
  CHECK(res.at("unspecified").empty());
}

TEST_CASE("query feature encoding") {
  const auto schema = default_cohort_spec().schema();
  const auto& task = prediction_task(Pattern::ae_risk);
  const auto layout = encoding_layout(schema, task.features);
  std::vector<std::string> unspecified;
  const auto q = parse_query("PREDICT ae_risk WHERE sex = 'male' AND age > 60 AND age < 80", schema);
  const auto x = encode_query_features(q, schema, layout, unspecified);
  CHECK(x.size() == layout.width);
  const std::size_t sex = std::find(layout.features.begin(), layout.features.end(), "sex") - layout.features.begin();
  const std::size_t age = std::find(layout.features.begin(), layout.features.end(), "age") - layout.features.begin();
  CHECK(x[layout.offsets[sex]] == 0.0);
  CHECK(x[layout.offsets[sex] + 1] == 1.0);
  CHECK(x[layout.offsets[age]] == doctest::Approx(70.0 / 120.0));
  CHECK(std::find(unspecified.begin(), unspecified.end(), "age") == unspecified.end());
  CHECK(std::find(unspecified.begin(), unspecified.end(), "cancer_type") != unspecified.end());
}

TEST_CASE("node health") {
  auto f = flaky_federation(50);
  f.clients[2]->fail_queries = true;
  const auto h = f.coordinator->node_health();
  REQUIRE(h.size() == 3);
  CHECK(h[0].healthy);
  CHECK(h[0].metadata->row_count == 50);
  CHECK_FALSE(h[2].healthy);
  CHECK_FALSE(h[2].error.empty());
  CHECK(to_json(h[0]).at("healthy") == true);
}

TEST_CASE("coordinator registry") {
  const auto cohort = generate_cohort(fixture::small_spec(10));
  auto catalog = std::make_shared<CatalogStore>(cohort.catalog());
  const auto nodes = cohort.data_nodes();
  std::vector<std::shared_ptr<NodeClient>> dup = {std::make_shared<LocalNodeClient>(nodes[0]),
                                                  std::make_shared<LocalNodeClient>(nodes[0])};
  CHECK_THROWS_AS(Coordinator(catalog, dup), ValidationError);
  std::vector<std::shared_ptr<NodeClient>> reversed;
  for (auto it = nodes.rbegin(); it != nodes.rend(); ++it) reversed.push_back(std::make_shared<LocalNodeClient>(*it));
  Coordinator c(catalog, reversed);
  auto ids = c.node_ids();
  CHECK(std::is_sorted(ids.begin(), ids.end()));
}
