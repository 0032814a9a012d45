#include <doctest.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <set>

#include <json.hpp>

#include "fedlake/datanode.hpp"
#include "fedlake/error.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"

using namespace fedlake;
using nlohmann::json;

namespace {

json tiny_document() {
  return {{"schema",
           {{"version", 1},
            {"attributes",
             {{{"name", "sex"}, {"kind", "categorical"}, {"vocabulary", {"female", "male"}}},
              {{"name", "age"}, {"kind", "numeric-integer"}, {"range", {0, 120}}},
              {{"name", "treatment"}, {"kind", "categorical"}, {"vocabulary", {"drug_a", "drug_b"}}}}}}},
          {"node",
           {{"node_id", "tiny"},
            {"table", "t"},
            {"columns", {{"sex", "SEXE"}, {"age", "AGE"}, {"treatment", "treatment_loc"}}},
            {"values", {{"sex", {{"female", "F"}, {"male", "M"}}}}}}}};
}

std::shared_ptr<DataNode> tiny_node(const std::string& csv) {
  NodeDocument doc = node_document_from_json(tiny_document());
  auto ingested = ingest_csv_text(csv, doc.mapping.table(), doc.declared_columns());
  return std::make_shared<DataNode>(std::move(doc), std::move(ingested.dataset), ingested.report);
}

std::shared_ptr<DataNode> cohort_node(std::size_t rows = 400) {
  return generate_cohort(fixture::small_spec(rows)).data_nodes()[0];
}

}  // namespace

TEST_CASE("csv ingestion") {
  const auto decl = node_document_from_json(tiny_document()).declared_columns();
  REQUIRE(decl.size() == 3);

  auto r = ingest_csv_text("SEXE,AGE,treatment_loc\nF,40,drug_a\nM,51,drug_b\nF,33,drug_b\n", "t", decl);
  CHECK(r.dataset.row_count() == 3);
  CHECK(r.report.dropped_rows.empty());
  CHECK(r.dataset.rows[1][1] == Value(51.0));

  r = ingest_csv_text("SEXE,AGE,treatment_loc\nF,40,drug_a\nM,old,drug_b\nF,33,drug_b\n", "t", decl);
  CHECK(r.dataset.row_count() == 2);
  CHECK(r.report.dropped_rows == std::vector<std::size_t>{2});

  r = ingest_csv_text("SEXE,AGE,treatment_loc\n", "t", decl);
  CHECK(r.dataset.row_count() == 0);

  // BOM, CRLF, quoted cells, column order and extra columns
  r = ingest_csv_text("\xEF\xBB\xBF" "extra,treatment_loc,AGE,SEXE\r\n\"x, y\",\"drug_a\",40,F\r\n", "t", decl);
  REQUIRE(r.dataset.row_count() == 1);
  CHECK(r.dataset.rows[0][r.dataset.column_index("SEXE")] == Value(std::string("F")));
  CHECK(r.dataset.rows[0][r.dataset.column_index("treatment_loc")] == Value(std::string("drug_a")));

  r = ingest_csv_text("SEXE,AGE,treatment_loc\n,40,drug_a\n", "t", decl);
  CHECK(r.dataset.row_count() == 0);
  CHECK(r.report.dropped_rows.size() == 1);

  CHECK_THROWS_AS(ingest_csv_text("SEXE,AGE\nF,40\n", "t", decl), ValidationError);
  CHECK_THROWS_AS(ingest_csv_text("", "t", decl), ValidationError);
  CHECK_THROWS_AS(ingest_csv("/nonexistent/file.csv", "t", decl), ValidationError);
}

TEST_CASE("metadata is structural") {
  const auto node = tiny_node("SEXE,AGE,treatment_loc\nF,40,drug_a\nM,51,drug_b\n");
  const auto m = node->metadata();
  CHECK(m.node_id == "tiny");
  CHECK(m.row_count == 2);
  REQUIRE(m.columns.size() == 3);
  CHECK(m.columns[1].kind == AttributeKind::integer);
  const std::string s = to_json(m).dump();
  CHECK(s.find("drug_a") == std::string::npos);
  CHECK(s.find("51") == std::string::npos);
  CHECK(node_metadata_from_json(to_json(m)).row_count == 2);

  CHECK(tiny_node("SEXE,AGE,treatment_loc\n")->metadata().row_count == 0);
}

TEST_CASE("subqueries") {
  const auto node = tiny_node("SEXE,AGE,treatment_loc\nF,40,drug_a\nM,51,drug_b\nF,33,drug_b\nM,60,drug_b\n");
  LocalSubQuery sq;
  sq.table = "t";
  sq.filter = {{"SEXE", Comparator::eq, std::string("F")}};
  CHECK(node->execute_subquery(sq).rows.size() == 2);

  sq.filter = {{"SEXE", Comparator::eq, std::string("X")}};
  CHECK(node->execute_subquery(sq).rows.empty());

  sq.filter = {{"AGE", Comparator::gt, 35.0}};
  sq.columns = {"AGE"};
  const auto r = node->execute_subquery(sq);
  CHECK(r.rows.size() == 3);
  CHECK(r.rows[0].size() == 1);

  LocalSubQuery count;
  count.mode = SubQueryMode::count_by;
  count.group_columns = {"treatment_loc"};
  const auto c = node->execute_subquery(count);
  CHECK(c.counts.size() == 2);
  long long total = 0;
  for (const auto& [k, n] : c.counts) total += n;
  CHECK(total == 4);
  CHECK(c.counts.at({"drug_b"}) == 3);

  sq.unsatisfiable = true;
  CHECK(node->execute_subquery(sq).rows.empty());

  LocalSubQuery bad;
  bad.filter = {{"WEIGHT", Comparator::eq, 1.0}};
  CHECK_THROWS_AS(node->execute_subquery(bad), ValidationError);
  bad.filter = {{"SEXE", Comparator::lt, std::string("F")}};
  CHECK_THROWS_AS(node->execute_subquery(bad), ValidationError);
  bad.filter = {{"AGE", Comparator::eq, std::string("40")}};
  CHECK_THROWS_AS(node->execute_subquery(bad), ValidationError);
  bad.filter = {};
  bad.table = "other";
  CHECK_THROWS_AS(node->execute_subquery(bad), ValidationError);

  const auto round = subquery_from_json(to_json(count));
  CHECK(round == count);
  CHECK(subquery_result_from_json(to_json(c)).counts == c.counts);
}

TEST_CASE("training cache") {
  auto node = cohort_node(100);
  CacheRequest req;
  req.pattern = Pattern::ae_risk;
  req.balance.method = BalanceMethod::none;
  const auto info = node->build_training_cache(req);
  CHECK(info.n_train + info.n_test == 100);
  CHECK(info.n_train == 80);
  CHECK(info.n_test == 20);
  CHECK(info.rebuilt);
  CHECK(info.num_classes == 2);
  const auto cache = node->cache(Pattern::ae_risk);
  std::set<std::size_t> tr(cache->train_rows.begin(), cache->train_rows.end());
  for (auto t : cache->test_rows) CHECK_FALSE(tr.count(t));

  SUBCASE("same request reuses the cache") {
    CHECK_FALSE(node->build_training_cache(req).rebuilt);
    CHECK(node->build_training_cache(req).fingerprint == info.fingerprint);
    req.seed = 1;
    const auto other = node->build_training_cache(req);
    CHECK(other.rebuilt);
    CHECK(other.fingerprint != info.fingerprint);
  }
  SUBCASE("fingerprints only depend on the request") {
    CacheRequest a, b;
    a.pattern = b.pattern = Pattern::ae_type;
    CHECK(a.fingerprint(1) == b.fingerprint(1));
    CHECK(a.fingerprint(1) != a.fingerprint(2));
    b.split_fraction = 0.75;
    CHECK(a.fingerprint(1) != b.fingerprint(1));
    CHECK(cache_request_from_json(to_json(a)).fingerprint(1) == a.fingerprint(1));
  }
  SUBCASE("imbalanced target is balanced in training only") {
    req.balance.method = BalanceMethod::smote;
    auto big = cohort_node(800);
    const auto bal = big->build_training_cache(req);
    const auto c = big->cache(Pattern::ae_risk);
    CHECK(bal.balance.applied);
    CHECK(bal.n_synthetic > 0);
    CHECK(std::count(c->train.labels.begin(), c->train.labels.end(), 0) ==
          std::count(c->train.labels.begin(), c->train.labels.end(), 1));
    CHECK(c->test.size() == c->test_rows.size());
    CHECK(bal.n_test == c->test_rows.size());
  }
  SUBCASE("retrieval patterns have no cache") {
    req.pattern = Pattern::retrieve;
    CHECK_THROWS_AS(node->build_training_cache(req), ValidationError);
  }
}

TEST_CASE("local rounds") {
  auto node = cohort_node(200);
  CacheRequest req;
  req.pattern = Pattern::ae_type;
  const auto info = node->build_training_cache(req);
  RoundRequest rr;
  rr.pattern = Pattern::ae_type;
  rr.params = ParameterVector::zeros(ModelKind::logistic, info.num_classes, info.feature_width);
  rr.fingerprint = info.fingerprint;

  SUBCASE("zero local epochs is the identity") {
    rr.config.local_epochs = 0;
    const auto r = node->local_train_round(rr);
    CHECK(r.params == rr.params);
    CHECK(r.n_train == info.n_train);
  }
  SUBCASE("one full-batch epoch is one gradient step on the training split") {
    const auto r = node->local_train_round(rr);
    const auto c = node->cache(Pattern::ae_type);
    const auto grad = objective_gradient(rr.params, c->train.features, c->train.labels, rr.config.l2);
    const auto fd = oracle::fd_gradient(
        [&](const std::vector<double>& v) {
          auto p = rr.params;
          p.values = v;
          return objective(p, c->train.features, c->train.labels, rr.config.l2);
        },
        rr.params.values, 1e-6);
    for (std::size_t i = 0; i < grad.size(); ++i) {
      CHECK(r.params.values[i] == doctest::Approx(-rr.config.learning_rate * fd[i]).epsilon(1e-5).scale(1.0));
    }
  }
  SUBCASE("identical requests give bitwise-identical results") {
    rr.config.batch_size = 16;
    rr.config.local_epochs = 2;
    const auto a = node->local_train_round(rr);
    const auto b = node->local_train_round(rr);
    CHECK(a.params == b.params);
  }
  SUBCASE("round order, fingerprints and dimensions are enforced") {
    node->local_train_round(rr);
    rr.round = 2;
    node->local_train_round(rr);
    CHECK_THROWS_AS(node->local_train_round(rr), ValidationError);
    rr.round = 1;
    node->local_train_round(rr);  // a new session
    const auto log = node->model_log(Pattern::ae_type);
    REQUIRE(log.size() == 3);
    CHECK(log[2].session == log[0].session + 1);
    CHECK(model_log_entry_from_json(to_json(log[0])).digest == log[0].digest);

    RoundRequest wrong = rr;
    wrong.fingerprint = "deadbeef";
    CHECK_THROWS_AS(node->local_train_round(wrong), ValidationError);
    wrong = rr;
    wrong.params = ParameterVector::zeros(ModelKind::logistic, info.num_classes, info.feature_width + 1);
    CHECK_THROWS_AS(node->local_train_round(wrong), ValidationError);
    wrong = rr;
    wrong.pattern = Pattern::ae_risk;
    CHECK_THROWS_AS(node->local_train_round(wrong), ValidationError);
  }
  SUBCASE("round wire format") {
    const auto back = round_request_from_json(to_json(rr));
    CHECK(back.params == rr.params);
    CHECK(back.fingerprint == rr.fingerprint);
    RoundResult res{rr.params, 12};
    CHECK(round_result_from_json(to_json(res)).n_train == 12);
  }
}

TEST_CASE("local evaluation") {
  auto node = cohort_node(300);
  CacheRequest req;
  req.pattern = Pattern::ae_risk;
  req.balance.method = BalanceMethod::none;
  const auto info = node->build_training_cache(req);
  const auto c = node->cache(Pattern::ae_risk);
  const double share0 = static_cast<double>(std::count(c->test.labels.begin(), c->test.labels.end(), 0)) /
                        static_cast<double>(c->test.size());

  auto constant = ParameterVector::zeros(ModelKind::logistic, 2, info.feature_width);
  constant.bias(0) = 1.0;
  const auto m = node->local_evaluate(Pattern::ae_risk, constant);
  CHECK(m.accuracy == doctest::Approx(share0));
  CHECK(m.n_test == static_cast<long long>(info.n_test));
  const auto r = oracle::recount(m.confusion);
  CHECK(m.accuracy == r.accuracy);
  CHECK(m.f1 == r.f1);
  CHECK(node->last_metrics(Pattern::ae_risk).has_value());
  CHECK_FALSE(node->last_metrics(Pattern::ae_type).has_value());

  TrainConfig tc;
  tc.kind = ModelKind::decision_tree;
  const auto tree = node->train_tree(Pattern::ae_risk, tc);
  const auto tm = node->local_evaluate_trees(Pattern::ae_risk, {tree});
  CHECK(tm.accuracy > 0.6);

  CHECK_THROWS_AS(node->local_evaluate(Pattern::ae_type, constant), ValidationError);
}

TEST_CASE("model selection runs on real rows only") {
  auto node = cohort_node(300);
  CacheRequest req;
  req.pattern = Pattern::ae_risk;
  node->build_training_cache(req);
  TrainConfig a, b;
  a.local_epochs = b.local_epochs = 20;
  b.learning_rate = 0.05;
  const auto r = node->select_model(Pattern::ae_risk, {a, b}, 3, 0);
  CHECK(r.table.size() == 2);
}

TEST_CASE("one training request per pattern at a time") {
  auto node = cohort_node(2000);
  CacheRequest req;
  req.pattern = Pattern::ae_type;
  const auto info = node->build_training_cache(req);
  RoundRequest rr;
  rr.pattern = Pattern::ae_type;
  rr.params = ParameterVector::zeros(ModelKind::logistic, info.num_classes, info.feature_width);
  rr.config.local_epochs = 400;
  auto slow = std::async(std::launch::async, [&] { return node->local_train_round(rr); });
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  RoundRequest other = rr;
  other.config.local_epochs = 1;
  bool busy = false;
  try {
    node->local_train_round(other);
  } catch (const BusyError&) {
    busy = true;
  }
  slow.get();
  CHECK(busy);
  // a different pattern is not blocked
  CacheRequest r2;
  r2.pattern = Pattern::ae_risk;
  CHECK_NOTHROW(node->build_training_cache(r2));
}

TEST_CASE("node files") {
  const auto cohort = generate_cohort(fixture::small_spec(20));
  const std::string dir = (std::filesystem::temp_directory_path() / "fedlake_node_files").string();
  write_cohort(cohort, dir);
  const auto node = DataNode::from_files(dir + "/node_es.csv", dir + "/node_es.mapping.json");
  CHECK(node->node_id() == "node_es");
  CHECK(node->metadata().row_count == 20);
  CHECK(to_json(load_node_document(dir + "/node_es.mapping.json")) == to_json(node->document()));
  CHECK_THROWS_AS(DataNode::from_files(dir + "/missing.csv", dir + "/node_es.mapping.json"), ValidationError);
  CHECK(prediction_pattern_from_text("ae_caused") == Pattern::ae_causation);
  CHECK(prediction_pattern_from_text("AE_TYPE") == Pattern::ae_type);
  CHECK_THROWS_AS(prediction_pattern_from_text("retrieve"), ValidationError);
  std::filesystem::remove_all(dir);
}
