#include <doctest.h>

#include <json.hpp>

#include "fedlake/catalog.hpp"
#include "fedlake/error.hpp"

using namespace fedlake;
using nlohmann::json;

namespace {

json scenario_attributes() {
  return json::array({
      {{"name", "sex"}, {"kind", "categorical"}, {"vocabulary", {"female", "male"}}},
      {{"name", "age"}, {"kind", "numeric-integer"}, {"unit", "years"}, {"range", {0, 120}}},
      {{"name", "cancer_type"}, {"kind", "categorical"}, {"vocabulary", {"melanoma", "nsclc"}}},
      {{"name", "tnm_stage"}, {"kind", "categorical"}, {"vocabulary", {"T1AN0m0", "T3AN2Cm0"}}},
      {{"name", "treatment"}, {"kind", "categorical"}, {"vocabulary", {"pembrolizumab_200mg", "nivolumab_240mg"}}},
      {{"name", "frequency"}, {"kind", "categorical"}, {"vocabulary", {"q2w", "q3w"}}},
  });
}

json all_columns(const std::string& prefix) {
  json cols = json::object();
  for (const char* a : {"sex", "age", "cancer_type", "tnm_stage", "treatment", "frequency"}) {
    cols[a] = prefix + a;
  }
  return cols;
}

json scenario_catalog() {
  return {{"version", 1},
          {"attributes", scenario_attributes()},
          {"nodes",
           {{{"node_id", "france"},
             {"base_url", "http://127.0.0.1:9001"},
             {"table", "patients"},
             {"columns", all_columns("fr_")},
             {"values", {{"sex", {{"female", "F"}, {"male", "M"}}}}}},
            {{"node_id", "spain"},
             {"base_url", "http://127.0.0.1:9002"},
             {"table", "pacientes"},
             {"columns", all_columns("es_")},
             {"values", {{"sex", {{"female", "f"}, {"male", "m"}}}}}}}}};
}

}  // namespace

TEST_CASE("smallest valid catalog") {
  const json doc = {{"version", 1},
                    {"attributes", {{{"name", "sex"}, {"kind", "categorical"}, {"vocabulary", {"female", "male"}}}}},
                    {"nodes", json::array()}};
  const CatalogStore store = load_catalog(doc.dump());
  CHECK(store.schema().attributes.size() == 1);
  CHECK(store.mappings().empty());
}

TEST_CASE("non-bijective value map is rejected") {
  json doc = scenario_catalog();
  doc["nodes"][0]["values"]["sex"] = {{"female", "F"}, {"male", "F"}};
  try {
    load_catalog(doc.dump());
    FAIL("expected ValidationError");
  } catch (const ValidationError& e) {
    CHECK(std::string(e.what()).find("non-bijective value map: sex") != std::string::npos);
  }
}

TEST_CASE("two-hospital scenario catalog") {
  const CatalogStore store = load_catalog(scenario_catalog().dump());
  CHECK(store.schema().attributes.size() == 6);
  REQUIRE(store.mappings().size() == 2);
  CHECK(store.mappings().begin()->first == "france");
  CHECK(to_json(load_catalog(to_json(store).dump())) == to_json(store));
}

TEST_CASE("catalog validation errors name the offending path") {
  auto expect_error = [](json doc, const std::string& fragment) {
    try {
      load_catalog(doc.dump());
      FAIL("expected ValidationError for " << fragment);
    } catch (const ValidationError& e) {
      CHECK_MESSAGE(std::string(e.what()).find(fragment) != std::string::npos, e.what());
    }
  };
  json doc = scenario_catalog();
  doc["nodes"][1]["node_id"] = "france";
  expect_error(doc, "duplicate node_id");

  doc = scenario_catalog();
  doc["nodes"][0]["columns"]["weight"] = "poids";
  expect_error(doc, "unknown attribute in column map");

  doc = scenario_catalog();
  doc["nodes"][0]["values"]["sex"]["other"] = "X";
  expect_error(doc, "value not in vocabulary");

  doc = scenario_catalog();
  doc["nodes"][0]["values"]["age"] = {{"40", "quarante"}};
  expect_error(doc, "value map on numeric attribute");

  doc = scenario_catalog();
  doc["attributes"][1]["range"] = {120, 0};
  expect_error(doc, "range must satisfy min < max");

  doc = scenario_catalog();
  doc["attributes"].push_back(doc["attributes"][0]);
  expect_error(doc, "duplicate attribute");

  doc = scenario_catalog();
  doc["colour"] = "blue";
  expect_error(doc, "unknown key");

  CHECK_THROWS_AS(load_catalog("{not json"), ValidationError);
}

TEST_CASE("to_local substitutes names and encodings") {
  const CatalogStore store = load_catalog(scenario_catalog().dump());
  const auto& schema = store.schema();
  const auto& fr = store.mappings().at("france");

  SUBCASE("single categorical") {
    const auto sq = to_local({{"sex", Comparator::eq, std::string("female")}}, fr, schema);
    REQUIRE(sq.filter.size() == 1);
    CHECK(sq.filter[0] == LocalPredicate{"fr_sex", Comparator::eq, std::string("F")});
    CHECK(sq.table == "patients");
    CHECK_FALSE(sq.unsatisfiable);
  }
  SUBCASE("numeric passthrough") {
    const auto sq = to_local({{"age", Comparator::eq, 40.0}}, fr, schema);
    CHECK(sq.filter[0] == LocalPredicate{"fr_age", Comparator::eq, 40.0});
  }
  SUBCASE("full scenario filter") {
    const std::vector<Predicate> filter = {
        {"sex", Comparator::eq, std::string("female")},
        {"age", Comparator::eq, 40.0},
        {"cancer_type", Comparator::eq, std::string("melanoma")},
        {"tnm_stage", Comparator::eq, std::string("T3AN2Cm0")},
        {"treatment", Comparator::eq, std::string("pembrolizumab_200mg")},
        {"frequency", Comparator::eq, std::string("q3w")},
    };
    const auto sq = to_local(filter, store.mappings().at("spain"), schema);
    REQUIRE(sq.filter.size() == 6);
    CHECK(sq.filter[0].value == Value(std::string("f")));
    CHECK(sq.filter[3].column == "es_tnm_stage");
    CHECK(sq.filter[3].value == Value(std::string("T3AN2Cm0")));
  }
  SUBCASE("uncovered attribute") {
    json doc = scenario_catalog();
    doc["nodes"][0]["columns"].erase("frequency");
    const CatalogStore partial = load_catalog(doc.dump());
    CHECK_THROWS_AS(to_local({{"frequency", Comparator::eq, std::string("q3w")}}, partial.mappings().at("france"),
                             partial.schema()),
                    UncoveredAttributeError);
  }
}

TEST_CASE("to_global inverts to_local") {
  const CatalogStore store = load_catalog(scenario_catalog().dump());
  const auto& schema = store.schema();
  const auto& fr = store.mappings().at("france");

  CHECK(to_global({}, fr, schema).empty());
  const auto g = to_global({Record{{"fr_sex", std::string("F")}}}, fr, schema);
  REQUIRE(g.size() == 1);
  CHECK(g[0] == Record{{"sex", std::string("female")}});

  // every vocabulary value survives local -> global for every node
  for (const auto& [id, mapping] : store.mappings()) {
    for (const auto& attr : schema.attributes) {
      if (!attr.categorical()) continue;
      for (const auto& v : attr.vocabulary) {
        const auto sq = to_local({{attr.name, Comparator::eq, v}}, mapping, schema);
        const Record local{{sq.filter[0].column, sq.filter[0].value}};
        const auto back = to_global({local}, mapping, schema);
        REQUIRE(back.size() == 1);
        CHECK(back[0].at(attr.name) == Value(v));
      }
    }
  }
}

TEST_CASE("result log appends without dedup and keeps order") {
  CatalogStore store = load_catalog(scenario_catalog().dump());
  CHECK(store.saved_results().empty());
  store.record_result("SELECT", "d1");
  CHECK(store.saved_results().size() == 1);
  store.record_result("SELECT WHERE age > 3", "d2");
  auto log = store.saved_results();
  REQUIRE(log.size() == 2);
  CHECK(log[0].digest == "d1");
  CHECK(log[1].digest == "d2");
  for (int i = 0; i < 100; ++i) store.record_result("SELECT", "same");
  log = store.saved_results();
  CHECK(log.size() == 102);
  for (std::size_t i = 1; i < log.size(); ++i) CHECK(log[i - 1].timestamp <= log[i].timestamp);
  CHECK_THROWS_AS(store.record_result("SELECT", ""), ValidationError);
}
