#include <doctest.h>

#include <filesystem>
#include <functional>
#include <set>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fedlake/error.hpp"
#include "fedlake/preprocess.hpp"
#include "fedlake/synthcohort.hpp"
#include "support/fixtures.hpp"

using namespace fedlake;
using nlohmann::json;

namespace {

const std::string& text(const Record& r, const std::string& attr) { return std::get<std::string>(r.at(attr)); }

bool advanced(const std::string& stage) { return stage == "T3AN2Cm0" || stage == "T4N2m0" || stage == "T4N3m1"; }

// The default outcome rules written out by hand.
std::string expected_treatment(const Record& r) {
  const auto& cancer = text(r, "cancer_type");
  const bool adv = advanced(text(r, "tnm_stage"));
  if (cancer == "melanoma") return adv ? "ipilimumab_3mgkg" : "pembrolizumab_200mg";
  if (cancer == "nsclc") return adv ? "durvalumab_10mgkg" : "pembrolizumab_200mg";
  if (cancer == "renal_cell") return "nivolumab_240mg";
  return "atezolizumab_1200mg";
}

std::string expected_occurred(const Record& r) {
  if (text(r, "treatment") == "ipilimumab_3mgkg") return "yes";
  const auto& stage = text(r, "tnm_stage");
  if ((stage == "T4N2m0" || stage == "T4N3m1") && std::get<double>(r.at("age")) >= 65.0) return "yes";
  return "no";
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("default cohort shape") {
  const auto spec = default_cohort_spec();
  CHECK(spec.attributes.size() == 10);
  REQUIRE(spec.nodes.size() == 3);
  for (const auto& n : spec.nodes) CHECK(n.rows == 2000);
  const auto cohort = generate_cohort(fixture::small_spec(200));
  for (const auto& n : cohort.nodes) {
    CHECK(n.global_rows.size() == 200);
    CHECK(n.local.rows.size() == 200);
    for (const auto& row : n.global_rows) {
      CHECK(row.size() == 10);
      const double age = std::get<double>(row.at("age"));
      CHECK(age >= 18.0);
      CHECK(age <= 95.0);
      CHECK(age == std::round(age));
    }
  }
}

TEST_CASE("generation is deterministic") {
  const auto spec = fixture::small_spec(150);
  const auto a = generate_cohort(spec);
  const auto b = generate_cohort(spec);
  for (std::size_t i = 0; i < a.nodes.size(); ++i) CHECK(to_csv(a.nodes[i].local) == to_csv(b.nodes[i].local));
  CHECK(a.manifest == b.manifest);
  auto other = spec;
  other.seed = 1;
  CHECK(to_csv(generate_cohort(other).nodes[0].local) != to_csv(a.nodes[0].local));
}

TEST_CASE("noise-free labels follow the rules") {
  auto spec = fixture::small_spec(1000);
  spec.label_noise = 0.0;
  const auto cohort = generate_cohort(spec);
  std::size_t agree = 0, total = 0;
  for (const auto& n : cohort.nodes) {
    for (const auto& r : n.global_rows) {
      agree += text(r, "treatment") == expected_treatment(r) && text(r, "ae_occurred") == expected_occurred(r);
      ++total;
    }
    for (const auto& [attr, flags] : n.flipped) CHECK(std::count(flags.begin(), flags.end(), true) == 0);
  }
  CHECK(agree == total);
}

TEST_CASE("label noise rate") {
  auto spec = fixture::small_spec(10000);
  spec.nodes.resize(1);
  spec.label_noise = 0.1;
  const auto cohort = generate_cohort(spec);
  const auto& n = cohort.nodes[0];
  for (const auto& [attr, flags] : n.flipped) {
    CAPTURE(attr);
    const double frac = static_cast<double>(std::count(flags.begin(), flags.end(), true)) / flags.size();
    CHECK(std::abs(frac - 0.1) <= 0.02);
    const auto& clean = n.clean_labels.at(attr);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      CHECK((text(n.global_rows[i], attr) != clean[i]) == flags[i]);
    }
  }
  const auto& labels = cohort.manifest.at("nodes")[0].at("labels");
  CHECK(labels.size() == 4);
  CHECK(labels.at("treatment").at("flipped_rows").size() ==
        static_cast<std::size_t>(std::count(n.flipped.at("treatment").begin(), n.flipped.at("treatment").end(), true)));
  CHECK(cohort.manifest.at("bayes_accuracy_deterministic_rules").get<double>() == doctest::Approx(0.9));
}

TEST_CASE("local encodings round-trip") {
  const auto cohort = generate_cohort(fixture::small_spec(100));
  const auto& fr = cohort.nodes[0];
  CHECK(fr.mapping.node_id() == "node_fr");
  const std::size_t sex = fr.local.column_index("sexe");
  REQUIRE(sex != std::string::npos);
  for (std::size_t i = 0; i < fr.local.rows.size(); ++i) {
    const auto& local = std::get<std::string>(fr.local.rows[i][sex]);
    CHECK(local == (text(fr.global_rows[i], "sex") == "female" ? "F" : "M"));
    const auto& def = cohort.schema.at("sex");
    CHECK(fr.mapping.local_value(def, text(fr.global_rows[i], "sex")) == local);
  }
  CHECK(cohort.nodes[1].local.column_index("sexo") != std::string::npos);
  CHECK(cohort.nodes[2].local.column_index("geslacht") != std::string::npos);
}

TEST_CASE("adverse event occurrence is imbalanced") {
  const auto cohort = generate_cohort(default_cohort_spec());
  long long counts[2] = {0, 0};
  for (const auto& n : cohort.nodes) {
    for (const auto& r : n.global_rows) ++counts[text(r, "ae_occurred") == "yes"];
  }
  const double minority = static_cast<double>(std::min(counts[0], counts[1])) / (counts[0] + counts[1]);
  CHECK(minority < 0.35);
  CHECK(minority > 0.2);
  CHECK(chi_squared_imbalance(counts).reject);
}

TEST_CASE("spec json round-trip") {
  const auto spec = default_cohort_spec();
  const json j = to_json(spec);
  const auto back = cohort_spec_from_json(j);
  CHECK(to_json(back) == j);
  CHECK(to_csv(generate_cohort(back).nodes[2].local).substr(0, 2000) ==
        to_csv(generate_cohort(spec).nodes[2].local).substr(0, 2000));
}

TEST_CASE("spec validation") {
  auto expect_invalid = [](const std::function<void(json&)>& edit) {
    json j = to_json(fixture::small_spec(10));
    edit(j);
    CHECK_THROWS_AS(cohort_spec_from_json(j), ValidationError);
  };
  expect_invalid([](json& j) { j["label_noise"] = 0.5; });
  expect_invalid([](json& j) { j["attributes"][0]["marginal"]["female"] = 0.9; });
  expect_invalid([](json& j) { j["attributes"][0]["marginal"]["other"] = 0.0; });
  expect_invalid([](json& j) { j["attributes"][4]["rules"][0]["when"]["ae_type"] = json::array({"rash"}); });
  expect_invalid([](json& j) { j["attributes"][4]["rules"].erase(5); });
  expect_invalid([](json& j) { j["nodes"][1]["node_id"] = "node_fr"; });
  expect_invalid([](json& j) { j["nodes"] = json::array(); });
  expect_invalid([](json& j) { j["attributes"][1]["marginal"] = {{"normal", {{"mean", 1}, {"sd", 0}}}}; });
}

TEST_CASE("cohort files") {
  const auto dir = std::filesystem::temp_directory_path() / "fedlake_synth_files";
  std::filesystem::remove_all(dir);
  const auto cohort = generate_cohort(fixture::small_spec(40));
  write_cohort(cohort, dir.string());
  for (const char* f : {"node_fr.csv", "node_es.csv", "node_nl.csv", "node_fr.mapping.json", "catalog.json",
                        "manifest.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  const auto catalog = load_catalog_file((dir / "catalog.json").string());
  CHECK(catalog.mappings().size() == 3);
  const auto doc = load_node_document((dir / "node_es.mapping.json").string());
  const auto ingested = ingest_csv((dir / "node_es.csv").string(), doc.mapping.table(), doc.declared_columns());
  CHECK(ingested.report.dropped_rows.empty());
  CHECK(to_csv(ingested.dataset) == to_csv(cohort.nodes[1].local));
  CHECK(json::parse(read_file(dir / "manifest.json")) == cohort.manifest);
  std::filesystem::remove_all(dir);
}

TEST_CASE("categorical marginals stay within three sigma") {
  const auto spec = default_cohort_spec();
  const auto cohort = generate_cohort(spec);
  for (const auto& attr : spec.attributes) {
    if (!attr.def.categorical() || attr.marginal.empty()) continue;
    for (const auto& node : cohort.nodes) {
      const double n = static_cast<double>(node.global_rows.size());
      for (const auto& [value, p] : attr.marginal) {
        const double seen = static_cast<double>(std::count_if(node.global_rows.begin(), node.global_rows.end(),
                                                              [&](const Record& r) { return text(r, attr.def.name) == value; }));
        CAPTURE(attr.def.name + "=" + value + " at " + node.mapping.node_id());
        CHECK(std::abs(seen / n - p) <= 3.0 * std::sqrt(p * (1.0 - p) / n));
      }
    }
  }
  for (const auto& node : cohort.nodes) {
    double lo = 1e9, hi = -1e9;
    for (const auto& r : node.global_rows) {
      const double d = std::get<double>(r.at("days_since_start"));
      lo = std::min(lo, d);
      hi = std::max(hi, d);
      CHECK(d == std::round(d));
    }
    CHECK(lo >= 0.0);
    CHECK(hi <= 730.0);
  }
}

TEST_CASE("recoded values come back in global vocabulary") {
  auto spec = fixture::small_spec(80);
  spec.nodes.resize(2);
  spec.nodes[0].values["sex"] = {{"female", "F"}, {"male", "M"}};
  spec.nodes[1].values["sex"] = {{"female", "f"}, {"male", "m"}};
  auto fed = fixture::make_federation(spec);
  const json r = to_json(fed.coordinator->run_query("SELECT"));
  std::set<std::string> seen;
  for (const auto& row : r.at("result").at("rows")) seen.insert(row.at("sex").get<std::string>());
  CHECK(seen == std::set<std::string>{"female", "male"});
  const json f = to_json(fed.coordinator->run_query("SELECT WHERE sex = 'female'"));
  long long expected = 0;
  for (const auto& n : fed.cohort.nodes) {
    for (const auto& row : n.global_rows) expected += text(row, "sex") == "female";
  }
  CHECK(f.at("result").at("rows").size() == static_cast<std::size_t>(expected));
}
