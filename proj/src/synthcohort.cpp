#include "fedlake/synthcohort.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>

#include "fedlake/error.hpp"
#include "fedlake/preprocess.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

// Explicit transforms of the raw engine output keep files byte-identical
// across standard library implementations.
double unit(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

double standard_normal(Rng& rng) {
  const double u1 = 1.0 - unit(rng);
  const double u2 = unit(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::string draw(const std::map<std::string, double>& dist, const std::vector<std::string>& vocabulary,
                 Rng& rng) {
  const double u = unit(rng);
  double acc = 0.0;
  std::string last;
  for (const auto& v : vocabulary) {
    auto it = dist.find(v);
    if (it == dist.end() || it->second <= 0.0) continue;
    acc += it->second;
    last = v;
    if (u < acc) return v;
  }
  return last;
}

void check_distribution(const std::map<std::string, double>& dist, const AttributeDef& def,
                        const std::string& where) {
  double sum = 0.0;
  for (const auto& [v, p] : dist) {
    if (def.vocabulary_index(v) == std::string::npos) {
      throw ValidationError(where + ": value " + v + " not in vocabulary of " + def.name, "inconsistent_spec");
    }
    if (!(p >= 0.0)) throw ValidationError(where + ": negative probability", "inconsistent_spec");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ValidationError(where + ": probabilities sum to " + std::to_string(sum), "inconsistent_spec");
  }
}

bool rule_applies(const CohortRule& rule, const Record& row) {
  for (const auto& [attr, cond] : rule.when) {
    const Value& v = row.at(attr);
    if (const auto* s = std::get_if<std::string>(&v)) {
      if (std::find(cond.values.begin(), cond.values.end(), *s) == cond.values.end()) return false;
    } else {
      const double d = std::get<double>(v);
      if ((cond.min && d < *cond.min) || (cond.max && d > *cond.max)) return false;
    }
  }
  return true;
}

std::string csv_cell(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string(), "io_error");
  out << text;
}

}  // namespace

GlobalSchema CohortSpec::schema() const {
  GlobalSchema s;
  s.version = schema_version;
  for (const auto& a : attributes) s.attributes.push_back(a.def);
  return s;
}

void CohortSpec::validate() const {
  if (!(label_noise >= 0.0 && label_noise < 0.5)) {
    throw ValidationError("label_noise must lie in [0, 0.5)", "inconsistent_spec");
  }
  const GlobalSchema s = schema();
  s.validate();
  std::set<std::string> earlier;
  for (const auto& a : attributes) {
    const std::string where = "attribute " + a.def.name;
    if (a.def.categorical()) {
      if (a.rules.empty()) {
        check_distribution(a.marginal, a.def, where + " marginal");
      } else {
        for (std::size_t r = 0; r < a.rules.size(); ++r) {
          const auto& rule = a.rules[r];
          check_distribution(rule.then, a.def, where + " rule " + std::to_string(r + 1));
          for (const auto& [attr, cond] : rule.when) {
            if (!earlier.count(attr)) {
              throw ValidationError(where + " rule references " + attr + ", which is not generated earlier",
                                    "inconsistent_spec");
            }
            for (const auto& v : cond.values) {
              if (s.at(attr).vocabulary_index(v) == std::string::npos) {
                throw ValidationError(where + " rule uses unknown value " + v, "inconsistent_spec");
              }
            }
          }
        }
        if (!a.rules.back().when.empty()) {
          throw ValidationError(where + ": the last rule must be an unconditional default",
                                "inconsistent_spec");
        }
      }
    } else {
      if (!a.def.range) throw ValidationError(where + " needs a range", "inconsistent_spec");
      if (a.numeric.shape == NumericMarginal::Shape::normal && !(a.numeric.b > 0.0)) {
        throw ValidationError(where + ": normal sd must be positive", "inconsistent_spec");
      }
      if (a.label) throw ValidationError(where + ": only categorical attributes can be labels");
    }
    earlier.insert(a.def.name);
  }
  if (nodes.empty()) throw ValidationError("cohort needs at least one node", "inconsistent_spec");
  std::set<std::string> ids;
  for (const auto& n : nodes) {
    if (!ids.insert(n.node_id).second) throw ValidationError("duplicate node " + n.node_id, "inconsistent_spec");
    NodeMapping(n.node_id, n.base_url, n.table, n.columns, n.values).validate(s, "nodes." + n.node_id);
  }
}

CohortSpec cohort_spec_from_json(const json& j) {
  CohortSpec spec;
  spec.seed = j.value("seed", std::uint64_t{0});
  spec.label_noise = j.value("label_noise", 0.0);
  spec.schema_version = j.value("schema_version", 1);
  for (const auto& a : j.at("attributes")) {
    CohortAttribute attr;
    json def = {{"name", a.at("name")}, {"kind", a.at("kind")}};
    for (const char* key : {"vocabulary", "unit", "range"}) {
      if (a.contains(key)) def[key] = a.at(key);
    }
    attr.def = schema_from_json({{"attributes", json::array({def})}}).attributes.front();
    attr.label = a.value("label", false);
    if (a.contains("marginal")) {
      const json& m = a.at("marginal");
      if (attr.def.categorical()) {
        attr.marginal = m.get<std::map<std::string, double>>();
      } else if (m.contains("uniform")) {
        attr.numeric.shape = NumericMarginal::Shape::uniform;
        attr.numeric.a = m.at("uniform").at(0).get<double>();
        attr.numeric.b = m.at("uniform").at(1).get<double>();
      } else {
        attr.numeric.shape = NumericMarginal::Shape::normal;
        attr.numeric.a = m.at("normal").at("mean").get<double>();
        attr.numeric.b = m.at("normal").at("sd").get<double>();
      }
      if (m.contains("clip")) attr.numeric.clip = {m.at("clip").at(0).get<double>(), m.at("clip").at(1).get<double>()};
    }
    for (const auto& r : a.value("rules", json::array())) {
      CohortRule rule;
      const json when = r.value("when", json::object());
      for (const auto& [attr_name, c] : when.items()) {
        CohortCondition cond;
        if (c.is_array()) {
          cond.values = c.get<std::vector<std::string>>();
        } else {
          if (c.contains("min")) cond.min = c.at("min").get<double>();
          if (c.contains("max")) cond.max = c.at("max").get<double>();
        }
        rule.when.emplace(attr_name, std::move(cond));
      }
      rule.then = r.at("then").get<std::map<std::string, double>>();
      attr.rules.push_back(std::move(rule));
    }
    spec.attributes.push_back(std::move(attr));
  }
  for (const auto& n : j.at("nodes")) {
    CohortNode node;
    node.node_id = n.at("node_id").get<std::string>();
    node.rows = n.at("rows").get<std::size_t>();
    node.base_url = n.value("base_url", "");
    node.table = n.value("table", node.node_id);
    node.columns = n.at("columns").get<std::map<std::string, std::string>>();
    node.values = n.value("values", std::map<std::string, std::map<std::string, std::string>>{});
    spec.nodes.push_back(std::move(node));
  }
  spec.validate();
  return spec;
}

json to_json(const CohortSpec& spec) {
  json attrs = json::array();
  for (const auto& a : spec.attributes) {
    json o = to_json(GlobalSchema{1, {a.def}}).at("attributes").at(0);
    if (a.label) o["label"] = true;
    if (a.def.categorical()) {
      if (!a.marginal.empty()) o["marginal"] = a.marginal;
    } else {
      json m;
      if (a.numeric.shape == NumericMarginal::Shape::uniform) {
        m["uniform"] = {a.numeric.a, a.numeric.b};
      } else {
        m["normal"] = {{"mean", a.numeric.a}, {"sd", a.numeric.b}};
      }
      if (a.numeric.clip) m["clip"] = {a.numeric.clip->first, a.numeric.clip->second};
      o["marginal"] = std::move(m);
    }
    if (!a.rules.empty()) {
      json rules = json::array();
      for (const auto& r : a.rules) {
        json when = json::object();
        for (const auto& [name, c] : r.when) {
          if (!c.values.empty()) {
            when[name] = c.values;
          } else {
            json range = json::object();
            if (c.min) range["min"] = *c.min;
            if (c.max) range["max"] = *c.max;
            when[name] = std::move(range);
          }
        }
        rules.push_back({{"when", std::move(when)}, {"then", r.then}});
      }
      o["rules"] = std::move(rules);
    }
    attrs.push_back(std::move(o));
  }
  json nodes = json::array();
  for (const auto& n : spec.nodes) {
    nodes.push_back({{"node_id", n.node_id},
                     {"rows", n.rows},
                     {"base_url", n.base_url},
                     {"table", n.table},
                     {"columns", n.columns},
                     {"values", n.values}});
  }
  return {{"seed", spec.seed},
          {"label_noise", spec.label_noise},
          {"schema_version", spec.schema_version},
          {"attributes", std::move(attrs)},
          {"nodes", std::move(nodes)}};
}

CohortSpec default_cohort_spec() {
  using Dist = std::map<std::string, double>;
  auto categorical = [](std::string name, std::vector<std::string> vocab) {
    CohortAttribute a;
    a.def.name = std::move(name);
    a.def.kind = AttributeKind::categorical;
    a.def.vocabulary = std::move(vocab);
    return a;
  };
  auto is = [](std::vector<std::string> v) { return CohortCondition{std::move(v), std::nullopt, std::nullopt}; };
  auto between = [](std::optional<double> lo, std::optional<double> hi) {
    return CohortCondition{{}, lo, hi};
  };
  auto always = [](std::string v) { return Dist{{std::move(v), 1.0}}; };

  CohortSpec spec;
  spec.seed = 0;
  spec.label_noise = 0.15;

  auto sex = categorical("sex", {"female", "male"});
  sex.marginal = {{"female", 0.48}, {"male", 0.52}};

  CohortAttribute age;
  age.def.name = "age";
  age.def.kind = AttributeKind::integer;
  age.def.unit = "years";
  age.def.range = {0.0, 120.0};
  age.numeric = {NumericMarginal::Shape::normal, 62.0, 13.0, std::pair{18.0, 95.0}};

  auto cancer = categorical("cancer_type", {"melanoma", "nsclc", "renal_cell", "urothelial"});
  cancer.marginal = {{"melanoma", 0.35}, {"nsclc", 0.35}, {"renal_cell", 0.15}, {"urothelial", 0.15}};

  auto stage = categorical("tnm_stage", {"T1AN0m0", "T2AN0m0", "T2BN1m0", "T3AN2Cm0", "T4N2m0", "T4N3m1"});
  stage.marginal = {{"T1AN0m0", 0.15}, {"T2AN0m0", 0.2},  {"T2BN1m0", 0.2},
                    {"T3AN2Cm0", 0.2}, {"T4N2m0", 0.15}, {"T4N3m1", 0.1}};

  const std::vector<std::string> advanced = {"T3AN2Cm0", "T4N2m0", "T4N3m1"};
  auto treatment = categorical("treatment", {"pembrolizumab_200mg", "nivolumab_240mg", "ipilimumab_3mgkg",
                                             "atezolizumab_1200mg", "durvalumab_10mgkg"});
  treatment.label = true;
  treatment.rules = {
      {{{"cancer_type", is({"melanoma"})}, {"tnm_stage", is(advanced)}}, always("ipilimumab_3mgkg")},
      {{{"cancer_type", is({"melanoma"})}}, always("pembrolizumab_200mg")},
      {{{"cancer_type", is({"nsclc"})}, {"tnm_stage", is(advanced)}}, always("durvalumab_10mgkg")},
      {{{"cancer_type", is({"nsclc"})}}, always("pembrolizumab_200mg")},
      {{{"cancer_type", is({"renal_cell"})}}, always("nivolumab_240mg")},
      {{}, always("atezolizumab_1200mg")},
  };

  auto frequency = categorical("frequency", {"q2w", "q3w", "q4w"});
  frequency.rules = {
      {{{"treatment", is({"pembrolizumab_200mg"})}}, {{"q3w", 0.9}, {"q4w", 0.1}}},
      {{{"treatment", is({"nivolumab_240mg"})}}, {{"q2w", 0.8}, {"q4w", 0.2}}},
      {{{"treatment", is({"ipilimumab_3mgkg"})}}, always("q3w")},
      {{{"treatment", is({"atezolizumab_1200mg"})}}, {{"q2w", 0.3}, {"q3w", 0.7}}},
      {{}, {{"q2w", 0.6}, {"q4w", 0.4}}},
  };

  CohortAttribute days;
  days.def.name = "days_since_start";
  days.def.kind = AttributeKind::integer;
  days.def.unit = "days";
  days.def.range = {0.0, 730.0};
  days.numeric = {NumericMarginal::Shape::uniform, 0.0, 730.0, std::nullopt};

  auto occurred = categorical("ae_occurred", {"no", "yes"});
  occurred.label = true;
  occurred.rules = {
      {{{"treatment", is({"ipilimumab_3mgkg"})}}, always("yes")},
      {{{"tnm_stage", is({"T4N2m0", "T4N3m1"})}, {"age", between(65.0, std::nullopt)}}, always("yes")},
      {{}, always("no")},
  };

  auto ae_type = categorical("ae_type", {"colitis", "rash", "fatigue", "hepatitis", "pneumonitis"});
  ae_type.label = true;
  ae_type.rules = {
      {{{"treatment", is({"ipilimumab_3mgkg"})}}, always("colitis")},
      {{{"treatment", is({"nivolumab_240mg"})}}, always("fatigue")},
      {{{"treatment", is({"pembrolizumab_200mg"})}, {"cancer_type", is({"nsclc"})}}, always("pneumonitis")},
      {{{"treatment", is({"pembrolizumab_200mg"})}}, always("rash")},
      {{{"treatment", is({"atezolizumab_1200mg"})}}, always("hepatitis")},
      {{}, always("pneumonitis")},
  };

  auto caused = categorical("ae_caused_by_treatment", {"no", "yes"});
  caused.label = true;
  caused.rules = {
      {{{"days_since_start", between(std::nullopt, 180.0)}}, always("yes")},
      {{{"ae_type", is({"colitis", "pneumonitis"})}, {"days_since_start", between(std::nullopt, 365.0)}},
       always("yes")},
      {{}, always("no")},
  };

  spec.attributes = {sex, age, cancer, stage, treatment, frequency, days, occurred, ae_type, caused};

  const std::map<std::string, std::string> fr_cancer = {
      {"melanoma", "melanome"}, {"nsclc", "cbnpc"}, {"renal_cell", "rein"}, {"urothelial", "vessie"}};
  spec.nodes = {
      {"node_fr", 2000, "http://127.0.0.1:8101", "patients_fr",
       {{"sex", "sexe"}, {"age", "age"}, {"cancer_type", "type_cancer"}, {"tnm_stage", "stade_tnm"},
        {"treatment", "traitement"}, {"frequency", "frequence"}, {"days_since_start", "jours_depuis_debut"},
        {"ae_occurred", "ei_survenu"}, {"ae_type", "type_ei"}, {"ae_caused_by_treatment", "ei_imputable"}},
       {{"sex", {{"female", "F"}, {"male", "M"}}},
        {"cancer_type", fr_cancer},
        {"ae_occurred", {{"no", "NON"}, {"yes", "OUI"}}},
        {"ae_caused_by_treatment", {{"no", "NON"}, {"yes", "OUI"}}}}},
      {"node_es", 2000, "http://127.0.0.1:8102", "pacientes_es",
       {{"sex", "sexo"}, {"age", "edad"}, {"cancer_type", "tipo_cancer"}, {"tnm_stage", "estadio_tnm"},
        {"treatment", "tratamiento"}, {"frequency", "frecuencia"}, {"days_since_start", "dias_desde_inicio"},
        {"ae_occurred", "ea_ocurrido"}, {"ae_type", "tipo_ea"}, {"ae_caused_by_treatment", "ea_causado"}},
       {{"sex", {{"female", "f"}, {"male", "m"}}},
        {"ae_occurred", {{"no", "no"}, {"yes", "si"}}},
        {"ae_caused_by_treatment", {{"no", "no"}, {"yes", "si"}}}}},
      {"node_nl", 2000, "http://127.0.0.1:8103", "patienten_nl",
       {{"sex", "geslacht"}, {"age", "leeftijd"}, {"cancer_type", "kankertype"}, {"tnm_stage", "tnm_stadium"},
        {"treatment", "behandeling"}, {"frequency", "frequentie"}, {"days_since_start", "dagen_sinds_start"},
        {"ae_occurred", "bijwerking"}, {"ae_type", "bijwerking_type"},
        {"ae_caused_by_treatment", "bijwerking_door_behandeling"}},
       {{"sex", {{"female", "V"}, {"male", "M"}}},
        {"ae_occurred", {{"no", "0"}, {"yes", "1"}}},
        {"ae_caused_by_treatment", {{"no", "0"}, {"yes", "1"}}}}},
  };
  return spec;
}

Cohort generate_cohort(const CohortSpec& spec) {
  spec.validate();
  Cohort cohort;
  cohort.schema = spec.schema();
  Rng rng(spec.seed);

  json manifest_nodes = json::array();
  for (const auto& n : spec.nodes) {
    GeneratedNode g;
    g.mapping = NodeMapping(n.node_id, n.base_url, n.table, n.columns, n.values);
    const NodeDocument doc{cohort.schema, g.mapping};
    g.local.table = n.table;
    g.local.columns = doc.declared_columns();

    for (std::size_t r = 0; r < n.rows; ++r) {
      Record row;
      for (const auto& a : spec.attributes) {
        if (!a.def.categorical()) {
          const auto& m = a.numeric;
          const bool integer = a.def.kind == AttributeKind::integer;
          double v = 0.0;
          if (m.shape == NumericMarginal::Shape::uniform) {
            v = integer ? std::floor(m.a + unit(rng) * (m.b - m.a + 1.0)) : m.a + unit(rng) * (m.b - m.a);
          } else {
            v = m.a + m.b * standard_normal(rng);
          }
          if (integer) v = std::round(v);
          if (m.clip) v = std::clamp(v, m.clip->first, m.clip->second);
          v = std::clamp(v, a.def.range->first, a.def.range->second);
          row[a.def.name] = v;
          continue;
        }
        const std::map<std::string, double>* dist = &a.marginal;
        for (const auto& rule : a.rules) {
          if (rule_applies(rule, row)) {
            dist = &rule.then;
            break;
          }
        }
        std::string value = draw(*dist, a.def.vocabulary, rng);
        if (a.label) {
          g.clean_labels[a.def.name].push_back(value);
          const bool flip = unit(rng) < spec.label_noise;
          if (flip) {
            // uniform over the other vocabulary entries
            const std::size_t clean = a.def.vocabulary_index(value);
            const std::size_t others = a.def.vocabulary.size() - 1;
            std::size_t pick = std::min(others - 1, static_cast<std::size_t>(unit(rng) * static_cast<double>(others)));
            if (pick >= clean) ++pick;
            value = a.def.vocabulary[pick];
          }
          g.flipped[a.def.name].push_back(flip);
        }
        row[a.def.name] = std::move(value);
      }

      std::vector<Value> local;
      for (const auto& a : spec.attributes) {
        if (!g.mapping.covers(a.def.name)) continue;
        const Value& v = row.at(a.def.name);
        if (a.def.categorical()) {
          local.emplace_back(*g.mapping.local_value(a.def, std::get<std::string>(v)));
        } else {
          local.push_back(v);
        }
      }
      g.local.rows.push_back(std::move(local));
      g.global_rows.push_back(std::move(row));
    }

    json labels = json::object();
    for (const auto& [attr, clean] : g.clean_labels) {
      std::vector<std::size_t> flipped_rows;
      const auto& flags = g.flipped.at(attr);
      for (std::size_t i = 0; i < flags.size(); ++i) {
        if (flags[i]) flipped_rows.push_back(i);
      }
      labels[attr] = {{"clean", clean},
                      {"flipped_rows", flipped_rows},
                      {"flip_fraction", flags.empty() ? 0.0
                                                      : static_cast<double>(flipped_rows.size()) /
                                                            static_cast<double>(flags.size())}};
    }
    manifest_nodes.push_back({{"node_id", n.node_id}, {"rows", n.rows}, {"labels", std::move(labels)}});
    cohort.nodes.push_back(std::move(g));
  }

  cohort.manifest = {{"generator", "fedlake synthetic cohort"},
                     {"note", "marginals and outcome rules are invented; they do not describe a real cohort"},
                     {"seed", spec.seed},
                     {"label_noise", spec.label_noise},
                     {"bayes_accuracy_deterministic_rules", 1.0 - spec.label_noise},
                     {"spec", to_json(spec)},
                     {"nodes", std::move(manifest_nodes)}};
  return cohort;
}

json Cohort::catalog_json() const {
  json nodes = json::array();
  for (const auto& n : this->nodes) nodes.push_back(to_json(n.mapping));
  json j = to_json(schema);
  j["nodes"] = std::move(nodes);
  return j;
}

CatalogStore Cohort::catalog() const { return load_catalog(catalog_json().dump()); }

std::vector<std::shared_ptr<DataNode>> Cohort::data_nodes() const {
  std::vector<std::shared_ptr<DataNode>> out;
  for (const auto& n : nodes) {
    IngestReport report;
    report.rows_read = n.local.rows.size();
    out.push_back(std::make_shared<DataNode>(NodeDocument{schema, n.mapping}, n.local, report));
  }
  return out;
}

std::string to_csv(const LocalDataset& data) {
  std::string out;
  for (std::size_t c = 0; c < data.columns.size(); ++c) {
    if (c) out += ',';
    out += csv_cell(data.columns[c].name);
  }
  out += '\n';
  for (const auto& row : data.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c) out += ',';
      const Value& v = row[c];
      out += is_numeric(v) ? format_number(std::get<double>(v)) : csv_cell(std::get<std::string>(v));
    }
    out += '\n';
  }
  return out;
}

void write_cohort(const Cohort& cohort, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ValidationError("cannot create " + dir + ": " + ec.message(), "io_error");
  const fs::path root(dir);
  for (const auto& n : cohort.nodes) {
    const std::string id = n.mapping.node_id();
    write_text(root / (id + ".csv"), to_csv(n.local));
    write_text(root / (id + ".mapping.json"), to_json(NodeDocument{cohort.schema, n.mapping}).dump(2) + "\n");
  }
  write_text(root / "catalog.json", cohort.catalog_json().dump(2) + "\n");
  write_text(root / "manifest.json", cohort.manifest.dump() + "\n");
}

}  // namespace fedlake
