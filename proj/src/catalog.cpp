#include "fedlake/catalog.hpp"

#include <algorithm>
#include <fstream>
#include <regex>
#include <sstream>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

bool is_snake_case(const std::string& name) {
  static const std::regex kPattern("[a-z][a-z0-9_]*");
  return std::regex_match(name, kPattern);
}

void reject_unknown_keys(const json& j, std::initializer_list<std::string_view> allowed,
                         const std::string& path) {
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ValidationError("unknown key: " + path + (path.empty() ? "" : ".") + key);
    }
  }
}

const json& require(const json& j, const char* key, const std::string& path) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError("missing key: " + path + "." + key);
  return *it;
}

std::string require_string(const json& j, const char* key, const std::string& path) {
  const json& v = require(j, key, path);
  if (!v.is_string()) throw ValidationError("expected string: " + path + "." + key);
  return v.get<std::string>();
}

}  // namespace

std::size_t AttributeDef::vocabulary_index(const std::string& value) const {
  auto it = std::find(vocabulary.begin(), vocabulary.end(), value);
  return it == vocabulary.end() ? std::string::npos
                                : static_cast<std::size_t>(it - vocabulary.begin());
}

const AttributeDef* GlobalSchema::find(const std::string& name) const {
  for (const auto& a : attributes) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

const AttributeDef& GlobalSchema::at(const std::string& name) const {
  if (const auto* a = find(name)) return *a;
  throw ValidationError("unknown attribute: " + name, "unknown_attribute");
}

std::size_t GlobalSchema::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == name) return i;
  }
  throw ValidationError("unknown attribute: " + name, "unknown_attribute");
}

void GlobalSchema::validate() const {
  std::set<std::string> seen;
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    const auto& a = attributes[i];
    const std::string path = "attributes[" + std::to_string(i) + "]";
    if (a.name.empty() || !is_snake_case(a.name)) {
      throw ValidationError("attribute name must be lowercase snake_case: " + path + ".name");
    }
    if (!seen.insert(a.name).second) {
      throw ValidationError("duplicate attribute: " + a.name + " at " + path);
    }
    if (a.categorical()) {
      if (a.vocabulary.empty()) {
        throw ValidationError("empty vocabulary: " + path + ".vocabulary");
      }
      std::set<std::string> words(a.vocabulary.begin(), a.vocabulary.end());
      if (words.size() != a.vocabulary.size()) {
        throw ValidationError("duplicate vocabulary entry: " + path + ".vocabulary");
      }
      if (a.range || a.unit) {
        throw ValidationError("range/unit not allowed on categorical: " + path);
      }
    } else {
      if (!a.vocabulary.empty()) {
        throw ValidationError("vocabulary not allowed on numeric: " + path + ".vocabulary");
      }
      if (a.range && !(a.range->first < a.range->second)) {
        throw ValidationError("range must satisfy min < max: " + path + ".range");
      }
    }
  }
}

NodeMapping::NodeMapping(std::string node_id, std::string base_url, std::string table,
                         std::map<std::string, std::string> columns,
                         std::map<std::string, std::map<std::string, std::string>> values)
    : node_id_(std::move(node_id)),
      base_url_(std::move(base_url)),
      table_(std::move(table)),
      columns_(std::move(columns)),
      values_(std::move(values)) {
  for (const auto& [attr, col] : columns_) column_to_attribute_[col] = attr;
  for (const auto& [attr, forward] : values_) {
    auto& inverse = inverse_values_[attr];
    for (const auto& [g, l] : forward) inverse[l] = g;
  }
}

void NodeMapping::validate(const GlobalSchema& schema, const std::string& path) const {
  if (node_id_.empty()) throw ValidationError("empty node_id: " + path + ".node_id");
  std::set<std::string> local_names;
  for (const auto& [attr, col] : columns_) {
    if (!schema.find(attr)) {
      throw ValidationError("unknown attribute in column map: " + path + ".columns." + attr);
    }
    if (col.empty()) throw ValidationError("empty local column: " + path + ".columns." + attr);
    if (!local_names.insert(col).second) {
      throw ValidationError("duplicate local column " + col + ": " + path + ".columns");
    }
  }
  for (const auto& [attr, forward] : values_) {
    const std::string vpath = path + ".values." + attr;
    const auto* def = schema.find(attr);
    if (!def) throw ValidationError("unknown attribute in value map: " + vpath);
    if (!def->categorical()) throw ValidationError("value map on numeric attribute: " + vpath);
    if (!covers(attr)) throw ValidationError("value map for unmapped attribute: " + vpath);
    std::set<std::string> images;
    for (const auto& [g, l] : forward) {
      if (def->vocabulary_index(g) == std::string::npos) {
        throw ValidationError("value not in vocabulary: " + vpath + "." + g);
      }
      if (!images.insert(l).second) {
        throw ValidationError("non-bijective value map: " + attr + " (at " + vpath + ")",
                              "non_bijective_value_map");
      }
    }
  }
}

std::set<std::string> NodeMapping::covered_attributes() const {
  std::set<std::string> out;
  for (const auto& [attr, _] : columns_) out.insert(attr);
  return out;
}

const std::string& NodeMapping::local_column(const std::string& attribute) const {
  auto it = columns_.find(attribute);
  if (it == columns_.end()) throw UncoveredAttributeError(attribute);
  return it->second;
}

const std::string* NodeMapping::global_attribute(const std::string& column) const {
  auto it = column_to_attribute_.find(column);
  return it == column_to_attribute_.end() ? nullptr : &it->second;
}

std::optional<std::string> NodeMapping::local_value(const AttributeDef& attr,
                                                    const std::string& global_value) const {
  auto it = values_.find(attr.name);
  if (it == values_.end()) {
    if (attr.vocabulary_index(global_value) == std::string::npos) return std::nullopt;
    return global_value;
  }
  auto v = it->second.find(global_value);
  if (v == it->second.end()) return std::nullopt;
  return v->second;
}

std::optional<std::string> NodeMapping::global_value(const AttributeDef& attr,
                                                     const std::string& local_value) const {
  auto it = inverse_values_.find(attr.name);
  if (it == inverse_values_.end()) {
    if (attr.vocabulary_index(local_value) == std::string::npos) return std::nullopt;
    return local_value;
  }
  auto v = it->second.find(local_value);
  if (v == it->second.end()) return std::nullopt;
  return v->second;
}

CatalogStore::CatalogStore(GlobalSchema schema, std::map<std::string, NodeMapping> mappings)
    : schema_(std::move(schema)),
      mappings_(std::move(mappings)),
      log_(std::make_unique<ResultLog>()) {}

void CatalogStore::record_result(const std::string& query_text, const std::string& digest) {
  if (digest.empty()) throw ValidationError("result digest must be non-empty");
  std::lock_guard lock(log_->mutex);
  auto now = std::chrono::system_clock::now();
  if (!log_->entries.empty() && now < log_->entries.back().timestamp) {
    now = log_->entries.back().timestamp;
  }
  log_->entries.push_back({query_text, now, digest});
}

std::vector<SavedResult> CatalogStore::saved_results() const {
  std::lock_guard lock(log_->mutex);
  return log_->entries;
}

GlobalSchema schema_from_json(const json& j, const std::string& path) {
  GlobalSchema schema;
  const std::string prefix = path.empty() ? "" : path + ".";
  if (auto it = j.find("version"); it != j.end()) {
    if (!it->is_number_integer()) throw ValidationError("version must be an integer");
    schema.version = it->get<int>();
  }
  const json& attrs = require(j, "attributes", path.empty() ? "$" : path);
  if (!attrs.is_array()) throw ValidationError("attributes must be an array");
  for (std::size_t i = 0; i < attrs.size(); ++i) {
    const json& a = attrs[i];
    const std::string apath = prefix + "attributes[" + std::to_string(i) + "]";
    if (!a.is_object()) throw ValidationError("attribute must be an object: " + apath);
    reject_unknown_keys(a, {"name", "kind", "vocabulary", "unit", "range"}, apath);
    AttributeDef def;
    def.name = require_string(a, "name", apath);
    def.kind = attribute_kind_from_string(require_string(a, "kind", apath));
    if (auto it = a.find("vocabulary"); it != a.end()) {
      if (!it->is_array()) throw ValidationError("vocabulary must be an array: " + apath);
      for (const auto& w : *it) {
        if (!w.is_string()) throw ValidationError("vocabulary entries must be strings: " + apath);
        def.vocabulary.push_back(w.get<std::string>());
      }
    } else if (def.categorical()) {
      throw ValidationError("missing key: " + apath + ".vocabulary");
    }
    if (auto it = a.find("unit"); it != a.end()) def.unit = it->get<std::string>();
    if (auto it = a.find("range"); it != a.end()) {
      if (!it->is_array() || it->size() != 2 || !(*it)[0].is_number() || !(*it)[1].is_number()) {
        throw ValidationError("range must be [min,max]: " + apath + ".range");
      }
      def.range = std::make_pair((*it)[0].get<double>(), (*it)[1].get<double>());
    }
    schema.attributes.push_back(std::move(def));
  }
  schema.validate();
  return schema;
}

json to_json(const GlobalSchema& schema) {
  json attrs = json::array();
  for (const auto& a : schema.attributes) {
    json o = {{"name", a.name}, {"kind", to_string(a.kind)}};
    if (a.categorical()) o["vocabulary"] = a.vocabulary;
    if (a.unit) o["unit"] = *a.unit;
    if (a.range) o["range"] = {a.range->first, a.range->second};
    attrs.push_back(std::move(o));
  }
  return {{"version", schema.version}, {"attributes", std::move(attrs)}};
}

NodeMapping node_mapping_from_json(const json& n, const GlobalSchema& schema,
                                   const std::string& path) {
  if (!n.is_object()) throw ValidationError("node must be an object: " + path);
  reject_unknown_keys(n, {"node_id", "base_url", "table", "columns", "values"}, path);
  std::map<std::string, std::string> columns;
  std::map<std::string, std::map<std::string, std::string>> values;
  if (auto it = n.find("columns"); it != n.end()) {
    if (!it->is_object()) throw ValidationError("columns must be an object: " + path);
    for (const auto& [k, v] : it->items()) {
      if (!v.is_string()) throw ValidationError("expected string: " + path + ".columns." + k);
      columns[k] = v.get<std::string>();
    }
  }
  if (auto it = n.find("values"); it != n.end()) {
    if (!it->is_object()) throw ValidationError("values must be an object: " + path);
    for (const auto& [attr, m] : it->items()) {
      if (!m.is_object()) throw ValidationError("value map must be an object: " + path);
      for (const auto& [g, l] : m.items()) {
        if (!l.is_string()) {
          throw ValidationError("expected string: " + path + ".values." + attr + "." + g);
        }
        values[attr][g] = l.get<std::string>();
      }
    }
  }
  std::string base_url;
  if (auto it = n.find("base_url"); it != n.end()) base_url = it->get<std::string>();
  NodeMapping mapping(require_string(n, "node_id", path), std::move(base_url),
                      require_string(n, "table", path), std::move(columns), std::move(values));
  mapping.validate(schema, path);
  return mapping;
}

json to_json(const NodeMapping& m) {
  json values = json::object();
  for (const auto& [attr, forward] : m.values()) values[attr] = forward;
  json o = {{"node_id", m.node_id()},
            {"table", m.table()},
            {"columns", m.columns()},
            {"values", std::move(values)}};
  if (!m.base_url().empty()) o["base_url"] = m.base_url();
  return o;
}

CatalogStore load_catalog(const std::string& document) {
  json j;
  try {
    j = json::parse(document);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("catalog parse error: ") + e.what(), "parse_error");
  }
  if (!j.is_object()) throw ValidationError("catalog must be a JSON object", "parse_error");
  reject_unknown_keys(j, {"version", "attributes", "nodes"}, "");
  GlobalSchema schema = schema_from_json(j);
  std::map<std::string, NodeMapping> mappings;
  if (auto it = j.find("nodes"); it != j.end()) {
    if (!it->is_array()) throw ValidationError("nodes must be an array");
    for (std::size_t i = 0; i < it->size(); ++i) {
      const std::string path = "nodes[" + std::to_string(i) + "]";
      NodeMapping m = node_mapping_from_json((*it)[i], schema, path);
      const std::string id = m.node_id();
      if (!mappings.emplace(id, std::move(m)).second) {
        throw ValidationError("duplicate node_id: " + id + " at " + path);
      }
    }
  }
  return CatalogStore(std::move(schema), std::move(mappings));
}

CatalogStore load_catalog_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read catalog file: " + path, "io_error");
  std::stringstream ss;
  ss << in.rdbuf();
  return load_catalog(ss.str());
}

json to_json(const CatalogStore& store) {
  json out = to_json(store.schema());
  json nodes = json::array();
  for (const auto& [_, m] : store.mappings()) nodes.push_back(to_json(m));
  out["nodes"] = std::move(nodes);
  return out;
}

LocalSubQuery to_local(const std::vector<Predicate>& filter, const NodeMapping& mapping,
                       const GlobalSchema& schema) {
  LocalSubQuery sq;
  sq.table = mapping.table();
  for (const auto& p : filter) {
    const AttributeDef& attr = schema.at(p.attribute);
    const std::string& column = mapping.local_column(p.attribute);
    if (!attr.categorical()) {
      sq.filter.push_back({column, p.op, p.value});
      continue;
    }
    const auto* global = std::get_if<std::string>(&p.value);
    if (!global) {
      throw ValidationError("categorical attribute " + p.attribute + " compared with a number",
                            "type_mismatch");
    }
    auto local = mapping.local_value(attr, *global);
    if (local) {
      sq.filter.push_back({column, p.op, *local});
    } else if (p.op == Comparator::eq) {
      sq.unsatisfiable = true;
    }
    // `!=` against a value the node cannot hold is always true there.
  }
  return sq;
}

std::vector<Record> to_global(const std::vector<Record>& rows, const NodeMapping& mapping,
                              const GlobalSchema& schema) {
  std::vector<Record> out;
  out.reserve(rows.size());
  for (const auto& row : rows) {
    Record g;
    for (const auto& [column, cell] : row) {
      const std::string* attr_name = mapping.global_attribute(column);
      if (!attr_name) {
        throw ValidationError("node " + mapping.node_id() + ": unmapped column " + column);
      }
      const AttributeDef& attr = schema.at(*attr_name);
      if (!attr.categorical()) {
        g.emplace(*attr_name, cell);
        continue;
      }
      const auto* local = std::get_if<std::string>(&cell);
      std::optional<std::string> global;
      if (local) global = mapping.global_value(attr, *local);
      if (!global) {
        throw ValidationError("node " + mapping.node_id() + ": column " + column +
                                  " has unmapped value " +
                                  (local ? *local : format_number(std::get<double>(cell))),
                              "unmapped_value");
      }
      g.emplace(*attr_name, std::move(*global));
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace fedlake
