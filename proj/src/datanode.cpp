#include "fedlake/datanode.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cell += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cell += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(std::move(cell));
  return out;
}

std::optional<double> parse_number(const std::string& text, AttributeKind kind) {
  if (text.empty()) return std::nullopt;
  double v = 0.0;
  auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v)) return std::nullopt;
  if (kind == AttributeKind::integer && std::floor(v) != v) return std::nullopt;
  return v;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read file: " + path, "io_error");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::size_t LocalDataset::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i].name == name) return i;
  }
  return std::string::npos;
}

IngestResult ingest_csv_text(const std::string& text, const std::string& table,
                             const std::vector<ColumnDecl>& declared) {
  IngestResult result;
  result.dataset.table = table;
  result.dataset.columns = declared;

  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line)) throw ValidationError("CSV has no header row", "header_mismatch");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  std::vector<std::size_t> source(declared.size());
  for (std::size_t d = 0; d < declared.size(); ++d) {
    auto it = std::find(header.begin(), header.end(), declared[d].name);
    if (it == header.end()) {
      throw ValidationError("CSV header is missing declared column " + declared[d].name,
                            "header_mismatch");
    }
    source[d] = static_cast<std::size_t>(it - header.begin());
  }

  std::size_t row_number = 0;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    ++row_number;
    const auto cells = split_csv_line(line);
    std::vector<Value> row;
    row.reserve(declared.size());
    bool ok = cells.size() == header.size();
    for (std::size_t d = 0; ok && d < declared.size(); ++d) {
      const std::string& cell = cells[source[d]];
      if (declared[d].kind == AttributeKind::categorical) {
        if (cell.empty()) ok = false;
        row.emplace_back(cell);
      } else if (auto v = parse_number(cell, declared[d].kind)) {
        row.emplace_back(*v);
      } else {
        ok = false;
      }
    }
    if (ok) {
      result.dataset.rows.push_back(std::move(row));
    } else {
      result.report.dropped_rows.push_back(row_number);
    }
  }
  result.report.rows_read = row_number;
  return result;
}

IngestResult ingest_csv(const std::string& path, const std::string& table,
                        const std::vector<ColumnDecl>& declared) {
  std::ifstream probe(path);
  if (!probe) throw ValidationError("data file not found: " + path, "io_error");
  return ingest_csv_text(read_file(path), table, declared);
}

std::vector<ColumnDecl> NodeDocument::declared_columns() const {
  std::vector<ColumnDecl> out;
  for (const auto& attr : schema.attributes) {
    if (mapping.covers(attr.name)) out.push_back({mapping.local_column(attr.name), attr.kind});
  }
  return out;
}

NodeDocument node_document_from_json(const json& j) {
  if (!j.is_object() || !j.contains("schema") || !j.contains("node")) {
    throw ValidationError("node document needs \"schema\" and \"node\"");
  }
  NodeDocument doc;
  doc.schema = schema_from_json(j.at("schema"), "schema");
  doc.mapping = node_mapping_from_json(j.at("node"), doc.schema, "node");
  return doc;
}

NodeDocument load_node_document(const std::string& path) {
  try {
    return node_document_from_json(json::parse(read_file(path)));
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("node document parse error: ") + e.what(), "parse_error");
  }
}

json to_json(const NodeDocument& doc) {
  return {{"schema", to_json(doc.schema)}, {"node", to_json(doc.mapping)}};
}

std::string CacheRequest::fingerprint(int schema_version) const {
  json j = {{"schema_version", schema_version},
            {"pattern", pattern_name(pattern)},
            {"balance", to_json(balance)},
            {"split", split_fraction},
            {"seed", seed}};
  return fnv1a_hex(j.dump());
}

DataNode::DataNode(NodeDocument doc, LocalDataset data, IngestReport report)
    : doc_(std::move(doc)), data_(std::move(data)), report_(std::move(report)) {
  for (Pattern p : kAllPatterns) {
    if (is_prediction(p)) training_locks_[p] = std::make_unique<std::mutex>();
  }
}

std::shared_ptr<DataNode> DataNode::from_files(const std::string& csv_path,
                                               const std::string& mapping_path) {
  NodeDocument doc = load_node_document(mapping_path);
  IngestResult ingested = ingest_csv(csv_path, doc.mapping.table(), doc.declared_columns());
  return std::make_shared<DataNode>(std::move(doc), std::move(ingested.dataset),
                                    std::move(ingested.report));
}

NodeMetadata DataNode::metadata() const {
  return {node_id(), data_.table, data_.columns, data_.row_count()};
}

SubQueryResult DataNode::execute_subquery(const LocalSubQuery& sq) const {
  if (!sq.table.empty() && sq.table != data_.table) {
    throw ValidationError("unknown table: " + sq.table, "unknown_table");
  }
  auto column = [&](const std::string& name) {
    const std::size_t idx = data_.column_index(name);
    if (idx == std::string::npos) throw ValidationError("unknown column: " + name, "unknown_column");
    return idx;
  };
  std::vector<std::size_t> filter_cols;
  for (const auto& p : sq.filter) {
    const std::size_t idx = column(p.column);
    const AttributeKind kind = data_.columns[idx].kind;
    if (!is_numeric(kind) && p.op != Comparator::eq && p.op != Comparator::ne) {
      throw ValidationError("comparator " + std::string(to_string(p.op)) +
                                " not valid on categorical column " + p.column,
                            "type_mismatch");
    }
    if (is_numeric(kind) != is_numeric(p.value)) {
      throw ValidationError("literal kind does not match column " + p.column, "type_mismatch");
    }
    filter_cols.push_back(idx);
  }

  SubQueryResult result;
  result.mode = sq.mode;
  std::vector<std::size_t> out_cols;
  if (sq.mode == SubQueryMode::select_rows) {
    if (sq.columns.empty()) {
      for (std::size_t i = 0; i < data_.columns.size(); ++i) out_cols.push_back(i);
    } else {
      for (const auto& c : sq.columns) out_cols.push_back(column(c));
    }
  } else {
    for (const auto& c : sq.group_columns) out_cols.push_back(column(c));
  }
  if (sq.unsatisfiable) return result;

  for (const auto& row : data_.rows) {
    bool match = true;
    for (std::size_t f = 0; match && f < sq.filter.size(); ++f) {
      match = evaluate(sq.filter[f].op, row[filter_cols[f]], sq.filter[f].value);
    }
    if (!match) continue;
    if (sq.mode == SubQueryMode::select_rows) {
      Record r;
      for (std::size_t c : out_cols) r.emplace(data_.columns[c].name, row[c]);
      result.rows.push_back(std::move(r));
    } else {
      std::vector<std::string> key;
      for (std::size_t c : out_cols) {
        const Value& v = row[c];
        key.push_back(is_numeric(v) ? format_number(std::get<double>(v)) : std::get<std::string>(v));
      }
      ++result.counts[key];
    }
  }
  return result;
}

std::vector<Record> DataNode::global_rows() const {
  std::vector<Record> out;
  out.reserve(data_.rows.size());
  for (const auto& row : data_.rows) {
    Record local;
    for (std::size_t c = 0; c < data_.columns.size(); ++c) local.emplace(data_.columns[c].name, row[c]);
    out.push_back(std::move(local));
  }
  return out;
}

std::unique_lock<std::mutex> DataNode::lock_training(Pattern pattern) {
  auto it = training_locks_.find(pattern);
  if (it == training_locks_.end()) {
    throw ValidationError(std::string("not a prediction pattern: ") + std::string(pattern_name(pattern)));
  }
  std::unique_lock lock(*it->second, std::try_to_lock);
  if (!lock.owns_lock()) {
    throw BusyError("training for " + std::string(pattern_name(pattern)) + " is in progress at " +
                    node_id());
  }
  return lock;
}

CacheInfo DataNode::build_training_cache(const CacheRequest& request) {
  const PredictionTask& task = prediction_task(request.pattern);
  auto guard = lock_training(request.pattern);
  const std::string fingerprint = request.fingerprint(doc_.schema.version);

  auto info_for = [](const TrainingCache& c, bool rebuilt) {
    CacheInfo info;
    info.fingerprint = c.fingerprint;
    info.n_train = c.train.size();
    info.n_test = c.test.size();
    info.n_synthetic = c.train.size() - c.n_original_train;
    info.feature_width = c.layout.width;
    info.num_classes = c.class_names.size();
    info.rebuilt = rebuilt;
    info.fraction_warning = c.fraction_warning;
    info.balance = c.balance;
    return info;
  };
  {
    std::lock_guard lock(state_mutex_);
    auto it = caches_.find(request.pattern);
    if (it != caches_.end() && it->second->fingerprint == fingerprint) return info_for(*it->second, false);
  }

  if (!doc_.mapping.covers(task.target)) {
    throw ValidationError("target attribute " + task.target + " unmapped at node " + node_id(),
                          "target_unmapped");
  }
  for (const auto& f : task.features) {
    if (!doc_.mapping.covers(f)) {
      throw ValidationError("feature attribute " + f + " unmapped at node " + node_id(),
                            "feature_unmapped");
    }
  }
  const AttributeDef& target = doc_.schema.at(task.target);

  // clean: keep rows whose every mapped cell decodes to the global vocabulary
  std::vector<Record> clean;
  std::vector<std::size_t> clean_rows;
  const auto local = global_rows();
  for (std::size_t i = 0; i < local.size(); ++i) {
    try {
      auto g = to_global({local[i]}, doc_.mapping, doc_.schema);
      clean.push_back(std::move(g.front()));
      clean_rows.push_back(i);
    } catch (const ValidationError&) {
    }
  }
  std::set<int> classes;
  for (const auto& r : clean) classes.insert(encode_label(r, target));
  if (classes.size() < 2) {
    throw ValidationError("fewer than 2 classes of " + task.target + " at node " + node_id(),
                          "single_class");
  }

  auto cache = std::make_shared<TrainingCache>();
  cache->fingerprint = fingerprint;
  cache->class_names = target.vocabulary;
  cache->layout = encoding_layout(doc_.schema, task.features);

  const SplitResult split = train_test_split(clean.size(), request.split_fraction, request.seed);
  cache->fraction_warning = split.fraction_warning;
  auto encode = [&](const std::vector<std::size_t>& positions, std::vector<std::size_t>& rows) {
    Dataset d;
    d.features = Matrix(positions.size(), cache->layout.width);
    for (std::size_t n = 0; n < positions.size(); ++n) {
      const Record& r = clean[positions[n]];
      const auto x = encode_row(r, doc_.schema, cache->layout);
      std::copy(x.begin(), x.end(), d.features.row(n).begin());
      d.labels.push_back(encode_label(r, target));
      rows.push_back(clean_rows[positions[n]]);
    }
    return d;
  };
  const Dataset train = encode(split.train, cache->train_rows);
  cache->test = encode(split.test, cache->test_rows);
  cache->n_original_train = train.size();

  Rng rng(request.seed ^ 0x9e3779b97f4a7c15ULL);
  cache->train = balance_training_set(train, cache->class_names.size(), request.balance, rng, cache->balance);

  CacheInfo info = info_for(*cache, true);
  std::lock_guard lock(state_mutex_);
  caches_[request.pattern] = std::move(cache);
  return info;
}

std::shared_ptr<const TrainingCache> DataNode::cache(Pattern pattern) const {
  std::lock_guard lock(state_mutex_);
  auto it = caches_.find(pattern);
  return it == caches_.end() ? nullptr : it->second;
}

std::shared_ptr<const TrainingCache> DataNode::require_cache(Pattern pattern) const {
  auto c = cache(pattern);
  if (!c) {
    throw ValidationError("no training cache for " + std::string(pattern_name(pattern)) + " at " +
                              node_id(),
                          "no_cache");
  }
  return c;
}

RoundResult DataNode::local_train_round(const RoundRequest& request) {
  auto guard = lock_training(request.pattern);
  auto cache = require_cache(request.pattern);
  if (!request.fingerprint.empty() && request.fingerprint != cache->fingerprint) {
    throw ValidationError("cache fingerprint mismatch at " + node_id(), "fingerprint_mismatch");
  }
  if (!is_linear(request.params.kind)) {
    throw ValidationError("training rounds exchange linear parameters only");
  }
  request.params.validate();
  if (request.params.feature_width != cache->layout.width ||
      request.params.num_classes != cache->class_names.size()) {
    throw ValidationError("parameter dimension mismatch at " + node_id(), "dimension_mismatch");
  }
  if (cache->train.size() == 0) throw ValidationError("empty training split", "empty_split");

  {
    std::lock_guard lock(state_mutex_);
    const auto& log = logs_[request.pattern];
    if (request.round != 1 && !log.empty() && request.round <= log.back().round) {
      throw ValidationError("round indices must strictly increase", "round_order");
    }
  }

  TrainConfig config = request.config;
  config.kind = request.params.kind;
  RoundResult result;
  result.params = train_linear(request.params, cache->train, config);
  result.n_train = cache->train.size();

  MetricsReport local = evaluate_linear(*cache, result.params);
  std::lock_guard lock(state_mutex_);
  auto& log = logs_[request.pattern];
  const std::size_t session =
      log.empty() ? 1 : (request.round == 1 ? log.back().session + 1 : log.back().session);
  log.push_back({session, request.round, request.pattern, result.params.digest(), std::move(local)});
  return result;
}

MetricsReport DataNode::evaluate_linear(const TrainingCache& cache, const ParameterVector& params) const {
  if (cache.test.size() == 0) throw ValidationError("empty test split", "empty_split");
  if (params.feature_width != cache.layout.width || params.num_classes != cache.class_names.size()) {
    throw ValidationError("parameter dimension mismatch at " + node_id(), "dimension_mismatch");
  }
  std::vector<int> predicted;
  std::vector<std::vector<double>> scores;
  for (std::size_t i = 0; i < cache.test.size(); ++i) {
    const auto x = cache.test.features.row(i);
    scores.push_back(class_probabilities(params, x));
    predicted.push_back(predict_class(params, x));
  }
  return compute_metrics(predicted, scores, cache.test.labels, cache.class_names);
}

MetricsReport DataNode::local_evaluate(Pattern pattern, const ParameterVector& params) {
  auto cache = require_cache(pattern);
  params.validate();
  MetricsReport m = evaluate_linear(*cache, params);
  std::lock_guard lock(state_mutex_);
  last_metrics_[pattern] = m;
  return m;
}

MetricsReport DataNode::local_evaluate_trees(Pattern pattern, const std::vector<DecisionTree>& trees) {
  auto cache = require_cache(pattern);
  if (cache->test.size() == 0) throw ValidationError("empty test split", "empty_split");
  std::vector<int> predicted;
  std::vector<std::vector<double>> scores;
  for (std::size_t i = 0; i < cache->test.size(); ++i) {
    const auto x = cache->test.features.row(i);
    predicted.push_back(vote_trees(trees, x, cache->class_names));
    scores.push_back(vote_distribution(trees, x));
  }
  MetricsReport m = compute_metrics(predicted, scores, cache->test.labels, cache->class_names);
  std::lock_guard lock(state_mutex_);
  last_metrics_[pattern] = m;
  return m;
}

DecisionTree DataNode::train_tree(Pattern pattern, const TrainConfig& config) {
  auto guard = lock_training(pattern);
  auto cache = require_cache(pattern);
  if (cache->train.size() == 0) throw ValidationError("empty training split", "empty_split");
  return cart_train(cache->train.features, cache->train.labels, cache->class_names.size(),
                    config.max_depth, config.min_leaf, config.seed);
}

GridSearchResult DataNode::select_model(Pattern pattern, const std::vector<TrainConfig>& grid,
                                        std::size_t folds, std::uint64_t seed) {
  auto guard = lock_training(pattern);
  auto cache = require_cache(pattern);
  std::vector<std::size_t> real(cache->n_original_train);
  for (std::size_t i = 0; i < real.size(); ++i) real[i] = i;
  Dataset original;
  original.features = cache->train.features.select_rows(real);
  original.labels.assign(cache->train.labels.begin(),
                         cache->train.labels.begin() + static_cast<std::ptrdiff_t>(real.size()));
  return grid_search(grid, folds, original, cache->class_names.size(), seed);
}

std::vector<ModelLogEntry> DataNode::model_log(Pattern pattern) const {
  std::lock_guard lock(state_mutex_);
  auto it = logs_.find(pattern);
  return it == logs_.end() ? std::vector<ModelLogEntry>{} : it->second;
}

std::optional<MetricsReport> DataNode::last_metrics(Pattern pattern) const {
  std::lock_guard lock(state_mutex_);
  auto it = last_metrics_.find(pattern);
  if (it == last_metrics_.end()) return std::nullopt;
  return it->second;
}

Pattern prediction_pattern_from_text(const std::string& text) {
  auto p = prediction_from_any(text);
  if (!p) throw ValidationError("unknown prediction pattern: " + text, "unknown_pattern");
  return *p;
}

json to_json(const NodeMetadata& m) {
  json cols = json::array();
  for (const auto& c : m.columns) cols.push_back({{"name", c.name}, {"kind", to_string(c.kind)}});
  return {{"node_id", m.node_id}, {"table", m.table}, {"columns", std::move(cols)}, {"row_count", m.row_count}};
}

NodeMetadata node_metadata_from_json(const json& j) {
  NodeMetadata m;
  m.node_id = j.at("node_id").get<std::string>();
  m.table = j.at("table").get<std::string>();
  for (const auto& c : j.at("columns")) {
    m.columns.push_back({c.at("name").get<std::string>(),
                         attribute_kind_from_string(c.at("kind").get<std::string>())});
  }
  m.row_count = j.at("row_count").get<std::size_t>();
  return m;
}

json to_json(const CacheRequest& r) {
  return {{"pattern", pattern_name(r.pattern)},
          {"balance", to_json(r.balance)},
          {"split_fraction", r.split_fraction},
          {"seed", r.seed}};
}

CacheRequest cache_request_from_json(const json& j) {
  CacheRequest r;
  r.pattern = prediction_pattern_from_text(j.at("pattern").get<std::string>());
  if (j.contains("balance")) r.balance = balance_config_from_json(j.at("balance"));
  r.split_fraction = j.value("split_fraction", r.split_fraction);
  r.seed = j.value("seed", r.seed);
  return r;
}

json to_json(const CacheInfo& c) {
  return {{"fingerprint", c.fingerprint},   {"n_train", c.n_train},
          {"n_test", c.n_test},             {"n_synthetic", c.n_synthetic},
          {"feature_width", c.feature_width}, {"num_classes", c.num_classes},
          {"rebuilt", c.rebuilt},           {"fraction_warning", c.fraction_warning},
          {"balance", to_json(c.balance)}};
}

CacheInfo cache_info_from_json(const json& j) {
  CacheInfo c;
  c.fingerprint = j.at("fingerprint").get<std::string>();
  c.n_train = j.at("n_train").get<std::size_t>();
  c.n_test = j.at("n_test").get<std::size_t>();
  c.n_synthetic = j.value("n_synthetic", std::size_t{0});
  c.feature_width = j.at("feature_width").get<std::size_t>();
  c.num_classes = j.at("num_classes").get<std::size_t>();
  c.rebuilt = j.value("rebuilt", false);
  c.fraction_warning = j.value("fraction_warning", false);
  if (j.contains("balance")) {
    const json& b = j.at("balance");
    c.balance.chi_squared.statistic = b.value("chi_squared", 0.0);
    c.balance.chi_squared.dof = b.value("dof", std::size_t{0});
    c.balance.chi_squared.reject = b.value("reject", false);
    c.balance.minority_fraction = b.value("minority_fraction", 0.0);
    c.balance.applied = b.value("applied", false);
    c.balance.synthetic_rows = b.value("synthetic_rows", std::size_t{0});
    c.balance.flags = b.value("flags", std::vector<std::string>{});
  }
  return c;
}

json to_json(const RoundRequest& r) {
  return {{"pattern", pattern_name(r.pattern)},
          {"round", r.round},
          {"params", r.params.values},
          {"model", {{"kind", to_string(r.params.kind)},
                     {"num_classes", r.params.num_classes},
                     {"feature_width", r.params.feature_width}}},
          {"config", to_json(r.config)},
          {"fingerprint", r.fingerprint}};
}

RoundRequest round_request_from_json(const json& j) {
  RoundRequest r;
  r.pattern = prediction_pattern_from_text(j.at("pattern").get<std::string>());
  r.round = j.at("round").get<std::size_t>();
  const json& model = j.at("model");
  r.params.kind = model_kind_from_string(model.at("kind").get<std::string>());
  r.params.num_classes = model.at("num_classes").get<std::size_t>();
  r.params.feature_width = model.at("feature_width").get<std::size_t>();
  r.params.values = j.at("params").get<std::vector<double>>();
  r.config = train_config_from_json(j.value("config", json::object()));
  r.fingerprint = j.value("fingerprint", "");
  return r;
}

json to_json(const RoundResult& r) {
  return {{"params", r.params.values},
          {"n_train", r.n_train},
          {"model", {{"kind", to_string(r.params.kind)},
                     {"num_classes", r.params.num_classes},
                     {"feature_width", r.params.feature_width}}}};
}

RoundResult round_result_from_json(const json& j) {
  RoundResult r;
  const json& model = j.at("model");
  r.params.kind = model_kind_from_string(model.at("kind").get<std::string>());
  r.params.num_classes = model.at("num_classes").get<std::size_t>();
  r.params.feature_width = model.at("feature_width").get<std::size_t>();
  r.params.values = j.at("params").get<std::vector<double>>();
  r.n_train = j.at("n_train").get<std::size_t>();
  return r;
}

json to_json(const ModelLogEntry& e) {
  return {{"session", e.session},
          {"round", e.round},
          {"pattern", pattern_name(e.pattern)},
          {"digest", e.digest},
          {"metrics", to_json(e.metrics)}};
}

ModelLogEntry model_log_entry_from_json(const json& j) {
  ModelLogEntry e;
  e.session = j.at("session").get<std::size_t>();
  e.round = j.at("round").get<std::size_t>();
  e.pattern = prediction_pattern_from_text(j.at("pattern").get<std::string>());
  e.digest = j.at("digest").get<std::string>();
  e.metrics = metrics_report_from_json(j.at("metrics"));
  return e;
}

}  // namespace fedlake
