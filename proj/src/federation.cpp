#include "fedlake/federation.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <future>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

std::string_view to_string(AggregationMode m) {
  return m == AggregationMode::unweighted ? "unweighted" : "sample_weighted";
}

AggregationMode aggregation_mode_from_string(std::string_view s) {
  if (s == "unweighted") return AggregationMode::unweighted;
  if (s == "sample_weighted" || s == "weighted") return AggregationMode::sample_weighted;
  throw ValidationError("unknown aggregation mode: " + std::string(s));
}

std::vector<double> fedavg(const std::vector<FedAvgEntry>& entries, AggregationMode mode) {
  if (entries.empty()) throw ValidationError("fedavg needs at least one entry", "empty_input");
  const std::size_t dim = entries.front().params.size();
  for (const auto& e : entries) {
    if (e.params.size() != dim) {
      throw ValidationError("parameter dimension mismatch from " + e.node_id, "dimension_mismatch");
    }
    for (double v : e.params) {
      if (!std::isfinite(v)) throw ValidationError("non-finite parameters from " + e.node_id, "non_finite");
    }
    if (mode == AggregationMode::sample_weighted && e.n_train == 0) {
      throw ValidationError("zero sample weight from " + e.node_id);
    }
  }
  // m_k = m_{k-1} + (w_k / S_k)(x_k - m_{k-1}) with S_k the running weight sum.
  std::vector<double> mean(entries.front().params);
  double total = mode == AggregationMode::unweighted ? 1.0 : static_cast<double>(entries.front().n_train);
  for (std::size_t k = 1; k < entries.size(); ++k) {
    const double w = mode == AggregationMode::unweighted ? 1.0 : static_cast<double>(entries[k].n_train);
    total += w;
    const double step = w / total;
    for (std::size_t i = 0; i < dim; ++i) mean[i] += step * (entries[k].params[i] - mean[i]);
  }
  return mean;
}

void FederationConfig::validate() const {
  if (rounds < 1) throw ValidationError("rounds must be at least 1");
  if (round_timeout.count() <= 0) throw ValidationError("round timeout must be positive");
  if (min_nodes < 1) throw ValidationError("min_nodes must be at least 1");
}

json to_json(const FederationConfig& c) {
  return {{"rounds", c.rounds},
          {"mode", to_string(c.mode)},
          {"round_timeout_ms", c.round_timeout.count()},
          {"min_nodes", c.min_nodes},
          {"early_stop", c.early_stop},
          {"balance", to_json(c.balance)},
          {"split_fraction", c.split_fraction},
          {"seed", c.seed}};
}

FederationConfig federation_config_from_json(const json& j, FederationConfig base) {
  FederationConfig c = std::move(base);
  if (j.contains("rounds")) c.rounds = j.at("rounds").get<std::size_t>();
  if (j.contains("mode")) c.mode = aggregation_mode_from_string(j.at("mode").get<std::string>());
  if (j.contains("round_timeout_ms")) {
    c.round_timeout = std::chrono::milliseconds(j.at("round_timeout_ms").get<long long>());
  }
  if (j.contains("min_nodes")) c.min_nodes = j.at("min_nodes").get<std::size_t>();
  if (j.contains("early_stop")) c.early_stop = j.at("early_stop").get<bool>();
  if (j.contains("balance")) c.balance = balance_config_from_json(j.at("balance"));
  if (j.contains("split_fraction")) c.split_fraction = j.at("split_fraction").get<double>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

AggregatedMetrics aggregate_metrics(const std::vector<MetricsReport>& per_node) {
  if (per_node.empty()) throw ValidationError("no metrics to aggregate");
  AggregatedMetrics a;
  const std::size_t k = per_node.front().confusion.size();
  std::vector<std::vector<long long>> confusion(k, std::vector<long long>(k, 0));
  std::vector<std::string> names;
  for (const auto& c : per_node.front().per_class) names.push_back(c.label);
  for (const auto& m : per_node) {
    if (m.confusion.size() != k) throw ValidationError("metrics disagree on class count");
    const auto w = static_cast<double>(m.n_test);
    a.accuracy += w * m.accuracy;
    a.precision += w * m.precision;
    a.recall += w * m.recall;
    a.f1 += w * m.f1;
    a.auc_roc += w * m.auc_roc;
    a.n_test += m.n_test;
    for (std::size_t t = 0; t < k; ++t) {
      for (std::size_t p = 0; p < k; ++p) confusion[t][p] += m.confusion[t][p];
    }
  }
  const auto n = static_cast<double>(a.n_test);
  a.accuracy /= n;
  a.precision /= n;
  a.recall /= n;
  a.f1 /= n;
  a.auc_roc /= n;
  a.pooled = metrics_from_confusion(confusion, names);
  a.pooled.auc_roc = a.auc_roc;
  a.pooled.flags.push_back("auc_weighted_mean");
  return a;
}

namespace {

json to_json(const AggregatedMetrics& a) {
  return {{"accuracy", a.accuracy}, {"precision", a.precision}, {"recall", a.recall},
          {"f1", a.f1},             {"auc_roc", a.auc_roc},     {"n_test", a.n_test},
          {"pooled", fedlake::to_json(a.pooled)}};
}

AggregatedMetrics aggregated_metrics_from_json(const json& j) {
  AggregatedMetrics a;
  a.accuracy = j.at("accuracy").get<double>();
  a.precision = j.at("precision").get<double>();
  a.recall = j.at("recall").get<double>();
  a.f1 = j.at("f1").get<double>();
  a.auc_roc = j.at("auc_roc").get<double>();
  a.n_test = j.at("n_test").get<long long>();
  a.pooled = metrics_report_from_json(j.at("pooled"));
  return a;
}

json to_json(const RoundRecord& r) {
  return {{"round", r.round},
          {"participants", r.participants},
          {"n_train", r.n_train},
          {"skipped", r.skipped},
          {"metrics", to_json(r.metrics)}};
}

}  // namespace

json to_json(const GlobalModel& m) {
  json history = json::array();
  for (const auto& r : m.history) history.push_back(to_json(r));
  json trees = json::array();
  for (const auto& t : m.trees) trees.push_back(to_json(t));
  return {{"pattern", pattern_name(m.pattern)},
          {"model", to_json(m.params)},
          {"trees", std::move(trees)},
          {"tree_nodes", m.tree_nodes},
          {"features", m.features},
          {"class_names", m.class_names},
          {"fingerprint", m.fingerprint},
          {"train_config", to_json(m.train_config)},
          {"mode", to_string(m.mode)},
          {"rounds", m.rounds()},
          {"history", std::move(history)},
          {"aborted", m.aborted},
          {"abort_reason", m.abort_reason}};
}

GlobalModel global_model_from_json(const json& j) {
  GlobalModel m;
  m.pattern = prediction_pattern_from_text(j.at("pattern").get<std::string>());
  m.params = parameter_vector_from_json(j.at("model"));
  for (const auto& t : j.value("trees", json::array())) m.trees.push_back(decision_tree_from_json(t));
  m.tree_nodes = j.value("tree_nodes", std::vector<std::string>{});
  m.features = j.at("features").get<std::vector<std::string>>();
  m.class_names = j.at("class_names").get<std::vector<std::string>>();
  m.fingerprint = j.value("fingerprint", "");
  m.train_config = train_config_from_json(j.value("train_config", json::object()));
  m.mode = aggregation_mode_from_string(j.value("mode", "unweighted"));
  for (const auto& r : j.at("history")) {
    RoundRecord rec;
    rec.round = r.at("round").get<std::size_t>();
    rec.participants = r.at("participants").get<std::vector<std::string>>();
    rec.n_train = r.at("n_train").get<std::vector<std::size_t>>();
    rec.skipped = r.value("skipped", std::vector<std::string>{});
    rec.metrics = aggregated_metrics_from_json(r.at("metrics"));
    m.history.push_back(std::move(rec));
  }
  m.aborted = j.value("aborted", false);
  m.abort_reason = j.value("abort_reason", "");
  return m;
}

json summary_json(const GlobalModel& m) {
  json s = {{"pattern", pattern_name(m.pattern)},
            {"model_kind", to_string(m.train_config.kind)},
            {"rounds", m.rounds()},
            {"mode", to_string(m.mode)},
            {"class_names", m.class_names},
            {"feature_width", m.params.feature_width},
            {"aborted", m.aborted},
            {"abort_reason", m.abort_reason},
            {"digest", is_linear(m.train_config.kind) ? m.params.digest() : fnv1a_hex(to_json(m).dump())}};
  s["final"] = m.history.empty() ? json(nullptr) : to_json(m.history.back());
  return s;
}

json merge_count_trees(const std::vector<CountPartial>& partials) {
  if (partials.empty()) throw ValidationError("no partial count trees to merge");
  const auto& group_by = partials.front().group_by;
  const auto& target = partials.front().target;
  std::map<std::vector<std::string>, std::map<std::string, long long>> leaves;
  for (const auto& p : partials) {
    if (p.group_by != group_by || p.target != target) {
      throw ValidationError("partials disagree on group_by order", "group_by_mismatch");
    }
    for (const auto& [key, count] : p.counts) {
      if (key.size() != group_by.size() + 1) throw ValidationError("count key has wrong arity");
      std::vector<std::string> group(key.begin(), key.end() - 1);
      leaves[group][key.back()] += count;
    }
  }
  json tree = json::object();
  for (const auto& [group, counts] : leaves) {
    long long total = 0;
    const std::pair<const std::string, long long>* best = nullptr;
    for (const auto& entry : counts) {
      total += entry.second;
      // map iteration is lexicographic, so strict > keeps the smallest label on ties
      if (!best || entry.second > best->second) best = &entry;
    }
    json* node = &tree;
    for (const auto& v : group) node = &(*node)[v];
    *node = {{"counts", counts},
             {"total", total},
             {"most_likely", best->first},
             {"share", total ? static_cast<double>(best->second) / static_cast<double>(total) : 0.0}};
  }
  return tree;
}

std::string federated_tree_vote(const GlobalModel& model, std::span<const double> x) {
  if (model.trees.empty()) throw FederationError("no trained trees for this pattern", "no_model");
  return model.class_names.at(static_cast<std::size_t>(vote_trees(model.trees, x, model.class_names)));
}

json to_json(const AggregatedResult& r) {
  json partials = json::array();
  for (const auto& p : r.partials) {
    json e = {{"node_id", p.node_id}, {"ok", p.ok}, {"elapsed_ms", p.elapsed_ms}, {"items", p.items}};
    if (!p.ok) e["error"] = {{"code", p.error_code}, {"message", p.error}};
    partials.push_back(std::move(e));
  }
  return {{"query", to_json(r.query)},
          {"text", r.text},
          {"aggregation", to_string(r.aggregation)},
          {"result", r.merged},
          {"partial", r.partial},
          {"failed_nodes", r.failed_nodes},
          {"provenance", std::move(partials)},
          {"digest", r.digest}};
}

json to_json(const NodeHealth& h) {
  json j = {{"node_id", h.node_id}, {"healthy", h.healthy}};
  j["metadata"] = h.metadata ? to_json(*h.metadata) : json(nullptr);
  if (!h.error.empty()) j["error"] = h.error;
  return j;
}

bool matches(const std::vector<Predicate>& filter, const Record& row) {
  for (const auto& p : filter) {
    auto it = row.find(p.attribute);
    if (it == row.end() || !evaluate(p.op, it->second, p.value)) return false;
  }
  return true;
}

std::vector<double> encode_query_features(const AnalyticalQuery& query, const GlobalSchema& schema,
                                          const EncodingLayout& layout,
                                          std::vector<std::string>& unspecified) {
  std::vector<double> x(layout.width, 0.0);
  for (std::size_t f = 0; f < layout.features.size(); ++f) {
    const AttributeDef& a = schema.at(layout.features[f]);
    const Predicate* eq = nullptr;
    for (const auto& p : query.filter) {
      if (p.attribute == a.name && p.op == Comparator::eq) eq = &p;
    }
    if (a.categorical()) {
      if (!eq) {
        unspecified.push_back(a.name);
        continue;
      }
      x[layout.offsets[f] + a.vocabulary_index(std::get<std::string>(eq->value))] = 1.0;
    } else {
      const auto [lo, hi] = *a.range;
      if (eq) {
        x[layout.offsets[f]] = (std::get<double>(eq->value) - lo) / (hi - lo);
        continue;
      }
      // Bounds narrow the interval; the feature takes its midpoint.
      double low = lo, high = hi;
      bool bounded = false;
      for (const auto& p : query.filter) {
        if (p.attribute != a.name) continue;
        const double v = std::get<double>(p.value);
        if (p.op == Comparator::gt || p.op == Comparator::ge) {
          low = std::max(low, v);
          bounded = true;
        } else if (p.op == Comparator::lt || p.op == Comparator::le) {
          high = std::min(high, v);
          bounded = true;
        }
      }
      if (!bounded) unspecified.push_back(a.name);
      x[layout.offsets[f]] = ((low + high) / 2.0 - lo) / (hi - lo);
    }
  }
  return x;
}

namespace {

template <typename T>
struct Outcome {
  std::string node_id;
  std::optional<T> value;
  std::string error_code;
  std::string error;
  double elapsed_ms = 0.0;
};

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

/// Runs `fn` against every target concurrently. Results come back in target
/// order regardless of completion order. A target that misses the deadline
/// is reported as a timeout; its task is parked in `stragglers`.
template <typename T, typename Fn>
std::vector<Outcome<T>> dispatch(const std::vector<NodeClient*>& targets, Fn fn,
                                 std::chrono::milliseconds timeout,
                                 std::vector<std::future<void>>* stragglers = nullptr) {
  struct Slot {
    std::future<Outcome<T>> future;
  };
  std::vector<Slot> slots;
  for (NodeClient* node : targets) {
    slots.push_back({std::async(std::launch::async, [node, fn] {
      Outcome<T> out;
      out.node_id = node->node_id();
      const auto t0 = std::chrono::steady_clock::now();
      try {
        out.value = fn(*node);
      } catch (const Error& e) {
        out.error_code = e.code();
        out.error = e.what();
      } catch (const std::exception& e) {
        out.error_code = "internal_error";
        out.error = e.what();
      }
      out.elapsed_ms = ms_since(t0);
      return out;
    })});
  }
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  std::vector<Outcome<T>> results;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    if (slots[i].future.wait_until(deadline) == std::future_status::ready) {
      results.push_back(slots[i].future.get());
      continue;
    }
    Outcome<T> out;
    out.node_id = targets[i]->node_id();
    out.error_code = "timeout";
    out.error = "node did not answer within " + std::to_string(timeout.count()) + " ms";
    out.elapsed_ms = static_cast<double>(timeout.count());
    results.push_back(std::move(out));
    auto shared = std::make_shared<std::future<Outcome<T>>>(std::move(slots[i].future));
    auto waiter = std::async(std::launch::async, [shared] { shared->wait(); });
    if (stragglers) {
      stragglers->push_back(std::move(waiter));
    } else {
      waiter.wait();
    }
  }
  return results;
}

}  // namespace

Coordinator::Coordinator(std::shared_ptr<CatalogStore> catalog,
                         std::vector<std::shared_ptr<NodeClient>> nodes, FederationConfig config)
    : catalog_(std::move(catalog)), nodes_(std::move(nodes)), config_(config) {
  config_.validate();
  std::sort(nodes_.begin(), nodes_.end(),
            [](const auto& a, const auto& b) { return a->node_id() < b->node_id(); });
  for (std::size_t i = 1; i < nodes_.size(); ++i) {
    if (nodes_[i]->node_id() == nodes_[i - 1]->node_id()) {
      throw ValidationError("duplicate node client: " + nodes_[i]->node_id());
    }
  }
  for (const auto& n : nodes_) {
    if (!catalog_->mappings().count(n->node_id())) {
      throw ValidationError("node " + n->node_id() + " is not in the catalog", "unknown_node");
    }
  }
  for (Pattern p : kAllPatterns) {
    if (is_prediction(p)) training_locks_[p] = std::make_unique<std::mutex>();
  }
}

std::vector<std::string> Coordinator::node_ids() const {
  std::vector<std::string> out;
  for (const auto& n : nodes_) out.push_back(n->node_id());
  return out;
}

NodeClient& Coordinator::client(const std::string& node_id) const {
  for (const auto& n : nodes_) {
    if (n->node_id() == node_id) return *n;
  }
  throw FederationError("no client registered for node " + node_id, "unknown_node");
}

AggregatedResult Coordinator::run_query(const std::string& text) {
  const GlobalSchema& schema = catalog_->schema();
  AggregatedResult result;
  result.query = parse_query(text, schema);
  result.text = render_query(result.query);
  result.aggregation = aggregation_for(result.query.pattern);

  if (result.aggregation == Aggregation::model_inference) {
    result.merged = infer(result.query);
  } else {
    // only nodes that are both registered and covering take part
    std::vector<std::shared_ptr<NodeClient>> registered = nodes_;
    std::map<std::string, NodeMapping> mappings;
    for (const auto& n : registered) mappings.emplace(n->node_id(), catalog_->mappings().at(n->node_id()));
    const CatalogStore view(schema, mappings);
    const QueryPlan plan = plan_query(result.query, view);

    std::vector<NodeClient*> targets;
    std::map<std::string, LocalSubQuery> subqueries;
    for (const auto& [id, sq] : plan.subqueries) {
      targets.push_back(&client(id));
      subqueries.emplace(id, sq);
    }
    auto outcomes = dispatch<SubQueryResult>(
        targets, [&subqueries](NodeClient& n) { return n.subquery(subqueries.at(n.node_id())); },
        config_.round_timeout);

    json rows = json::array();
    json sources = json::array();
    std::vector<CountPartial> counts;
    std::vector<std::string> group_by = result.query.group_by;
    std::size_t ok = 0;
    for (auto& o : outcomes) {
      NodePartial partial{o.node_id, o.value.has_value(), o.error_code, o.error, o.elapsed_ms, 0};
      if (!o.value) {
        result.failed_nodes.push_back(o.node_id);
        result.partials.push_back(std::move(partial));
        continue;
      }
      const NodeMapping& mapping = catalog_->mappings().at(o.node_id);
      try {
        if (result.aggregation == Aggregation::row_union) {
          const auto global = to_global(o.value->rows, mapping, schema);
          for (const auto& r : global) {
            rows.push_back(to_json(r));
            sources.push_back(o.node_id);
          }
          partial.items = global.size();
        } else {
          CountPartial cp;
          cp.node_id = o.node_id;
          cp.group_by = group_by;
          cp.target = *result.query.target;
          std::vector<const AttributeDef*> attrs;
          for (const auto& g : group_by) attrs.push_back(&schema.at(g));
          attrs.push_back(&schema.at(cp.target));
          for (const auto& [key, n] : o.value->counts) {
            std::vector<std::string> gkey;
            for (std::size_t i = 0; i < key.size(); ++i) {
              auto g = mapping.global_value(*attrs[i], key[i]);
              if (!g) {
                throw ValidationError("node " + o.node_id + " returned unmapped value '" + key[i] +
                                          "' for " + attrs[i]->name,
                                      "unmapped_value");
              }
              gkey.push_back(*g);
            }
            cp.counts[gkey] += n;
            partial.items += static_cast<std::size_t>(n);
          }
          counts.push_back(std::move(cp));
        }
        ++ok;
      } catch (const Error& e) {
        partial.ok = false;
        partial.error_code = e.code();
        partial.error = e.what();
        result.failed_nodes.push_back(o.node_id);
      }
      result.partials.push_back(std::move(partial));
    }
    if (ok == 0) {
      throw FederationError("federation unavailable: every node failed", "federation_unavailable");
    }
    result.partial = !result.failed_nodes.empty();
    if (result.aggregation == Aggregation::row_union) {
      result.merged = {{"row_count", rows.size()}, {"rows", std::move(rows)}, {"sources", std::move(sources)}};
    } else {
      result.merged = {{"group_by", group_by},
                       {"target", *result.query.target},
                       {"tree", merge_count_trees(counts)}};
    }
  }
  result.digest = fnv1a_hex(result.merged.dump());
  catalog_->record_result(result.text, result.digest);
  return result;
}

json Coordinator::infer(const AnalyticalQuery& query) const {
  auto m = model(query.pattern);
  if (!m) {
    throw FederationError("no trained model for " + std::string(pattern_name(query.pattern)), "no_model");
  }
  const GlobalSchema& schema = catalog_->schema();
  const EncodingLayout layout = encoding_layout(schema, m->features);
  std::vector<std::string> unspecified;
  const auto x = encode_query_features(query, schema, layout, unspecified);
  std::vector<double> dist;
  if (is_linear(m->train_config.kind)) {
    if (m->params.feature_width != layout.width) {
      throw FederationError("stored model does not match the schema layout", "model_mismatch");
    }
    dist = class_probabilities(m->params, x);
  } else {
    dist = vote_distribution(m->trees, x);
  }
  json distribution = json::object();
  std::vector<std::size_t> order(dist.size());
  for (std::size_t c = 0; c < dist.size(); ++c) {
    distribution[m->class_names[c]] = dist[c];
    order[c] = c;
  }
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return dist[a] > dist[b]; });
  json ranking = json::array();
  for (std::size_t c : order) ranking.push_back({{"label", m->class_names[c]}, {"probability", dist[c]}});
  const std::string predicted = is_linear(m->train_config.kind)
                                    ? m->class_names[order.front()]
                                    : federated_tree_vote(*m, x);
  return {{"target", prediction_task(query.pattern).target},
          {"distribution", std::move(distribution)},
          {"ranking", std::move(ranking)},
          {"predicted", predicted},
          {"model_kind", to_string(m->train_config.kind)},
          {"model_rounds", m->rounds()},
          {"unspecified", unspecified}};
}

std::vector<std::pair<std::string, CacheInfo>> Coordinator::build_caches(Pattern pattern,
                                                                         const FederationConfig& config) {
  CacheRequest req;
  req.pattern = pattern;
  req.balance = config.balance;
  req.split_fraction = config.split_fraction;
  req.seed = config.seed;
  std::vector<NodeClient*> targets;
  for (const auto& n : nodes_) targets.push_back(n.get());
  auto outcomes = dispatch<CacheInfo>(
      targets, [&req](NodeClient& n) { return n.build_cache(req); }, config.round_timeout);
  std::vector<std::pair<std::string, CacheInfo>> out;
  for (auto& o : outcomes) {
    if (!o.value) {
      if (o.error_code == "target_unmapped" || o.error_code == "feature_unmapped") continue;
      throw FederationError("cache build failed at " + o.node_id + ": " + o.error, "cache_failed");
    }
    out.emplace_back(o.node_id, std::move(*o.value));
  }
  return out;
}

GlobalModel Coordinator::train(Pattern pattern, const TrainConfig& train_config,
                               std::optional<FederationConfig> overrides) {
  if (!is_prediction(pattern)) throw ValidationError("not a prediction pattern");
  const FederationConfig cfg = overrides.value_or(config_);
  cfg.validate();
  train_config.validate();
  std::unique_lock session(*training_locks_.at(pattern), std::try_to_lock);
  if (!session.owns_lock()) {
    throw BusyError("a training session for " + std::string(pattern_name(pattern)) + " is running");
  }

  const auto caches = build_caches(pattern, cfg);
  if (caches.size() < cfg.min_nodes || caches.empty()) {
    throw FederationError("only " + std::to_string(caches.size()) + " node(s) can train " +
                              std::string(pattern_name(pattern)),
                          "insufficient_nodes");
  }
  const CacheInfo& first = caches.front().second;
  for (const auto& [id, info] : caches) {
    if (info.fingerprint != first.fingerprint || info.feature_width != first.feature_width ||
        info.num_classes != first.num_classes) {
      throw FederationError("node " + id + " built an incompatible cache", "fingerprint_mismatch");
    }
  }

  const PredictionTask& task = prediction_task(pattern);
  GlobalModel model;
  model.pattern = pattern;
  model.features = encoding_layout(catalog_->schema(), task.features).features;
  model.class_names = catalog_->schema().at(task.target).vocabulary;
  model.fingerprint = first.fingerprint;
  model.train_config = train_config;
  model.mode = cfg.mode;
  model.params = ParameterVector::zeros(is_linear(train_config.kind) ? train_config.kind : ModelKind::logistic,
                                        first.num_classes, first.feature_width);

  std::vector<NodeClient*> active;
  for (const auto& [id, info] : caches) active.push_back(&client(id));
  std::vector<std::future<void>> stragglers;

  auto evaluate_round = [&](const std::vector<NodeClient*>& nodes, auto eval) {
    auto outcomes = dispatch<MetricsReport>(nodes, eval, cfg.round_timeout, &stragglers);
    std::vector<MetricsReport> reports;
    for (auto& o : outcomes) {
      if (o.value) reports.push_back(std::move(*o.value));
    }
    if (reports.empty()) throw FederationError("no node could evaluate the model", "evaluation_failed");
    return aggregate_metrics(reports);
  };

  if (!is_linear(train_config.kind)) {
    auto outcomes = dispatch<DecisionTree>(
        active, [&](NodeClient& n) { return n.train_tree(pattern, train_config); }, cfg.round_timeout,
        &stragglers);
    RoundRecord rec;
    rec.round = 1;
    std::vector<NodeClient*> voters;
    for (auto& o : outcomes) {
      if (!o.value) {
        rec.skipped.push_back(o.node_id);
        continue;
      }
      model.trees.push_back(std::move(*o.value));
      model.tree_nodes.push_back(o.node_id);
      rec.participants.push_back(o.node_id);
      voters.push_back(&client(o.node_id));
    }
    for (const auto& id : rec.participants) {
      for (const auto& [cid, info] : caches) {
        if (cid == id) rec.n_train.push_back(info.n_train);
      }
    }
    if (rec.participants.size() < cfg.min_nodes) {
      model.aborted = true;
      model.abort_reason = "too few nodes returned a tree";
    } else {
      const auto& trees = model.trees;
      rec.metrics = evaluate_round(voters, [&](NodeClient& n) { return n.evaluate_trees(pattern, trees); });
      model.history.push_back(std::move(rec));
    }
  } else {
    std::deque<double> recent;
    for (std::size_t r = 1; r <= train_config.rounds; ++r) {
      RoundRequest req;
      req.pattern = pattern;
      req.round = r;
      req.params = model.params;
      req.config = train_config;
      req.config.seed = train_config.seed + r;
      req.fingerprint = model.fingerprint;
      auto outcomes = dispatch<RoundResult>(
          active, [&req](NodeClient& n) { return n.train_round(req); }, cfg.round_timeout, &stragglers);

      RoundRecord rec;
      rec.round = r;
      std::vector<FedAvgEntry> entries;
      std::vector<NodeClient*> participants;
      for (auto& o : outcomes) {
        if (!o.value) {
          rec.skipped.push_back(o.node_id);
          continue;
        }
        rec.participants.push_back(o.node_id);
        rec.n_train.push_back(o.value->n_train);
        participants.push_back(&client(o.node_id));
        entries.push_back({o.node_id, std::move(o.value->params.values), o.value->n_train});
      }
      if (entries.size() < cfg.min_nodes || entries.empty()) {
        model.aborted = true;
        model.abort_reason = "round " + std::to_string(r) + " had " + std::to_string(entries.size()) +
                             " participant(s), fewer than the minimum " + std::to_string(cfg.min_nodes);
        break;
      }
      model.params.values = fedavg(entries, cfg.mode);
      const ParameterVector& global = model.params;
      rec.metrics = evaluate_round(participants, [&](NodeClient& n) { return n.evaluate(pattern, global); });
      model.history.push_back(std::move(rec));

      if (cfg.early_stop) {
        recent.push_back(model.history.back().metrics.accuracy);
        if (recent.size() > 10) recent.pop_front();
        if (recent.size() == 10) {
          const auto [lo, hi] = std::minmax_element(recent.begin(), recent.end());
          if (*hi - *lo < 1e-4) break;
        }
      }
    }
  }
  for (auto& s : stragglers) s.wait();

  std::lock_guard lock(models_mutex_);
  if (!model.aborted || !model.history.empty()) models_[pattern] = model;
  return model;
}

std::vector<NodeHealth> Coordinator::node_health() {
  std::vector<NodeClient*> targets;
  for (const auto& n : nodes_) targets.push_back(n.get());
  auto outcomes = dispatch<NodeMetadata>(
      targets, [](NodeClient& n) { return n.metadata(); }, config_.round_timeout);
  std::vector<NodeHealth> out;
  for (auto& o : outcomes) {
    NodeHealth h;
    h.node_id = o.node_id;
    h.healthy = o.value.has_value();
    h.metadata = std::move(o.value);
    h.error = o.error;
    out.push_back(std::move(h));
  }
  return out;
}

std::optional<GlobalModel> Coordinator::model(Pattern pattern) const {
  std::lock_guard lock(models_mutex_);
  auto it = models_.find(pattern);
  if (it == models_.end()) return std::nullopt;
  return it->second;
}

void Coordinator::set_model(GlobalModel model) {
  std::lock_guard lock(models_mutex_);
  models_[model.pattern] = std::move(model);
}

}  // namespace fedlake
