#include "fedlake/gateway.hpp"

#include <fstream>
#include <sstream>
#include <thread>

#include <httplib.h>

#include "http_json.hpp"

namespace fedlake {

using nlohmann::json;

std::string_view to_string(Role r) { return r == Role::doctor ? "doctor" : "admin"; }

Role role_from_string(std::string_view s) {
  if (s == "doctor") return Role::doctor;
  if (s == "admin") return Role::admin;
  throw ValidationError("unknown role: " + std::string(s), "unknown_role");
}

TokenTable TokenTable::from_json(const json& j) {
  if (!j.is_object() || !j.contains("tokens") || !j.at("tokens").is_object()) {
    throw ValidationError("token file needs a \"tokens\" object");
  }
  std::map<std::string, Role> tokens;
  for (const auto& [token, role] : j.at("tokens").items()) {
    if (token.empty()) throw ValidationError("empty token in token file");
    tokens.emplace(token, role_from_string(role.get<std::string>()));
  }
  return TokenTable(std::move(tokens));
}

TokenTable TokenTable::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot read token file: " + path, "io_error");
  try {
    return from_json(json::parse(in));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("token file: ") + e.what(), "parse_error");
  }
}

std::optional<Role> TokenTable::role_for(const std::string& token) const {
  auto it = tokens_.find(token);
  if (it == tokens_.end()) return std::nullopt;
  return it->second;
}

bool permitted(Role role, const std::string& method, const std::string& path) {
  if (role == Role::admin) return true;
  if (method == "GET" && (path == "/schema" || path == "/patterns")) return true;
  if (method == "POST" && path == "/query") return true;
  return method == "GET" && path.rfind("/models/", 0) == 0;
}

const json& gateway_shapes() {
  static const json shapes = json::parse(R"json(
{
  "error": {
    "type": "object", "required": ["error"], "additionalProperties": false,
    "properties": {"error": {
      "type": "object", "required": ["code", "message"],
      "properties": {"code": {"type": "string"}, "message": {"type": "string"},
                     "line": {"type": "integer", "minimum": 1}, "column": {"type": "integer", "minimum": 1}}}}
  },
  "GET /health": {
    "type": "object", "required": ["status"],
    "properties": {"status": {"enum": ["ok"]}}
  },
  "GET /schema": {
    "type": "object", "required": ["version", "attributes"], "additionalProperties": false,
    "properties": {
      "version": {"type": "integer"},
      "attributes": {"type": "array", "minItems": 1, "items": {
        "type": "object", "required": ["name", "kind"], "additionalProperties": false,
        "properties": {
          "name": {"type": "string"},
          "kind": {"enum": ["categorical", "numeric-integer", "numeric-real"]},
          "vocabulary": {"type": "array", "minItems": 1, "items": {"type": "string"}},
          "unit": {"type": "string"},
          "range": {"type": "array", "minItems": 2, "items": {"type": "number"}}}}}}
  },
  "GET /patterns": {
    "type": "object", "required": ["patterns"],
    "properties": {"patterns": {"type": "array", "minItems": 6, "items": {
      "type": "object", "required": ["name", "aggregation", "keyword", "target", "features", "example"],
      "properties": {
        "name": {"type": "string"},
        "aggregation": {"enum": ["ROW_UNION", "COUNT_TREE_MERGE", "MODEL_INFERENCE"]},
        "keyword": {"type": "string"},
        "target": {"type": ["string", "null"]},
        "features": {"type": "array", "items": {"type": "string"}},
        "example": {"type": "string"}}}}}
  },
  "POST /query": {
    "type": "object",
    "required": ["query", "text", "aggregation", "result", "partial", "failed_nodes", "provenance", "digest"],
    "properties": {
      "query": {"type": "object", "required": ["pattern", "filter"]},
      "text": {"type": "string"},
      "aggregation": {"enum": ["ROW_UNION", "COUNT_TREE_MERGE", "MODEL_INFERENCE"]},
      "result": {"type": "object"},
      "partial": {"type": "boolean"},
      "failed_nodes": {"type": "array", "items": {"type": "string"}},
      "provenance": {"type": "array", "items": {
        "type": "object", "required": ["node_id", "ok", "elapsed_ms", "items"],
        "properties": {"node_id": {"type": "string"}, "ok": {"type": "boolean"},
                       "elapsed_ms": {"type": "number", "minimum": 0}, "items": {"type": "integer", "minimum": 0},
                       "error": {"type": "object", "required": ["code", "message"]}}}},
      "digest": {"type": "string"}}
  },
  "POST /train": {
    "type": "object",
    "required": ["pattern", "model_kind", "rounds", "mode", "class_names", "feature_width", "aborted",
                 "abort_reason", "digest", "final"],
    "properties": {
      "pattern": {"type": "string"},
      "model_kind": {"enum": ["logistic", "linear_svm_hinge", "decision_tree"]},
      "rounds": {"type": "integer", "minimum": 0},
      "mode": {"enum": ["unweighted", "sample_weighted"]},
      "class_names": {"type": "array", "minItems": 2, "items": {"type": "string"}},
      "feature_width": {"type": "integer", "minimum": 0},
      "aborted": {"type": "boolean"},
      "abort_reason": {"type": "string"},
      "digest": {"type": "string"},
      "final": {"type": ["object", "null"]}}
  },
  "GET /models/{pattern}/metrics": {
    "type": "object", "required": ["pattern", "rounds", "model_kind", "latest", "history"],
    "properties": {
      "pattern": {"type": "string"},
      "rounds": {"type": "integer", "minimum": 0},
      "model_kind": {"type": "string"},
      "latest": {"type": ["object", "null"]},
      "history": {"type": "array", "items": {
        "type": "object",
        "required": ["round", "participants", "skipped", "accuracy", "precision", "recall", "f1", "auc_roc", "n_test"],
        "properties": {
          "round": {"type": "integer", "minimum": 1},
          "participants": {"type": "array", "items": {"type": "string"}},
          "skipped": {"type": "array", "items": {"type": "string"}},
          "accuracy": {"type": "number", "minimum": 0, "maximum": 1},
          "precision": {"type": "number", "minimum": 0, "maximum": 1},
          "recall": {"type": "number", "minimum": 0, "maximum": 1},
          "f1": {"type": "number", "minimum": 0, "maximum": 1},
          "auc_roc": {"type": "number", "minimum": 0, "maximum": 1},
          "n_test": {"type": "integer", "minimum": 1}}}}}
  },
  "GET /nodes": {
    "type": "object", "required": ["nodes"],
    "properties": {"nodes": {"type": "array", "items": {
      "type": "object", "required": ["node_id", "healthy", "metadata"],
      "properties": {"node_id": {"type": "string"}, "healthy": {"type": "boolean"},
                     "metadata": {"type": ["object", "null"]}, "error": {"type": "string"}}}}}
  },
  "POST /nodes/cache": {
    "type": "object", "required": ["pattern", "caches"],
    "properties": {
      "pattern": {"type": "string"},
      "caches": {"type": "array", "items": {
        "type": "object",
        "required": ["node_id", "fingerprint", "n_train", "n_test", "n_synthetic", "feature_width", "num_classes"],
        "properties": {"node_id": {"type": "string"}, "fingerprint": {"type": "string"},
                       "n_train": {"type": "integer", "minimum": 0}, "n_test": {"type": "integer", "minimum": 0},
                       "n_synthetic": {"type": "integer", "minimum": 0},
                       "feature_width": {"type": "integer", "minimum": 1},
                       "num_classes": {"type": "integer", "minimum": 2}}}}}
  }
}
)json");
  return shapes;
}

namespace {

bool has_type(const json& v, const std::string& t) {
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "number") return v.is_number();
  if (t == "integer") return v.is_number_integer() || (v.is_number_float() && v.get<double>() == std::floor(v.get<double>()));
  if (t == "boolean") return v.is_boolean();
  if (t == "null") return v.is_null();
  return false;
}

void check(const json& v, const json& s, const std::string& path, std::vector<std::string>& out) {
  if (auto it = s.find("type"); it != s.end()) {
    bool ok = false;
    if (it->is_array()) {
      for (const auto& t : *it) ok = ok || has_type(v, t.get<std::string>());
    } else {
      ok = has_type(v, it->get<std::string>());
    }
    if (!ok) {
      out.push_back(path + ": expected type " + it->dump());
      return;
    }
  }
  if (auto it = s.find("enum"); it != s.end()) {
    if (std::find(it->begin(), it->end(), v) == it->end()) out.push_back(path + ": value not in " + it->dump());
  }
  if (v.is_number()) {
    if (auto it = s.find("minimum"); it != s.end() && v.get<double>() < it->get<double>()) {
      out.push_back(path + ": below minimum");
    }
    if (auto it = s.find("maximum"); it != s.end() && v.get<double>() > it->get<double>()) {
      out.push_back(path + ": above maximum");
    }
  }
  if (v.is_array()) {
    if (auto it = s.find("minItems"); it != s.end() && v.size() < it->get<std::size_t>()) {
      out.push_back(path + ": fewer than " + it->dump() + " items");
    }
    if (auto it = s.find("items"); it != s.end()) {
      for (std::size_t i = 0; i < v.size(); ++i) check(v[i], *it, path + "[" + std::to_string(i) + "]", out);
    }
  }
  if (v.is_object()) {
    for (const auto& r : s.value("required", json::array())) {
      if (!v.contains(r.get<std::string>())) out.push_back(path + ": missing " + r.get<std::string>());
    }
    const json props = s.value("properties", json::object());
    for (const auto& [key, child] : v.items()) {
      if (auto p = props.find(key); p != props.end()) {
        check(child, *p, path + "." + key, out);
      } else if (s.value("additionalProperties", true) == false) {
        out.push_back(path + ": unexpected property " + key);
      }
    }
  }
}

}  // namespace

std::vector<std::string> validate_shape(const json& value, const json& schema, const std::string& path) {
  std::vector<std::string> out;
  check(value, schema, path, out);
  return out;
}

json patterns_json() {
  json patterns = json::array();
  for (Pattern p : kAllPatterns) {
    json e = {{"name", pattern_name(p)}, {"aggregation", to_string(aggregation_for(p))}};
    if (p == Pattern::retrieve) {
      e["keyword"] = "SELECT";
      e["target"] = nullptr;
      e["features"] = json::array();
      e["example"] = "SELECT WHERE cancer_type = 'melanoma' AND age >= 40";
    } else if (p == Pattern::tree_insight) {
      e["keyword"] = "TREE";
      e["target"] = nullptr;
      e["features"] = json::array();
      e["example"] = "TREE treatment BY cancer_type, tnm_stage WHERE sex = 'female'";
    } else {
      const PredictionTask& t = prediction_task(p);
      e["keyword"] = t.keyword;
      e["target"] = t.target;
      e["features"] = t.features;
      std::string example = "PREDICT " + std::string(t.keyword) + " WHERE ";
      for (std::size_t i = 0; i < t.features.size(); ++i) {
        if (i) example += " AND ";
        example += t.features[i] + " = ...";
      }
      e["example"] = example;
    }
    patterns.push_back(std::move(e));
  }
  return {{"patterns", std::move(patterns)}};
}

json model_metrics_json(const GlobalModel& model) {
  json history = json::array();
  for (const auto& r : model.history) {
    history.push_back({{"round", r.round},
                       {"participants", r.participants},
                       {"skipped", r.skipped},
                       {"accuracy", r.metrics.accuracy},
                       {"precision", r.metrics.precision},
                       {"recall", r.metrics.recall},
                       {"f1", r.metrics.f1},
                       {"auc_roc", r.metrics.auc_roc},
                       {"n_test", r.metrics.n_test}});
  }
  json latest = nullptr;
  if (!model.history.empty()) {
    const auto& m = model.history.back().metrics;
    latest = {{"accuracy", m.accuracy}, {"precision", m.precision}, {"recall", m.recall},
              {"f1", m.f1},             {"auc_roc", m.auc_roc},     {"n_test", m.n_test},
              {"pooled", to_json(m.pooled)}};
  }
  return {{"pattern", pattern_name(model.pattern)},
          {"rounds", model.rounds()},
          {"model_kind", to_string(model.train_config.kind)},
          {"latest", std::move(latest)},
          {"history", std::move(history)}};
}

struct Gateway::Impl {
  std::shared_ptr<Coordinator> coordinator;
  TokenTable tokens;
  httplib::Server server;
  std::thread thread;
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

int gateway_status(const std::exception& e) {
  if (const auto* fe = dynamic_cast<const Error*>(&e)) {
    if (fe->code() == "no_model") return 404;
    if (fe->code() == "unanswerable") return 422;
  }
  return http::status_for(e);
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, fn(req));
    } catch (const std::exception& e) {
      reply(res, gateway_status(e), http::error_body(e));
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    json j = json::parse(req.body);
    if (!j.is_object()) throw ValidationError("request body must be a JSON object", "bad_request");
    return j;
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what(), "bad_request");
  }
}

}  // namespace

Gateway::Gateway(std::shared_ptr<Coordinator> coordinator, TokenTable tokens)
    : impl_(std::make_unique<Impl>()) {
  impl_->coordinator = std::move(coordinator);
  impl_->tokens = std::move(tokens);
  auto& svr = impl_->server;
  Coordinator& coord = *impl_->coordinator;
  const TokenTable& table = impl_->tokens;

  svr.set_pre_routing_handler([&table](const httplib::Request& req, httplib::Response& res) {
    if (req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
    const std::string auth = req.get_header_value("Authorization");
    const std::string prefix = "Bearer ";
    std::optional<Role> role;
    if (auth.rfind(prefix, 0) == 0) role = table.role_for(auth.substr(prefix.size()));
    if (!role) {
      reply(res, 401, http::error_body("unauthorized", "missing or unknown bearer token"));
      return httplib::Server::HandlerResponse::Handled;
    }
    if (!permitted(*role, req.method, req.path)) {
      reply(res, 403, http::error_body("forbidden", "role " + std::string(to_string(*role)) +
                                                        " may not call " + req.method + " " + req.path));
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });
  svr.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
    if (!res.body.empty()) return;
    const std::string code = res.status == 404 ? "not_found" : "http_" + std::to_string(res.status);
    res.set_content(http::error_body(code, req.method + " " + req.path).dump(), "application/json");
  });

  svr.Get("/health", guarded([](const httplib::Request&) { return json{{"status", "ok"}}; }));
  svr.Get("/schema", guarded([&coord](const httplib::Request&) { return to_json(coord.catalog().schema()); }));
  svr.Get("/patterns", guarded([](const httplib::Request&) { return patterns_json(); }));
  svr.Post("/query", guarded([&coord](const httplib::Request& req) {
             const json body = parse_body(req);
             if (!body.contains("text") || !body.at("text").is_string()) {
               throw ValidationError("body needs a \"text\" string", "bad_request");
             }
             return to_json(coord.run_query(body.at("text").get<std::string>()));
           }));
  svr.Post("/train", guarded([&coord](const httplib::Request& req) {
             const json body = parse_body(req);
             if (!body.contains("pattern")) throw ValidationError("body needs \"pattern\"", "bad_request");
             const Pattern p = prediction_pattern_from_text(body.at("pattern").get<std::string>());
             const FederationConfig fc =
                 federation_config_from_json(body.value("federation", json::object()), coord.config());
             TrainConfig base;
             base.rounds = fc.rounds;
             TrainConfig tc = train_config_from_json(body.value("train_config", json::object()), base);
             if (body.contains("rounds")) tc.rounds = body.at("rounds").get<std::size_t>();
             return summary_json(coord.train(p, tc, fc));
           }));
  svr.Get(R"(/models/([A-Za-z_]+)/metrics)", guarded([&coord](const httplib::Request& req) {
            const Pattern p = prediction_pattern_from_text(req.matches[1]);
            auto m = coord.model(p);
            if (!m) throw FederationError("no trained model for " + std::string(pattern_name(p)), "no_model");
            return model_metrics_json(*m);
          }));
  svr.Get("/nodes", guarded([&coord](const httplib::Request&) {
            json nodes = json::array();
            for (const auto& h : coord.node_health()) nodes.push_back(to_json(h));
            return json{{"nodes", std::move(nodes)}};
          }));
  svr.Post("/nodes/cache", guarded([&coord](const httplib::Request& req) {
             const json body = parse_body(req);
             if (!body.contains("pattern")) throw ValidationError("body needs \"pattern\"", "bad_request");
             const Pattern p = prediction_pattern_from_text(body.at("pattern").get<std::string>());
             const FederationConfig fc =
                 federation_config_from_json(body.value("federation", json::object()), coord.config());
             json caches = json::array();
             for (const auto& [id, info] : coord.build_caches(p, fc)) {
               json e = to_json(info);
               e["node_id"] = id;
               caches.push_back(std::move(e));
             }
             return json{{"pattern", pattern_name(p)}, {"caches", std::move(caches)}};
           }));
}

Gateway::~Gateway() { stop(); }

int Gateway::start(const std::string& host, int port) {
  auto& svr = impl_->server;
  const int bound = port == 0 ? svr.bind_to_any_port(host) : (svr.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ValidationError("cannot bind " + host + ":" + std::to_string(port), "port_busy");
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return bound;
}

void Gateway::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw ValidationError("cannot bind " + host + ":" + std::to_string(port), "port_busy");
  }
}

void Gateway::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace fedlake
