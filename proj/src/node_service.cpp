#include "fedlake/node_service.hpp"

#include <thread>

#include <httplib.h>

#include "http_json.hpp"

namespace fedlake {

using nlohmann::json;

struct NodeService::Impl {
  std::shared_ptr<DataNode> node;
  std::string token;
  httplib::Server server;
  std::thread thread;
};

namespace {

void reply(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      reply(res, 200, fn(req));
    } catch (const std::exception& e) {
      reply(res, http::status_for(e), http::error_body(e));
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ValidationError(std::string("malformed JSON body: ") + e.what(), "bad_request");
  }
}

}  // namespace

NodeService::NodeService(std::shared_ptr<DataNode> node, std::string token)
    : impl_(std::make_unique<Impl>()) {
  if (token.empty()) throw ValidationError("node token must be non-empty");
  impl_->node = std::move(node);
  impl_->token = std::move(token);
  auto& svr = impl_->server;
  DataNode& n = *impl_->node;
  const std::string expected = impl_->token;

  svr.set_pre_routing_handler([expected](const httplib::Request& req, httplib::Response& res) {
    if (req.get_header_value("X-Fed-Token") != expected) {
      reply(res, 401, http::error_body("unauthorized", "missing or invalid X-Fed-Token"));
      return httplib::Server::HandlerResponse::Handled;
    }
    return httplib::Server::HandlerResponse::Unhandled;
  });

  svr.Get("/health", guarded([&n](const httplib::Request&) {
            return json{{"status", "ok"}, {"node_id", n.node_id()}};
          }));
  svr.Get("/metadata", guarded([&n](const httplib::Request&) { return to_json(n.metadata()); }));
  svr.Post("/subquery", guarded([&n](const httplib::Request& req) {
             return to_json(n.execute_subquery(subquery_from_json(parse_body(req))));
           }));
  svr.Post("/train/cache", guarded([&n](const httplib::Request& req) {
             return to_json(n.build_training_cache(cache_request_from_json(parse_body(req))));
           }));
  svr.Post("/train/round", guarded([&n](const httplib::Request& req) {
             return to_json(n.local_train_round(round_request_from_json(parse_body(req))));
           }));
  svr.Post("/train/evaluate", guarded([&n](const httplib::Request& req) {
             const json body = parse_body(req);
             const Pattern p = prediction_pattern_from_text(body.at("pattern").get<std::string>());
             if (body.contains("trees")) {
               std::vector<DecisionTree> trees;
               for (const auto& t : body.at("trees")) trees.push_back(decision_tree_from_json(t));
               return to_json(n.local_evaluate_trees(p, trees));
             }
             return to_json(n.local_evaluate(p, parameter_vector_from_json(body.at("model"))));
           }));
  svr.Post("/train/tree", guarded([&n](const httplib::Request& req) {
             const json body = parse_body(req);
             const Pattern p = prediction_pattern_from_text(body.at("pattern").get<std::string>());
             return to_json(n.train_tree(p, train_config_from_json(body.value("config", json::object()))));
           }));
  svr.Post("/train/select", guarded([&n](const httplib::Request& req) {
             const json body = parse_body(req);
             const Pattern p = prediction_pattern_from_text(body.at("pattern").get<std::string>());
             std::vector<TrainConfig> grid;
             for (const auto& c : body.at("grid")) grid.push_back(train_config_from_json(c));
             return to_json(n.select_model(p, grid, body.value("folds", std::size_t{5}),
                                           body.value("seed", std::uint64_t{0})));
           }));
  svr.Get(R"(/metrics/([A-Za-z_]+))", [&n](const httplib::Request& req, httplib::Response& res) {
    try {
      const Pattern p = prediction_pattern_from_text(req.matches[1]);
      auto m = n.last_metrics(p);
      if (!m) {
        reply(res, 404, http::error_body("no_metrics", "no evaluation recorded for this pattern"));
        return;
      }
      reply(res, 200, to_json(*m));
    } catch (const std::exception& e) {
      reply(res, http::status_for(e), http::error_body(e));
    }
  });
  svr.Get(R"(/modellog/([A-Za-z_]+))", guarded([&n](const httplib::Request& req) {
            const Pattern p = prediction_pattern_from_text(req.matches[1]);
            json entries = json::array();
            for (const auto& e : n.model_log(p)) entries.push_back(to_json(e));
            return json{{"pattern", pattern_name(p)}, {"entries", std::move(entries)}};
          }));
}

NodeService::~NodeService() { stop(); }

int NodeService::start(const std::string& host, int port) {
  auto& svr = impl_->server;
  const int bound = port == 0 ? svr.bind_to_any_port(host) : (svr.bind_to_port(host, port) ? port : -1);
  if (bound < 0) throw ValidationError("cannot bind " + host + ":" + std::to_string(port), "port_busy");
  impl_->thread = std::thread([&svr] { svr.listen_after_bind(); });
  svr.wait_until_ready();
  return bound;
}

void NodeService::run(const std::string& host, int port) {
  if (!impl_->server.listen(host, port)) {
    throw ValidationError("cannot bind " + host + ":" + std::to_string(port), "port_busy");
  }
}

void NodeService::stop() {
  if (!impl_) return;
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace fedlake
