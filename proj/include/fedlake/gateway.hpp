#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fedlake/federation.hpp"

namespace fedlake {

enum class Role { doctor, admin };

std::string_view to_string(Role r);
Role role_from_string(std::string_view s);

/// Static bearer tokens, loaded from {"tokens": {"<token>": "doctor" | "admin"}}.
class TokenTable {
 public:
  TokenTable() = default;
  explicit TokenTable(std::map<std::string, Role> tokens) : tokens_(std::move(tokens)) {}

  static TokenTable from_json(const nlohmann::json& j);
  static TokenTable load(const std::string& path);

  std::optional<Role> role_for(const std::string& token) const;

 private:
  std::map<std::string, Role> tokens_;
};

/// The role gate. Doctors may read the schema and pattern list, submit
/// queries and read model metrics; admins may call everything.
bool permitted(Role role, const std::string& method, const std::string& path);

/// JSON Schema (subset: type, properties, required, items, enum,
/// additionalProperties, minimum, maximum, minItems) of each gateway response,
/// keyed by "METHOD /path". Error responses share the "error" entry.
const nlohmann::json& gateway_shapes();

/// Returns one message per violation; empty when `value` conforms.
std::vector<std::string> validate_shape(const nlohmann::json& value, const nlohmann::json& schema,
                                        const std::string& path = "$");

/// HTTP front of the coordinator.
///
///   GET  /health                   public
///   GET  /schema                   doctor, admin
///   GET  /patterns                 doctor, admin
///   POST /query {"text"}           doctor, admin
///   GET  /models/{pattern}/metrics doctor, admin
///   POST /train                    admin
///   POST /nodes/cache              admin
///   GET  /nodes                    admin
class Gateway {
 public:
  Gateway(std::shared_ptr<Coordinator> coordinator, TokenTable tokens);
  ~Gateway();
  Gateway(const Gateway&) = delete;
  Gateway& operator=(const Gateway&) = delete;

  /// Port 0 picks a free port; returns the bound port.
  int start(const std::string& host, int port);
  void run(const std::string& host, int port);
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Body of GET /patterns.
nlohmann::json patterns_json();
/// Body of GET /models/{pattern}/metrics.
nlohmann::json model_metrics_json(const GlobalModel& model);

}  // namespace fedlake
