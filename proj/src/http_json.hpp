#pragma once

// Shared by the node service, node client and gateway: mapping between
// library exceptions and JSON error responses.

#include <exception>
#include <string>

#include <json.hpp>

#include "fedlake/error.hpp"

namespace fedlake::http {

inline nlohmann::json error_body(const std::string& code, const std::string& message) {
  return {{"error", {{"code", code}, {"message", message}}}};
}

inline nlohmann::json error_body(const std::exception& e) {
  if (const auto* pe = dynamic_cast<const ParseError*>(&e)) {
    nlohmann::json body = error_body(pe->code(), pe->what());
    body["error"]["line"] = pe->line();
    body["error"]["column"] = pe->column();
    return body;
  }
  if (const auto* fe = dynamic_cast<const Error*>(&e)) return error_body(fe->code(), fe->what());
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return error_body("bad_request", e.what());
  return error_body("internal_error", e.what());
}

inline int status_for(const std::exception& e) {
  if (dynamic_cast<const BusyError*>(&e)) return 409;
  if (dynamic_cast<const ParseError*>(&e) || dynamic_cast<const ValidationError*>(&e) ||
      dynamic_cast<const UncoveredAttributeError*>(&e) ||
      dynamic_cast<const NumericalError*>(&e) ||
      dynamic_cast<const nlohmann::json::exception*>(&e)) {
    return 400;
  }
  if (dynamic_cast<const FederationError*>(&e)) return 503;
  return 500;
}

/// Re-raises a remote error response as the matching local exception.
[[noreturn]] inline void rethrow_remote(int status, const std::string& body, const std::string& where) {
  std::string code = "remote_error";
  std::string message = body;
  try {
    const auto j = nlohmann::json::parse(body);
    code = j.at("error").at("code").get<std::string>();
    message = j.at("error").at("message").get<std::string>();
  } catch (const std::exception&) {
  }
  message = where + ": " + message;
  if (status == 409) throw BusyError(message);
  if (status == 400) throw ValidationError(message, code);
  if (status == 401 || status == 403) throw FederationError(message, "node_unauthorized");
  throw FederationError(message, code);
}

}  // namespace fedlake::http
