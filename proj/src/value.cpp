#include "fedlake/value.hpp"

#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>

#include "fedlake/error.hpp"

namespace fedlake {

std::string_view to_string(AttributeKind kind) {
  switch (kind) {
    case AttributeKind::categorical:
      return "categorical";
    case AttributeKind::integer:
      return "numeric-integer";
    case AttributeKind::real:
      return "numeric-real";
  }
  return "?";
}

AttributeKind attribute_kind_from_string(std::string_view text) {
  if (text == "categorical") return AttributeKind::categorical;
  if (text == "numeric-integer") return AttributeKind::integer;
  if (text == "numeric-real") return AttributeKind::real;
  throw ValidationError("unknown attribute kind: " + std::string(text));
}

std::string_view to_string(Comparator op) {
  switch (op) {
    case Comparator::eq:
      return "=";
    case Comparator::ne:
      return "!=";
    case Comparator::lt:
      return "<";
    case Comparator::le:
      return "<=";
    case Comparator::gt:
      return ">";
    case Comparator::ge:
      return ">=";
  }
  return "?";
}

bool parse_comparator(std::string_view text, Comparator& out) {
  static constexpr std::pair<std::string_view, Comparator> kTable[] = {
      {"=", Comparator::eq},  {"!=", Comparator::ne}, {"<", Comparator::lt},
      {"<=", Comparator::le}, {">", Comparator::gt},  {">=", Comparator::ge}};
  for (const auto& [token, op] : kTable) {
    if (token == text) {
      out = op;
      return true;
    }
  }
  return false;
}

bool evaluate(Comparator op, const Value& cell, const Value& literal) {
  if (cell.index() != literal.index()) return false;
  if (const auto* a = std::get_if<double>(&cell)) {
    const double b = std::get<double>(literal);
    switch (op) {
      case Comparator::eq:
        return *a == b;
      case Comparator::ne:
        return *a != b;
      case Comparator::lt:
        return *a < b;
      case Comparator::le:
        return *a <= b;
      case Comparator::gt:
        return *a > b;
      case Comparator::ge:
        return *a >= b;
    }
    return false;
  }
  const auto& a = std::get<std::string>(cell);
  const auto& b = std::get<std::string>(literal);
  switch (op) {
    case Comparator::eq:
      return a == b;
    case Comparator::ne:
      return a != b;
    default:
      return false;
  }
}

std::string format_number(double value) {
  char buf[512];
  auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), value, std::chars_format::fixed);
  if (ec != std::errc()) throw ValidationError("number not representable");
  return std::string(buf, end);
}

nlohmann::json to_json(const Value& v) {
  if (const auto* d = std::get_if<double>(&v)) {
    if (std::isfinite(*d) && std::floor(*d) == *d && std::fabs(*d) < 9.0e15) {
      return static_cast<std::int64_t>(*d);
    }
    return *d;
  }
  return std::get<std::string>(v);
}

Value value_from_json(const nlohmann::json& j) {
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) return j.get<std::string>();
  throw ValidationError("value must be a number or a string, got " + j.dump());
}

nlohmann::json to_json(const Record& r) {
  nlohmann::json out = nlohmann::json::object();
  for (const auto& [k, v] : r) out[k] = to_json(v);
  return out;
}

Record record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("record must be an object");
  Record r;
  for (const auto& [k, v] : j.items()) r.emplace(k, value_from_json(v));
  return r;
}

std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fedlake
