#pragma once

#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "json.hpp"

namespace fedlake {

/// A cell or literal: numbers are held as double, categoricals as text.
using Value = std::variant<double, std::string>;

inline bool is_numeric(const Value& v) { return std::holds_alternative<double>(v); }

enum class AttributeKind { categorical, integer, real };

std::string_view to_string(AttributeKind kind);
AttributeKind attribute_kind_from_string(std::string_view text);
inline bool is_numeric(AttributeKind kind) { return kind != AttributeKind::categorical; }

enum class Comparator { eq, ne, lt, le, gt, ge };

std::string_view to_string(Comparator op);
/// Returns false when `text` is not a comparator token.
bool parse_comparator(std::string_view text, Comparator& out);

/// Numeric comparison when both sides are numbers, byte equality for text.
/// Mixed kinds never match.
bool evaluate(Comparator op, const Value& cell, const Value& literal);

/// Shortest round-tripping fixed-point rendering (no exponent).
std::string format_number(double value);

/// Global-vocabulary predicate.
struct Predicate {
  std::string attribute;
  Comparator op = Comparator::eq;
  Value value;

  bool operator==(const Predicate&) const = default;
};

/// A row keyed by column or attribute name.
using Record = std::map<std::string, Value>;

nlohmann::json to_json(const Value& v);
Value value_from_json(const nlohmann::json& j);
nlohmann::json to_json(const Record& r);
Record record_from_json(const nlohmann::json& j);

/// FNV-1a 64-bit, hex encoded. Used for digests and fingerprints.
std::string fnv1a_hex(std::string_view bytes);

}  // namespace fedlake
