#include "fedlake/query.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <set>

#include "fedlake/error.hpp"

namespace fedlake {

using nlohmann::json;

namespace {

enum class TokenKind { word, string, number, op, comma, end };

struct Token {
  TokenKind kind = TokenKind::end;
  std::string text;
  double number = 0.0;
  std::size_t line = 1;
  std::size_t column = 1;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : src_(src) {}

  Token next() {
    skip_space();
    Token t;
    t.line = line_;
    t.column = column_;
    if (pos_ >= src_.size()) return t;
    const char c = src_[pos_];
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
      t.kind = TokenKind::word;
      while (pos_ < src_.size() &&
             (std::isalnum(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
        t.text += advance();
      }
      return t;
    }
    if (std::isdigit(static_cast<unsigned char>(c)) ||
        (c == '-' && pos_ + 1 < src_.size() &&
         std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
      return lex_number(t);
    }
    if (c == '\'') return lex_string(t);
    if (c == ',') {
      advance();
      t.kind = TokenKind::comma;
      t.text = ",";
      return t;
    }
    if (c == '=' || c == '<' || c == '>' || c == '!') {
      t.kind = TokenKind::op;
      t.text += advance();
      if (pos_ < src_.size() && src_[pos_] == '=' && t.text != "=") t.text += advance();
      Comparator op;
      if (!parse_comparator(t.text, op)) {
        throw ParseError("syntax_error", "unknown operator '" + t.text + "'", t.line, t.column);
      }
      return t;
    }
    throw ParseError("syntax_error", std::string("unexpected character '") + c + "'", t.line,
                     t.column);
  }

 private:
  char advance() {
    const char c = src_[pos_++];
    if (c == '\n') {
      ++line_;
      column_ = 1;
    } else {
      ++column_;
    }
    return c;
  }

  void skip_space() {
    while (pos_ < src_.size() && std::isspace(static_cast<unsigned char>(src_[pos_]))) advance();
  }

  Token lex_number(Token t) {
    t.kind = TokenKind::number;
    if (src_[pos_] == '-') t.text += advance();
    while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
      t.text += advance();
    }
    if (pos_ < src_.size() && src_[pos_] == '.') {
      t.text += advance();
      if (pos_ >= src_.size() || !std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        throw ParseError("syntax_error", "malformed number '" + t.text + "'", t.line, t.column);
      }
      while (pos_ < src_.size() && std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
        t.text += advance();
      }
    }
    if (pos_ < src_.size() &&
        (std::isalpha(static_cast<unsigned char>(src_[pos_])) || src_[pos_] == '_')) {
      throw ParseError("syntax_error", "malformed number '" + t.text + src_[pos_] + "'", t.line,
                       t.column);
    }
    auto [end, ec] = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
    if (ec != std::errc() || end != t.text.data() + t.text.size()) {
      throw ParseError("syntax_error", "malformed number '" + t.text + "'", t.line, t.column);
    }
    return t;
  }

  Token lex_string(Token t) {
    t.kind = TokenKind::string;
    advance();
    while (true) {
      if (pos_ >= src_.size()) {
        throw ParseError("syntax_error", "unterminated string literal", t.line, t.column);
      }
      const char c = advance();
      if (c == '\'') {
        if (pos_ < src_.size() && src_[pos_] == '\'') {
          t.text += advance();
          continue;
        }
        break;
      }
      t.text += c;
    }
    return t;
  }

  const std::string& src_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
  std::size_t column_ = 1;
};

bool keyword_is(const Token& t, std::string_view kw) {
  if (t.kind != TokenKind::word || t.text.size() != kw.size()) return false;
  for (std::size_t i = 0; i < kw.size(); ++i) {
    if (std::toupper(static_cast<unsigned char>(t.text[i])) != kw[i]) return false;
  }
  return true;
}

std::string describe(const Token& t) {
  switch (t.kind) {
    case TokenKind::end:
      return "end of input";
    case TokenKind::string:
      return "string '" + t.text + "'";
    default:
      return "'" + t.text + "'";
  }
}

class Parser {
 public:
  Parser(const std::string& text, const GlobalSchema& schema) : lexer_(text), schema_(schema) {
    advance();
  }

  AnalyticalQuery parse() {
    AnalyticalQuery q;
    if (accept_keyword("SELECT")) {
      q.pattern = Pattern::retrieve;
    } else if (accept_keyword("TREE")) {
      q.pattern = Pattern::tree_insight;
      q.target = parse_grouping_attribute("tree target");
      expect_keyword("BY");
      q.group_by.push_back(parse_grouping_attribute("group-by attribute"));
      while (cur_.kind == TokenKind::comma) {
        advance();
        q.group_by.push_back(parse_grouping_attribute("group-by attribute"));
      }
      check_grouping(q);
    } else if (keyword_is(cur_, "PREDICT")) {
      advance();
      if (cur_.kind != TokenKind::word) fail("syntax_error", "expected prediction target");
      auto p = prediction_from_keyword(cur_.text);
      if (!p) fail("unknown_pattern", "unknown prediction pattern '" + cur_.text + "'");
      const auto& task = prediction_task(*p);
      if (!schema_.find(task.target)) {
        fail("unknown_attribute", "prediction target attribute '" + task.target +
                                      "' is not in the schema");
      }
      q.pattern = *p;
      q.target = task.target;
      advance();
    } else {
      fail("unknown_pattern", "expected SELECT, TREE or PREDICT, found " + describe(cur_));
    }

    if (accept_keyword("WHERE")) {
      q.filter.push_back(parse_condition());
      while (true) {
        if (accept_keyword("AND")) {
          q.filter.push_back(parse_condition());
        } else if (keyword_is(cur_, "OR")) {
          fail("syntax_error", "OR is not supported; filters are conjunctions");
        } else {
          break;
        }
      }
    }
    if (cur_.kind != TokenKind::end) fail("syntax_error", "unexpected " + describe(cur_));
    return q;
  }

 private:
  void advance() { cur_ = lexer_.next(); }

  [[noreturn]] void fail(const std::string& code, const std::string& message) const {
    throw ParseError(code, message, cur_.line, cur_.column);
  }

  bool accept_keyword(std::string_view kw) {
    if (!keyword_is(cur_, kw)) return false;
    advance();
    return true;
  }

  void expect_keyword(std::string_view kw) {
    if (!accept_keyword(kw)) {
      fail("syntax_error", "expected " + std::string(kw) + ", found " + describe(cur_));
    }
  }

  const AttributeDef& expect_attribute(const char* what) {
    if (cur_.kind != TokenKind::word) {
      fail("syntax_error", std::string("expected ") + what + ", found " + describe(cur_));
    }
    if (keyword_is(cur_, "NOT")) fail("syntax_error", "NOT is not supported");
    const AttributeDef* attr = schema_.find(cur_.text);
    if (!attr) fail("unknown_attribute", "unknown attribute '" + cur_.text + "'");
    return *attr;
  }

  std::string parse_grouping_attribute(const char* what) {
    const AttributeDef& attr = expect_attribute(what);
    if (!attr.categorical()) {
      fail("type_mismatch", std::string(what) + " '" + attr.name + "' must be categorical");
    }
    positions_.push_back({cur_.line, cur_.column});
    advance();
    return attr.name;
  }

  void check_grouping(const AnalyticalQuery& q) {
    std::set<std::string> seen{*q.target};
    for (std::size_t i = 0; i < q.group_by.size(); ++i) {
      if (!seen.insert(q.group_by[i]).second) {
        throw ParseError("syntax_error", "attribute '" + q.group_by[i] + "' repeated in TREE",
                         positions_[i + 1].first, positions_[i + 1].second);
      }
    }
  }

  Predicate parse_condition() {
    const AttributeDef& attr = expect_attribute("attribute");
    advance();
    if (cur_.kind != TokenKind::op) fail("syntax_error", "expected comparator, found " + describe(cur_));
    Predicate p;
    p.attribute = attr.name;
    parse_comparator(cur_.text, p.op);
    advance();
    if (attr.categorical()) {
      if (p.op != Comparator::eq && p.op != Comparator::ne) {
        fail("type_mismatch", "ordering comparator on categorical attribute '" + attr.name + "'");
      }
      if (cur_.kind != TokenKind::string) {
        fail("type_mismatch", "attribute '" + attr.name + "' expects a quoted value, found " +
                                  describe(cur_));
      }
      if (attr.vocabulary_index(cur_.text) == std::string::npos) {
        fail("type_mismatch", "value '" + cur_.text + "' is not in the vocabulary of '" +
                                  attr.name + "'");
      }
      p.value = cur_.text;
    } else {
      if (cur_.kind != TokenKind::number) {
        fail("type_mismatch", "attribute '" + attr.name + "' expects a number, found " +
                                  describe(cur_));
      }
      p.value = cur_.number;
    }
    advance();
    return p;
  }

  Lexer lexer_;
  const GlobalSchema& schema_;
  Token cur_;
  std::vector<std::pair<std::size_t, std::size_t>> positions_;
};

std::string quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'') out += '\'';
    out += c;
  }
  out += '\'';
  return out;
}

}  // namespace

std::vector<std::string> AnalyticalQuery::referenced_attributes() const {
  std::vector<std::string> out;
  auto add = [&](const std::string& a) {
    if (std::find(out.begin(), out.end(), a) == out.end()) out.push_back(a);
  };
  for (const auto& p : filter) add(p.attribute);
  if (target) add(*target);
  for (const auto& g : group_by) add(g);
  return out;
}

std::string_view to_string(Aggregation a) {
  switch (a) {
    case Aggregation::row_union:
      return "ROW_UNION";
    case Aggregation::count_tree_merge:
      return "COUNT_TREE_MERGE";
    case Aggregation::model_inference:
      return "MODEL_INFERENCE";
  }
  return "?";
}

Aggregation aggregation_for(Pattern p) {
  if (p == Pattern::retrieve) return Aggregation::row_union;
  if (p == Pattern::tree_insight) return Aggregation::count_tree_merge;
  return Aggregation::model_inference;
}

AnalyticalQuery parse_query(const std::string& text, const GlobalSchema& schema) {
  return Parser(text, schema).parse();
}

std::string render_query(const AnalyticalQuery& q) {
  std::string out;
  switch (q.pattern) {
    case Pattern::retrieve:
      out = "SELECT";
      break;
    case Pattern::tree_insight: {
      out = "TREE " + q.target.value_or("") + " BY ";
      for (std::size_t i = 0; i < q.group_by.size(); ++i) {
        if (i) out += ", ";
        out += q.group_by[i];
      }
      break;
    }
    default:
      out = "PREDICT " + std::string(prediction_task(q.pattern).keyword);
  }
  for (std::size_t i = 0; i < q.filter.size(); ++i) {
    const auto& p = q.filter[i];
    out += i == 0 ? " WHERE " : " AND ";
    out += p.attribute;
    out += ' ';
    out += to_string(p.op);
    out += ' ';
    if (const auto* s = std::get_if<std::string>(&p.value)) {
      out += quote(*s);
    } else {
      out += format_number(std::get<double>(p.value));
    }
  }
  return out;
}

QueryPlan plan_query(const AnalyticalQuery& query, const CatalogStore& catalog) {
  QueryPlan plan;
  plan.query = query;
  plan.aggregation = aggregation_for(query.pattern);
  const auto& schema = catalog.schema();
  const auto referenced = query.referenced_attributes();

  if (catalog.mappings().empty()) {
    throw FederationError("query unanswerable: no data nodes registered", "unanswerable");
  }
  for (const auto& attr : referenced) {
    bool anywhere = false;
    for (const auto& [_, m] : catalog.mappings()) anywhere = anywhere || m.covers(attr);
    if (!anywhere) {
      throw FederationError("query unanswerable: attribute " + attr +
                                " not available at any node",
                            "unanswerable");
    }
  }

  for (const auto& [node_id, mapping] : catalog.mappings()) {
    const bool covers_all = std::all_of(referenced.begin(), referenced.end(),
                                        [&](const auto& a) { return mapping.covers(a); });
    if (!covers_all) continue;
    LocalSubQuery sq = to_local(query.filter, mapping, schema);
    if (query.pattern == Pattern::retrieve) {
      sq.mode = SubQueryMode::select_rows;
      for (const auto& attr : schema.attributes) {
        if (mapping.covers(attr.name)) sq.columns.push_back(mapping.local_column(attr.name));
      }
    } else {
      sq.mode = SubQueryMode::count_by;
      for (const auto& g : query.group_by) sq.group_columns.push_back(mapping.local_column(g));
      if (query.pattern == Pattern::tree_insight) {
        sq.group_columns.push_back(mapping.local_column(*query.target));
      }
    }
    plan.subqueries.emplace_back(node_id, std::move(sq));
  }
  if (plan.subqueries.empty()) {
    std::string attrs;
    for (const auto& a : referenced) attrs += (attrs.empty() ? "" : ", ") + a;
    throw FederationError("query unanswerable: no node covers all of [" + attrs + "]",
                          "unanswerable");
  }
  return plan;
}

json to_json(const AnalyticalQuery& q) {
  json filter = json::array();
  for (const auto& p : q.filter) {
    filter.push_back({{"attribute", p.attribute}, {"op", to_string(p.op)}, {"value", to_json(p.value)}});
  }
  json out = {{"pattern", pattern_name(q.pattern)}, {"filter", std::move(filter)},
              {"group_by", q.group_by}};
  out["target"] = q.target ? json(*q.target) : json(nullptr);
  return out;
}

}  // namespace fedlake
