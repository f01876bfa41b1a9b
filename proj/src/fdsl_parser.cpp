#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

#include "eafd/core/text.hpp"
#include "eafd/fdsl/parser.hpp"

namespace eafd::fdsl {

std::string_view to_string(DiagCode code) {
  switch (code) {
    case DiagCode::Lexical: return "lexical";
    case DiagCode::Syntax: return "syntax";
    case DiagCode::Type: return "type";
    case DiagCode::UnknownField: return "unknown-field";
    case DiagCode::UnknownAggregator: return "unknown-aggregator";
  }
  return "?";
}

std::string Diagnostic::render() const {
  std::string out = "error[";
  out += to_string(code);
  out += "]";
  if (offset != kNoOffset) out += " at byte " + std::to_string(offset);
  out += ": " + message;
  if (!expected.empty()) {
    out += " (expected ";
    for (std::size_t i = 0; i < expected.size(); ++i) {
      if (i) out += i + 1 == expected.size() ? " or " : ", ";
      out += expected[i];
    }
    out += ")";
  }
  return out;
}

namespace {

[[noreturn]] void fail(DiagCode code, std::size_t offset, std::string message,
                       std::vector<std::string> expected = {}) {
  throw DslError(Diagnostic{code, offset, std::move(expected), std::move(message)});
}

// ---------------------------------------------------------------- lexer

enum class Tok {
  Ident, Number, String, LParen, RParen, LBrace, RBrace, Comma, Assign,
  Plus, Minus, Star, Slash, EqEq, NotEq, Lt, Le, Gt, Ge, End,
};

struct Token {
  Tok kind = Tok::End;
  std::string text;
  std::size_t offset = 0;
  double number = 0.0;
};

std::string describe(const Token& t) {
  switch (t.kind) {
    case Tok::End: return "end of input";
    case Tok::String: return "string \"" + t.text + "\"";
    default: return "'" + t.text + "'";
  }
}

bool ident_start(char c) { return std::isalpha(static_cast<unsigned char>(c)) || c == '_'; }
bool ident_char(char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; }
bool digit(char c) { return c >= '0' && c <= '9'; }

std::vector<Token> lex(std::string_view src) {
  std::vector<Token> out;
  std::size_t i = 0;
  while (i < src.size()) {
    const char c = src[i];
    if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
      ++i;
      continue;
    }
    Token t;
    t.offset = i;
    if (ident_start(c)) {
      std::size_t j = i;
      while (j < src.size() && ident_char(src[j])) ++j;
      t.kind = Tok::Ident;
      t.text = std::string(src.substr(i, j - i));
      i = j;
    } else if (digit(c) || (c == '.' && i + 1 < src.size() && digit(src[i + 1]))) {
      std::size_t j = i;
      while (j < src.size() && digit(src[j])) ++j;
      if (j < src.size() && src[j] == '.') {
        ++j;
        while (j < src.size() && digit(src[j])) ++j;
      }
      if (j < src.size() && (src[j] == 'e' || src[j] == 'E')) {
        std::size_t k = j + 1;
        if (k < src.size() && (src[k] == '+' || src[k] == '-')) ++k;
        if (k >= src.size() || !digit(src[k])) fail(DiagCode::Lexical, j, "malformed number exponent");
        while (k < src.size() && digit(src[k])) ++k;
        j = k;
      }
      if (j < src.size() && ident_char(src[j])) {
        fail(DiagCode::Lexical, j, "unexpected character '" + std::string(1, src[j]) + "' after number");
      }
      t.kind = Tok::Number;
      t.text = std::string(src.substr(i, j - i));
      auto res = std::from_chars(t.text.data(), t.text.data() + t.text.size(), t.number);
      if (res.ec != std::errc() || !std::isfinite(t.number)) {
        fail(DiagCode::Lexical, i, "number out of range: " + t.text);
      }
      i = j;
    } else if (c == '"') {
      std::size_t j = i + 1;
      std::string value;
      bool closed = false;
      while (j < src.size()) {
        const char d = src[j];
        if (d == '"') {
          closed = true;
          ++j;
          break;
        }
        if (d == '\\') {
          if (j + 1 >= src.size()) break;
          const char e = src[j + 1];
          switch (e) {
            case '"': value.push_back('"'); break;
            case '\\': value.push_back('\\'); break;
            case 'n': value.push_back('\n'); break;
            case 't': value.push_back('\t'); break;
            default: fail(DiagCode::Lexical, j, "unknown escape '\\" + std::string(1, e) + "'");
          }
          j += 2;
          continue;
        }
        value.push_back(d);
        ++j;
      }
      if (!closed) fail(DiagCode::Lexical, i, "unterminated string literal");
      t.kind = Tok::String;
      t.text = std::move(value);
      i = j;
    } else {
      auto two = [&](char next) { return i + 1 < src.size() && src[i + 1] == next; };
      std::size_t len = 1;
      switch (c) {
        case '(': t.kind = Tok::LParen; break;
        case ')': t.kind = Tok::RParen; break;
        case '{': t.kind = Tok::LBrace; break;
        case '}': t.kind = Tok::RBrace; break;
        case ',': t.kind = Tok::Comma; break;
        case '+': t.kind = Tok::Plus; break;
        case '-': t.kind = Tok::Minus; break;
        case '*': t.kind = Tok::Star; break;
        case '/': t.kind = Tok::Slash; break;
        case '=':
          if (two('=')) {
            t.kind = Tok::EqEq;
            len = 2;
          } else {
            t.kind = Tok::Assign;
          }
          break;
        case '!':
          if (!two('=')) fail(DiagCode::Lexical, i, "unexpected character '!'", {"'!='"});
          t.kind = Tok::NotEq;
          len = 2;
          break;
        case '<':
          t.kind = two('=') ? Tok::Le : Tok::Lt;
          len = two('=') ? 2 : 1;
          break;
        case '>':
          t.kind = two('=') ? Tok::Ge : Tok::Gt;
          len = two('=') ? 2 : 1;
          break;
        default:
          fail(DiagCode::Lexical, i, "unexpected character '" + std::string(1, c) + "'");
      }
      t.text = std::string(src.substr(i, len));
      i += len;
    }
    out.push_back(std::move(t));
  }
  Token end;
  end.kind = Tok::End;
  end.offset = src.size();
  out.push_back(end);
  return out;
}

// ---------------------------------------------------------------- schema checks

std::string nearest_field(const data::EventSchema& schema, const std::string& name,
                          std::optional<data::FieldKind> kind) {
  std::string best;
  std::size_t best_d = std::numeric_limits<std::size_t>::max();
  for (int pass = 0; pass < 2 && best.empty(); ++pass) {
    for (const auto& f : schema.fields) {
      if (pass == 0 && kind && f.kind != *kind) continue;
      const auto d = edit_distance(name, f.name);
      if (d < best_d) {
        best_d = d;
        best = f.name;
      }
    }
  }
  if (best.empty() || best_d > std::max<std::size_t>(2, name.size() / 2)) return {};
  return best;
}

const char* kind_name(data::FieldKind k) {
  return k == data::FieldKind::Categorical ? "categorical" : "numeric";
}

void check_field(const data::EventSchema& schema, const std::string& name, data::FieldKind want,
                 std::size_t offset, const std::string& context) {
  const auto* f = schema.find(name);
  if (!f) {
    std::string msg = "unknown field '" + name + "'";
    const auto suggestion = nearest_field(schema, name, want);
    if (!suggestion.empty()) msg += "; did you mean '" + suggestion + "'?";
    std::vector<std::string> expected;
    for (const auto& s : schema.fields) {
      if (s.kind == want) expected.push_back("'" + s.name + "'");
    }
    fail(DiagCode::UnknownField, offset, msg, expected);
  }
  if (f->kind != want) {
    fail(DiagCode::Type, offset,
         context + " needs a " + kind_name(want) + " field but '" + name + "' is " + kind_name(f->kind));
  }
}

void check_comparison(const Comparison& c, const data::EventSchema* schema, std::size_t field_offset,
                      std::size_t literal_offset) {
  const bool numeric = std::holds_alternative<double>(c.literals.at(0));
  if (c.op == CmpOp::In && numeric) {
    fail(DiagCode::Type, literal_offset, "'in' sets take string literals of a categorical field");
  }
  if (!numeric && c.op != CmpOp::Eq && c.op != CmpOp::Ne && c.op != CmpOp::In) {
    fail(DiagCode::Type, literal_offset,
         "operator '" + std::string(to_string(c.op)) + "' is not defined for categorical values",
         {"'=='", "'!='", "'in'"});
  }
  if (schema) {
    check_field(*schema, c.field, numeric ? data::FieldKind::Numeric : data::FieldKind::Categorical,
                field_offset, "comparison with a " + std::string(numeric ? "number" : "string"));
  }
}

void check_aggregate_field(const Aggregate& a, const data::EventSchema* schema, std::size_t offset) {
  const auto& meta = info(a.kind);
  const std::string name(meta.name);
  switch (meta.field) {
    case FieldRequirement::None:
      if (!a.field.empty()) fail(DiagCode::Type, offset, name + " takes no field argument");
      break;
    case FieldRequirement::Numeric:
    case FieldRequirement::Categorical: {
      const auto want = meta.field == FieldRequirement::Numeric ? data::FieldKind::Numeric
                                                                : data::FieldKind::Categorical;
      if (a.field.empty()) {
        fail(DiagCode::Type, offset, name + " requires a " + kind_name(want) + " field argument");
      }
      if (schema) check_field(*schema, a.field, want, offset, name);
      break;
    }
  }
}

// ---------------------------------------------------------------- parser

class Parser {
 public:
  Parser(std::string_view src, const data::EventSchema* schema) : tokens_(lex(src)), schema_(schema) {}

  Expr parse_feature() {
    Expr e = parse_expr();
    if (peek().kind != Tok::End) {
      fail(DiagCode::Syntax, peek().offset, "unexpected " + describe(peek()),
           {"'+'", "'-'", "'*'", "'/'", "end of input"});
    }
    return e;
  }

 private:
  const Token& peek(std::size_t ahead = 0) const {
    return tokens_[std::min(pos_ + ahead, tokens_.size() - 1)];
  }
  const Token& next() { return tokens_[std::min(pos_++, tokens_.size() - 1)]; }
  bool accept(Tok k) {
    if (peek().kind != k) return false;
    ++pos_;
    return true;
  }
  const Token& expect(Tok k, const char* what) {
    if (peek().kind != k) fail(DiagCode::Syntax, peek().offset, "unexpected " + describe(peek()), {what});
    return next();
  }
  bool at_keyword(std::string_view kw) const { return peek().kind == Tok::Ident && peek().text == kw; }

  Expr parse_expr() {
    Expr lhs = parse_term();
    while (peek().kind == Tok::Plus || peek().kind == Tok::Minus) {
      const ArithOp op = next().kind == Tok::Plus ? ArithOp::Add : ArithOp::Sub;
      lhs = make_arith(op, std::move(lhs), parse_term());
    }
    return lhs;
  }

  Expr parse_term() {
    Expr lhs = parse_factor();
    while (peek().kind == Tok::Star || peek().kind == Tok::Slash) {
      const ArithOp op = next().kind == Tok::Star ? ArithOp::Mul : ArithOp::Div;
      lhs = make_arith(op, std::move(lhs), parse_factor());
    }
    return lhs;
  }

  Expr parse_factor() {
    const Token& t = peek();
    switch (t.kind) {
      case Tok::Number:
        return make_constant(next().number);
      case Tok::Minus: {
        next();
        if (peek().kind == Tok::Number) return make_constant(-next().number);
        return make_arith(ArithOp::Mul, make_constant(-1.0), parse_factor());
      }
      case Tok::LParen: {
        next();
        Expr e = parse_expr();
        expect(Tok::RParen, "')'");
        return e;
      }
      case Tok::Ident:
        return parse_call();
      default:
        fail(DiagCode::Syntax, t.offset, "unexpected " + describe(t),
             {"aggregator call", "number", "'('", "'-'"});
    }
  }

  Expr parse_call() {
    const Token name = next();
    if (peek().kind != Tok::LParen) {
      if (schema_ && schema_->find(name.text)) {
        fail(DiagCode::Syntax, name.offset,
             "bare field '" + name.text + "' is not a feature; wrap it in an aggregator such as mean(" +
                 name.text + ")",
             {"'('"});
      }
      fail(DiagCode::Syntax, peek().offset, "unexpected " + describe(peek()) + " after '" + name.text + "'",
           {"'('"});
    }
    next();
    if (name.text == "log1p" || name.text == "abs" || name.text == "sqrt" || name.text == "clip") {
      return parse_unary(name);
    }
    const auto kind = aggregator_by_name(name.text);
    if (!kind) {
      std::vector<std::string> expected;
      std::string best;
      std::size_t best_d = 3;
      for (const auto& a : aggregators()) {
        expected.push_back(std::string(a.name));
        const auto d = edit_distance(name.text, a.name);
        if (d < best_d) {
          best_d = d;
          best = std::string(a.name);
        }
      }
      for (const char* u : {"log1p", "abs", "sqrt", "clip"}) expected.emplace_back(u);
      std::string msg = "unknown aggregator '" + name.text + "'";
      if (!best.empty()) msg += "; did you mean '" + best + "'?";
      fail(DiagCode::UnknownAggregator, name.offset, msg, expected);
    }
    return parse_aggregate(*kind, name.offset);
  }

  Expr parse_unary(const Token& name) {
    Expr child = parse_expr();
    if (name.text != "clip") {
      expect(Tok::RParen, "')'");
      const UnaryFn fn = name.text == "log1p" ? UnaryFn::Log1p : name.text == "abs" ? UnaryFn::Abs : UnaryFn::Sqrt;
      return make_unary(fn, std::move(child));
    }
    std::optional<double> lo, hi;
    while (accept(Tok::Comma)) {
      const Token& key = expect(Tok::Ident, "'lo' or 'hi'");
      if (key.text != "lo" && key.text != "hi") {
        fail(DiagCode::Syntax, key.offset, "unknown clip parameter '" + key.text + "'", {"'lo'", "'hi'"});
      }
      auto& slot = key.text == "lo" ? lo : hi;
      if (slot) fail(DiagCode::Syntax, key.offset, "duplicate clip parameter '" + key.text + "'");
      expect(Tok::Assign, "'='");
      slot = parse_signed_number();
    }
    expect(Tok::RParen, "')'");
    if (!lo || !hi) fail(DiagCode::Type, name.offset, "clip requires both lo= and hi=");
    if (*lo > *hi) fail(DiagCode::Type, name.offset, "clip requires lo <= hi");
    return make_clip(std::move(child), *lo, *hi);
  }

  double parse_signed_number() {
    const bool neg = accept(Tok::Minus);
    const Token& t = expect(Tok::Number, "number");
    return neg ? -t.number : t.number;
  }

  Expr parse_aggregate(AggKind kind, std::size_t name_offset) {
    Aggregate a;
    a.kind = kind;
    std::size_t field_offset = name_offset;
    bool first_is_param = false;
    if (peek().kind == Tok::Ident && !at_keyword("where")) {
      if (peek(1).kind == Tok::Assign) {
        first_is_param = true;
      } else {
        field_offset = peek().offset;
        a.field = next().text;
      }
    }
    if (at_keyword("where")) {
      next();
      a.where = parse_pred();
    }
    bool have_halflife = false, have_lag = false, have_window = false;
    auto parse_param = [&] {
      const Token& key = expect(Tok::Ident, "parameter name");
      expect(Tok::Assign, "'='");
      auto dup = [&](bool& seen) {
        if (seen) fail(DiagCode::Syntax, key.offset, "duplicate parameter '" + key.text + "'");
        seen = true;
      };
      if (key.text == "window") {
        dup(have_window);
        a.window = parse_window();
      } else if (key.text == "halflife_days") {
        dup(have_halflife);
        if (kind != AggKind::Ewma) fail(DiagCode::Type, key.offset, "halflife_days applies to ewma only");
        const std::size_t at = peek().offset;
        a.halflife_days = parse_signed_number();
        if (!(a.halflife_days > 0)) fail(DiagCode::Type, at, "halflife_days must be > 0");
      } else if (key.text == "lag") {
        dup(have_lag);
        if (kind != AggKind::Autocorr) fail(DiagCode::Type, key.offset, "lag applies to autocorr only");
        const std::size_t at = peek().offset;
        const double v = parse_signed_number();
        if (v != std::floor(v) || v < 1 || v > 1e9) fail(DiagCode::Type, at, "lag must be an integer >= 1");
        a.lag = static_cast<std::int64_t>(v);
      } else {
        std::vector<std::string> allowed = {"'window'"};
        if (kind == AggKind::Ewma) allowed.push_back("'halflife_days'");
        if (kind == AggKind::Autocorr) allowed.push_back("'lag'");
        fail(DiagCode::Syntax, key.offset, "unknown parameter '" + key.text + "'", allowed);
      }
    };
    if (first_is_param) parse_param();
    while (accept(Tok::Comma)) parse_param();
    if (peek().kind != Tok::RParen) {
      std::vector<std::string> expected = {"')'", "','"};
      if (!a.where) expected.push_back("'where'");
      fail(DiagCode::Syntax, peek().offset, "unexpected " + describe(peek()), expected);
    }
    next();
    if (kind == AggKind::Ewma && !have_halflife) {
      fail(DiagCode::Type, name_offset, "ewma requires halflife_days=<days>");
    }
    if (kind == AggKind::Autocorr && !have_lag) a.lag = 1;
    check_aggregate_field(a, schema_, field_offset);
    return Expr{std::move(a)};
  }

  Window parse_window() {
    const Token& name = expect(Tok::Ident, "'all', 'last_days' or 'last_events'");
    if (name.text == "all") return Window::all();
    if (name.text != "last_days" && name.text != "last_events") {
      fail(DiagCode::Syntax, name.offset, "unknown window '" + name.text + "'",
           {"'all'", "'last_days'", "'last_events'"});
    }
    expect(Tok::LParen, "'('");
    const std::size_t at = peek().offset;
    const double v = parse_signed_number();
    expect(Tok::RParen, "')'");
    if (name.text == "last_days") {
      if (!(v > 0)) fail(DiagCode::Type, at, "last_days window must be > 0 days");
      return Window::last_days(v);
    }
    if (v != std::floor(v) || v < 1 || v > 1e12) {
      fail(DiagCode::Type, at, "last_events window must be an integer >= 1");
    }
    return Window::last_events(static_cast<std::int64_t>(v));
  }

  Predicate parse_pred() {
    Predicate lhs = parse_and();
    while (at_keyword("or")) {
      next();
      lhs = any_of(std::move(lhs), parse_and());
    }
    return lhs;
  }

  Predicate parse_and() {
    Predicate lhs = parse_not();
    while (at_keyword("and")) {
      next();
      lhs = all_of(std::move(lhs), parse_not());
    }
    return lhs;
  }

  Predicate parse_not() {
    if (at_keyword("not")) {
      next();
      return negate(parse_not());
    }
    if (accept(Tok::LParen)) {
      Predicate p = parse_pred();
      expect(Tok::RParen, "')'");
      return p;
    }
    return parse_comparison();
  }

  Literal parse_literal() {
    if (peek().kind == Tok::String) return next().text;
    if (peek().kind == Tok::Number || peek().kind == Tok::Minus) return parse_signed_number();
    fail(DiagCode::Syntax, peek().offset, "unexpected " + describe(peek()), {"string literal", "number"});
  }

  Predicate parse_comparison() {
    const Token& field = peek();
    if (field.kind != Tok::Ident) {
      fail(DiagCode::Syntax, field.offset, "unexpected " + describe(field), {"field name", "'not'", "'('"});
    }
    next();
    Comparison c;
    c.field = field.text;
    const Token& op = next();
    switch (op.kind) {
      case Tok::EqEq: c.op = CmpOp::Eq; break;
      case Tok::NotEq: c.op = CmpOp::Ne; break;
      case Tok::Lt: c.op = CmpOp::Lt; break;
      case Tok::Le: c.op = CmpOp::Le; break;
      case Tok::Gt: c.op = CmpOp::Gt; break;
      case Tok::Ge: c.op = CmpOp::Ge; break;
      case Tok::Assign:
        fail(DiagCode::Syntax, op.offset, "'=' is assignment; use '==' to compare", {"'=='"});
      case Tok::Ident:
        if (op.text == "in") {
          c.op = CmpOp::In;
          break;
        }
        [[fallthrough]];
      default:
        fail(DiagCode::Syntax, op.offset, "unexpected " + describe(op),
             {"'=='", "'!='", "'<'", "'<='", "'>'", "'>='", "'in'"});
    }
    const std::size_t literal_offset = peek().offset;
    if (c.op == CmpOp::In) {
      expect(Tok::LBrace, "'{'");
      std::vector<std::string> values;
      do {
        const Literal l = parse_literal();
        if (!std::holds_alternative<std::string>(l)) {
          fail(DiagCode::Type, literal_offset, "'in' sets take string literals of a categorical field");
        }
        values.push_back(std::get<std::string>(l));
      } while (accept(Tok::Comma));
      expect(Tok::RBrace, "'}'");
      Predicate p = in_set(c.field, std::move(values));
      check_comparison(std::get<Comparison>(p.node), schema_, field.offset, literal_offset);
      return p;
    }
    c.literals.push_back(parse_literal());
    check_comparison(c, schema_, field.offset, literal_offset);
    return Predicate{std::move(c)};
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
  const data::EventSchema* schema_;
};

void typecheck_pred(const Predicate& p, const data::EventSchema& schema) {
  if (const auto* c = std::get_if<Comparison>(&p.node)) {
    if (c->literals.empty()) fail(DiagCode::Type, kNoOffset, "comparison without a literal");
    check_comparison(*c, &schema, kNoOffset, kNoOffset);
    return;
  }
  for (const auto& child : std::get<Logical>(p.node).operands) typecheck_pred(child, schema);
}

}  // namespace

Expr parse(std::string_view text) { return Parser(text, nullptr).parse_feature(); }

Expr parse(std::string_view text, const data::EventSchema& schema) {
  return Parser(text, &schema).parse_feature();
}

void typecheck(const Expr& e, const data::EventSchema& schema) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Aggregate>) {
          check_aggregate_field(n, &schema, kNoOffset);
          if (n.where) typecheck_pred(*n.where, schema);
          if (n.window.kind == WindowKind::LastDays && !(n.window.days > 0)) {
            fail(DiagCode::Type, kNoOffset, "last_days window must be > 0 days");
          }
          if (n.window.kind == WindowKind::LastEvents && n.window.events < 1) {
            fail(DiagCode::Type, kNoOffset, "last_events window must be an integer >= 1");
          }
          if (n.kind == AggKind::Ewma && !(n.halflife_days > 0)) {
            fail(DiagCode::Type, kNoOffset, "halflife_days must be > 0");
          }
          if (n.kind == AggKind::Autocorr && n.lag < 1) fail(DiagCode::Type, kNoOffset, "lag must be >= 1");
        } else if constexpr (std::is_same_v<T, Arith>) {
          for (const auto& c : n.operands) typecheck(c, schema);
        } else if constexpr (std::is_same_v<T, Unary>) {
          typecheck(n.operand.at(0), schema);
          if (n.fn == UnaryFn::Clip && n.lo > n.hi) fail(DiagCode::Type, kNoOffset, "clip requires lo <= hi");
        }
      },
      e.node);
}

}  // namespace eafd::fdsl
