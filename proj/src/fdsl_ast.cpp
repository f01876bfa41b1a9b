#include <algorithm>

#include "eafd/core/text.hpp"
#include "eafd/fdsl/ast.hpp"

namespace eafd::fdsl {

const std::vector<AggInfo>& aggregators() {
  static const std::vector<AggInfo> kRoster = {
      {AggKind::Count, "count", FieldRequirement::None},
      {AggKind::Sum, "sum", FieldRequirement::Numeric},
      {AggKind::Mean, "mean", FieldRequirement::Numeric},
      {AggKind::Std, "std", FieldRequirement::Numeric},
      {AggKind::Min, "min", FieldRequirement::Numeric},
      {AggKind::Max, "max", FieldRequirement::Numeric},
      {AggKind::Median, "median", FieldRequirement::Numeric},
      {AggKind::Nunique, "nunique", FieldRequirement::Categorical},
      {AggKind::Entropy, "entropy", FieldRequirement::Categorical},
      {AggKind::Hhi, "hhi", FieldRequirement::Categorical},
      {AggKind::SpanDays, "span_days", FieldRequirement::None},
      {AggKind::RecencyDays, "recency_days", FieldRequirement::None},
      {AggKind::MeanIntereventDays, "mean_interevent_days", FieldRequirement::None},
      {AggKind::StdIntereventDays, "std_interevent_days", FieldRequirement::None},
      {AggKind::Burstiness, "burstiness", FieldRequirement::None},
      {AggKind::Ewma, "ewma", FieldRequirement::Numeric},
      {AggKind::Autocorr, "autocorr", FieldRequirement::Numeric},
      {AggKind::TrendPerDay, "trend_per_day", FieldRequirement::Numeric},
  };
  return kRoster;
}

const AggInfo& info(AggKind kind) { return aggregators()[static_cast<std::size_t>(kind)]; }

std::optional<AggKind> aggregator_by_name(std::string_view name) {
  for (const auto& a : aggregators()) {
    if (a.name == name) return a.kind;
  }
  return std::nullopt;
}

std::string_view to_string(CmpOp op) {
  switch (op) {
    case CmpOp::Eq: return "==";
    case CmpOp::Ne: return "!=";
    case CmpOp::Lt: return "<";
    case CmpOp::Le: return "<=";
    case CmpOp::Gt: return ">";
    case CmpOp::Ge: return ">=";
    case CmpOp::In: return "in";
  }
  return "?";
}

// ---------------------------------------------------------------- factories

Predicate compare(std::string field, CmpOp op, Literal value) {
  return Predicate{Comparison{std::move(field), op, {std::move(value)}}};
}

Predicate in_set(std::string field, std::vector<std::string> values) {
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());
  Comparison c{std::move(field), CmpOp::In, {}};
  for (auto& v : values) c.literals.emplace_back(std::move(v));
  return Predicate{std::move(c)};
}

Predicate all_of(Predicate lhs, Predicate rhs) {
  return Predicate{Logical{LogicOp::And, {std::move(lhs), std::move(rhs)}}};
}

Predicate any_of(Predicate lhs, Predicate rhs) {
  return Predicate{Logical{LogicOp::Or, {std::move(lhs), std::move(rhs)}}};
}

Predicate negate(Predicate p) { return Predicate{Logical{LogicOp::Not, {std::move(p)}}}; }

Expr make_aggregate(AggKind kind, std::string field, Window window, std::optional<Predicate> where) {
  Aggregate a;
  a.kind = kind;
  a.field = std::move(field);
  a.window = window;
  a.where = std::move(where);
  if (kind == AggKind::Autocorr) a.lag = 1;
  return Expr{std::move(a)};
}

Expr make_ewma(std::string field, double halflife_days, Window window) {
  Aggregate a;
  a.kind = AggKind::Ewma;
  a.field = std::move(field);
  a.window = window;
  a.halflife_days = halflife_days;
  return Expr{std::move(a)};
}

Expr make_autocorr(std::string field, std::int64_t lag, Window window) {
  Aggregate a;
  a.kind = AggKind::Autocorr;
  a.field = std::move(field);
  a.window = window;
  a.lag = lag;
  return Expr{std::move(a)};
}

Expr make_arith(ArithOp op, Expr lhs, Expr rhs) {
  return Expr{Arith{op, {std::move(lhs), std::move(rhs)}}};
}

Expr make_unary(UnaryFn fn, Expr child) { return Expr{Unary{fn, {std::move(child)}, 0.0, 0.0}}; }

Expr make_clip(Expr child, double lo, double hi) {
  return Expr{Unary{UnaryFn::Clip, {std::move(child)}, lo, hi}};
}

Expr make_constant(double value) { return Expr{Constant{value}}; }

// ---------------------------------------------------------------- printing

namespace {

std::string quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\t': out += "\\t"; break;
      default: out.push_back(c);
    }
  }
  out.push_back('"');
  return out;
}

std::string literal_text(const Literal& l) {
  if (const auto* d = std::get_if<double>(&l)) return format_double(*d);
  return quote(std::get<std::string>(l));
}

int precedence(const Predicate& p) {
  if (const auto* l = std::get_if<Logical>(&p.node)) {
    switch (l->op) {
      case LogicOp::Or: return 1;
      case LogicOp::And: return 2;
      case LogicOp::Not: return 3;
    }
  }
  return 4;
}

void print_pred(const Predicate& p, std::string& out);

void print_pred_child(const Predicate& child, bool parens, std::string& out) {
  if (parens) out += "(";
  print_pred(child, out);
  if (parens) out += ")";
}

void print_pred(const Predicate& p, std::string& out) {
  if (const auto* c = std::get_if<Comparison>(&p.node)) {
    out += c->field;
    out += " ";
    out += to_string(c->op);
    out += " ";
    if (c->op == CmpOp::In) {
      out += "{";
      for (std::size_t i = 0; i < c->literals.size(); ++i) {
        if (i) out += ", ";
        out += literal_text(c->literals[i]);
      }
      out += "}";
    } else {
      out += literal_text(c->literals.at(0));
    }
    return;
  }
  const auto& l = std::get<Logical>(p.node);
  const int prec = precedence(p);
  if (l.op == LogicOp::Not) {
    out += "not ";
    print_pred_child(l.operands.at(0), precedence(l.operands[0]) < prec, out);
    return;
  }
  print_pred_child(l.operands.at(0), precedence(l.operands[0]) < prec, out);
  out += l.op == LogicOp::And ? " and " : " or ";
  print_pred_child(l.operands.at(1), precedence(l.operands[1]) <= prec, out);
}

int precedence(const Expr& e) {
  if (const auto* a = std::get_if<Arith>(&e.node)) {
    return (a->op == ArithOp::Add || a->op == ArithOp::Sub) ? 1 : 2;
  }
  return 3;
}

std::string_view arith_symbol(ArithOp op) {
  switch (op) {
    case ArithOp::Add: return " + ";
    case ArithOp::Sub: return " - ";
    case ArithOp::Mul: return " * ";
    case ArithOp::Div: return " / ";
  }
  return " ? ";
}

std::string_view unary_name(UnaryFn fn) {
  switch (fn) {
    case UnaryFn::Log1p: return "log1p";
    case UnaryFn::Abs: return "abs";
    case UnaryFn::Sqrt: return "sqrt";
    case UnaryFn::Clip: return "clip";
  }
  return "?";
}

void print_expr(const Expr& e, std::string& out);

void print_window(const Window& w, std::string& out) {
  switch (w.kind) {
    case WindowKind::All: out += "all"; break;
    case WindowKind::LastDays: out += "last_days(" + format_double(w.days) + ")"; break;
    case WindowKind::LastEvents: out += "last_events(" + std::to_string(w.events) + ")"; break;
  }
}

void print_aggregate(const Aggregate& a, std::string& out) {
  out += info(a.kind).name;
  out += "(";
  bool need_sep = false;
  if (!a.field.empty()) {
    out += a.field;
    need_sep = true;
  }
  if (a.where) {
    if (need_sep) out += " ";
    out += "where ";
    print_pred(*a.where, out);
    need_sep = true;
  }
  auto param = [&](const std::string& text) {
    if (need_sep) out += ", ";
    out += text;
    need_sep = true;
  };
  if (a.kind == AggKind::Ewma) param("halflife_days=" + format_double(a.halflife_days));
  if (a.kind == AggKind::Autocorr) param("lag=" + std::to_string(a.lag));
  if (a.window.kind != WindowKind::All) {
    std::string w = "window=";
    print_window(a.window, w);
    param(w);
  }
  out += ")";
}

void print_expr(const Expr& e, std::string& out) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Aggregate>) {
          print_aggregate(n, out);
        } else if constexpr (std::is_same_v<T, Constant>) {
          out += format_double(n.value);
        } else if constexpr (std::is_same_v<T, Unary>) {
          out += unary_name(n.fn);
          out += "(";
          print_expr(n.operand.at(0), out);
          if (n.fn == UnaryFn::Clip) out += ", lo=" + format_double(n.lo) + ", hi=" + format_double(n.hi);
          out += ")";
        } else {
          const int prec = precedence(e);
          const auto& lhs = n.operands.at(0);
          const auto& rhs = n.operands.at(1);
          const bool lp = precedence(lhs) < prec;
          const bool rp = precedence(rhs) <= prec;
          if (lp) out += "(";
          print_expr(lhs, out);
          if (lp) out += ")";
          out += arith_symbol(n.op);
          if (rp) out += "(";
          print_expr(rhs, out);
          if (rp) out += ")";
        }
      },
      e.node);
}

}  // namespace

std::string canonical_print(const Expr& e) {
  std::string out;
  print_expr(e, out);
  return out;
}

std::string canonical_print(const Predicate& p) {
  std::string out;
  print_pred(p, out);
  return out;
}

// ---------------------------------------------------------------- tags

std::string_view to_string(Category c) {
  switch (c) {
    case Category::Amount: return "Amount";
    case Category::Categories: return "Categories";
    case Category::Time: return "Time";
    case Category::Activity: return "Activity";
  }
  return "?";
}

std::optional<Category> category_from_string(std::string_view s) {
  for (auto c : kAllCategories) {
    if (to_string(c) == s) return c;
  }
  return std::nullopt;
}

namespace {

struct TagFlags {
  bool numeric = false;
  bool categorical = false;
  bool non_time = false;
};

void scan(const Predicate& p, TagFlags& f) {
  if (const auto* c = std::get_if<Comparison>(&p.node)) {
    if (!c->literals.empty() && std::holds_alternative<double>(c->literals[0])) {
      f.numeric = true;
    } else {
      f.categorical = true;
    }
    return;
  }
  for (const auto& child : std::get<Logical>(p.node).operands) scan(child, f);
}

bool is_time_aggregator(AggKind k) {
  switch (k) {
    case AggKind::SpanDays:
    case AggKind::RecencyDays:
    case AggKind::MeanIntereventDays:
    case AggKind::StdIntereventDays:
    case AggKind::Burstiness:
      return true;
    default:
      return false;
  }
}

void scan(const Expr& e, TagFlags& f) {
  std::visit(
      [&](const auto& n) {
        using T = std::decay_t<decltype(n)>;
        if constexpr (std::is_same_v<T, Aggregate>) {
          switch (info(n.kind).field) {
            case FieldRequirement::Numeric: f.numeric = true; break;
            case FieldRequirement::Categorical: f.categorical = true; break;
            case FieldRequirement::None: break;
          }
          if (n.where) scan(*n.where, f);
          const bool windowed_count = n.kind == AggKind::Count && n.window.kind != WindowKind::All;
          if (!is_time_aggregator(n.kind) && !windowed_count) f.non_time = true;
        } else if constexpr (std::is_same_v<T, Arith>) {
          for (const auto& c : n.operands) scan(c, f);
        } else if constexpr (std::is_same_v<T, Unary>) {
          for (const auto& c : n.operand) scan(c, f);
        }
      },
      e.node);
}

bool has_aggregate(const Expr& e) {
  if (std::holds_alternative<Aggregate>(e.node)) return true;
  if (const auto* a = std::get_if<Arith>(&e.node)) {
    return std::any_of(a->operands.begin(), a->operands.end(), has_aggregate);
  }
  if (const auto* u = std::get_if<Unary>(&e.node)) return has_aggregate(u->operand.at(0));
  return false;
}

}  // namespace

Category tag_category(const Expr& e) {
  TagFlags f;
  scan(e, f);
  if (f.numeric) return Category::Amount;
  if (f.categorical) return Category::Categories;
  if (!f.non_time && has_aggregate(e)) return Category::Time;
  return Category::Activity;
}

}  // namespace eafd::fdsl
