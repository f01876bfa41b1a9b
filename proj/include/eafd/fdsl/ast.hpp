#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace eafd::fdsl {

// ---------------------------------------------------------------- aggregators

enum class AggKind {
  Count,
  Sum,
  Mean,
  Std,
  Min,
  Max,
  Median,
  Nunique,
  Entropy,
  Hhi,
  SpanDays,
  RecencyDays,
  MeanIntereventDays,
  StdIntereventDays,
  Burstiness,
  Ewma,
  Autocorr,
  TrendPerDay,
};

enum class FieldRequirement { None, Numeric, Categorical };

struct AggInfo {
  AggKind kind;
  std::string_view name;
  FieldRequirement field;
};

/// The fixed aggregator roster, in declaration order.
const std::vector<AggInfo>& aggregators();
const AggInfo& info(AggKind kind);
std::optional<AggKind> aggregator_by_name(std::string_view name);

// ---------------------------------------------------------------- windows

enum class WindowKind { All, LastDays, LastEvents };

struct Window {
  WindowKind kind = WindowKind::All;
  double days = 0.0;         // LastDays
  std::int64_t events = 0;   // LastEvents

  static Window all() { return {}; }
  static Window last_days(double d) { return {WindowKind::LastDays, d, 0}; }
  static Window last_events(std::int64_t k) { return {WindowKind::LastEvents, 0.0, k}; }
  bool operator==(const Window&) const = default;
};

// ---------------------------------------------------------------- predicates

enum class CmpOp { Eq, Ne, Lt, Le, Gt, Ge, In };
std::string_view to_string(CmpOp op);

/// A number compares against a numeric field, a string against a categorical one.
using Literal = std::variant<double, std::string>;

struct Predicate;

struct Comparison {
  std::string field;
  CmpOp op = CmpOp::Eq;
  /// One literal, or the sorted duplicate-free set for `in`.
  std::vector<Literal> literals;
  bool operator==(const Comparison&) const = default;
};

enum class LogicOp { And, Or, Not };

struct Logical {
  LogicOp op = LogicOp::And;
  std::vector<Predicate> operands;  // two for and/or, one for not
  bool operator==(const Logical&) const = default;
};

struct Predicate {
  std::variant<Comparison, Logical> node;
  bool operator==(const Predicate&) const = default;
};

Predicate compare(std::string field, CmpOp op, Literal value);
Predicate in_set(std::string field, std::vector<std::string> values);
Predicate all_of(Predicate lhs, Predicate rhs);
Predicate any_of(Predicate lhs, Predicate rhs);
Predicate negate(Predicate p);

// ---------------------------------------------------------------- expressions

struct Expr;

struct Aggregate {
  AggKind kind = AggKind::Count;
  std::string field;  // empty when the aggregator takes none
  std::optional<Predicate> where;
  Window window;
  double halflife_days = 0.0;  // Ewma only
  std::int64_t lag = 0;        // Autocorr only
  bool operator==(const Aggregate&) const = default;
};

enum class ArithOp { Add, Sub, Mul, Div };

struct Arith {
  ArithOp op = ArithOp::Add;
  std::vector<Expr> operands;  // exactly two
  bool operator==(const Arith&) const = default;
};

enum class UnaryFn { Log1p, Abs, Sqrt, Clip };

struct Unary {
  UnaryFn fn = UnaryFn::Abs;
  std::vector<Expr> operand;  // exactly one
  double lo = 0.0;            // Clip only
  double hi = 0.0;
  bool operator==(const Unary&) const = default;
};

struct Constant {
  double value = 0.0;
  bool operator==(const Constant&) const = default;
};

/// Typed AST of one candidate feature. Its canonical text is its identity.
struct Expr {
  std::variant<Aggregate, Arith, Unary, Constant> node;
  bool operator==(const Expr&) const = default;
};

Expr make_aggregate(AggKind kind, std::string field = {}, Window window = {},
                    std::optional<Predicate> where = std::nullopt);
Expr make_ewma(std::string field, double halflife_days, Window window = {});
Expr make_autocorr(std::string field, std::int64_t lag, Window window = {});
Expr make_arith(ArithOp op, Expr lhs, Expr rhs);
Expr make_unary(UnaryFn fn, Expr child);
Expr make_clip(Expr child, double lo, double hi);
Expr make_constant(double value);

// ---------------------------------------------------------------- printing / tags

/// Canonical text: fixed whitespace, fixed parameter order, shortest
/// round-trip number formatting, minimal parentheses.
std::string canonical_print(const Expr& e);
std::string canonical_print(const Predicate& p);

enum class Category { Amount, Categories, Time, Activity };
std::string_view to_string(Category c);
std::optional<Category> category_from_string(std::string_view s);
inline constexpr Category kAllCategories[] = {Category::Amount, Category::Categories,
                                              Category::Time, Category::Activity};

/// Rule-based feature type. Precedence Amount > Categories > Time > Activity:
/// any numeric field reference is Amount; any categorical reference is
/// Categories; an expression built only from time aggregators or windowed
/// counts is Time; everything else is Activity.
Category tag_category(const Expr& e);

}  // namespace eafd::fdsl
