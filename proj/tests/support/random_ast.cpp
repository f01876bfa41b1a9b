#include "random_ast.hpp"

#include <cmath>

namespace eafd::testing {

using namespace eafd::fdsl;

data::EventSchema test_schema() {
  data::EventSchema s;
  s.timestamp_field = "ts";
  s.fields = {{"mcc", data::FieldKind::Categorical},
              {"amount", data::FieldKind::Numeric},
              {"channel", data::FieldKind::Categorical},
              {"fee", data::FieldKind::Numeric}};
  s.vocabularies["mcc"] = {"5411", "5812", "c7", "q\"uote", "back\\slash", "caf\xc3\xa9"};
  s.vocabularies["channel"] = {"web", "pos", "atm"};
  return s;
}

namespace {

template <typename T>
const T& pick(Rng& rng, const std::vector<T>& items) {
  return items[static_cast<std::size_t>(rng.below(items.size()))];
}

double random_number(Rng& rng) {
  switch (rng.below(5)) {
    case 0: return static_cast<double>(rng.below(100));
    case 1: return std::round(rng.uniform() * 20000.0) / 100.0 - 50.0;
    case 2: return rng.normal() * 1000.0;
    case 3: return std::ldexp(rng.uniform() + 0.5, static_cast<int>(rng.below(400)) - 200);
    default: return -std::ldexp(rng.uniform() + 0.5, static_cast<int>(rng.below(60)) - 30);
  }
}

std::string random_category(Rng& rng, const data::EventSchema& schema, const std::string& field) {
  if (rng.below(8) == 0) return "unseen_" + std::to_string(rng.below(5));
  return pick(rng, schema.vocabulary(field));
}

Window random_window(Rng& rng) {
  switch (rng.below(4)) {
    case 0: return Window::last_days(pick(rng, std::vector<double>{0.5, 1, 3, 7, 30, 90}));
    case 1: return Window::last_events(static_cast<std::int64_t>(1 + rng.below(15)));
    default: return Window::all();
  }
}

}  // namespace

Predicate random_predicate(Rng& rng, const data::EventSchema& schema, int max_depth) {
  const auto cats = schema.categorical_fields();
  const auto nums = schema.numeric_fields();
  if (max_depth <= 0 || rng.below(3) == 0) {
    if (rng.below(2) == 0) {
      const auto& field = pick(rng, cats);
      switch (rng.below(3)) {
        case 0: return compare(field, CmpOp::Eq, random_category(rng, schema, field));
        case 1: return compare(field, CmpOp::Ne, random_category(rng, schema, field));
        default: {
          std::vector<std::string> values;
          const auto k = 1 + rng.below(3);
          for (std::uint64_t i = 0; i < k; ++i) values.push_back(random_category(rng, schema, field));
          return in_set(field, values);
        }
      }
    }
    static const std::vector<CmpOp> kOps = {CmpOp::Eq, CmpOp::Ne, CmpOp::Lt, CmpOp::Le, CmpOp::Gt, CmpOp::Ge};
    const double lit = rng.below(3) == 0 ? random_number(rng) : std::round(rng.uniform() * 200.0) / 4.0;
    return compare(pick(rng, nums), pick(rng, kOps), lit);
  }
  switch (rng.below(3)) {
    case 0: return all_of(random_predicate(rng, schema, max_depth - 1), random_predicate(rng, schema, max_depth - 1));
    case 1: return any_of(random_predicate(rng, schema, max_depth - 1), random_predicate(rng, schema, max_depth - 1));
    default: return negate(random_predicate(rng, schema, max_depth - 1));
  }
}

Expr random_expr(Rng& rng, const data::EventSchema& schema, int max_depth) {
  const auto cats = schema.categorical_fields();
  const auto nums = schema.numeric_fields();
  const auto choice = max_depth <= 0 ? 0 : rng.below(10);
  if (choice <= 5) {
    const auto& meta = aggregators()[static_cast<std::size_t>(rng.below(aggregators().size()))];
    Aggregate a;
    a.kind = meta.kind;
    if (meta.field == FieldRequirement::Numeric) a.field = pick(rng, nums);
    if (meta.field == FieldRequirement::Categorical) a.field = pick(rng, cats);
    a.window = random_window(rng);
    if (rng.below(3) == 0) a.where = random_predicate(rng, schema, 2);
    if (a.kind == AggKind::Ewma) a.halflife_days = pick(rng, std::vector<double>{0.5, 1, 7, 30, 2.5});
    if (a.kind == AggKind::Autocorr) a.lag = static_cast<std::int64_t>(1 + rng.below(3));
    return Expr{std::move(a)};
  }
  if (choice == 6) return make_constant(random_number(rng));
  if (choice <= 8) {
    const auto op = static_cast<ArithOp>(rng.below(4));
    return make_arith(op, random_expr(rng, schema, max_depth - 1), random_expr(rng, schema, max_depth - 1));
  }
  const auto fn = static_cast<UnaryFn>(rng.below(4));
  if (fn == UnaryFn::Clip) {
    double lo = random_number(rng), hi = random_number(rng);
    if (lo > hi) std::swap(lo, hi);
    return make_clip(random_expr(rng, schema, max_depth - 1), lo, hi);
  }
  return make_unary(fn, random_expr(rng, schema, max_depth - 1));
}

data::EventSequence random_sequence(Rng& rng, const data::EventSchema& schema, std::size_t max_len,
                                    const std::string& id) {
  data::EventSequence seq;
  seq.id = id;
  const auto cats = schema.categorical_fields();
  const auto nums = schema.numeric_fields();
  const std::size_t n = rng.below(12) == 0 ? 0 : static_cast<std::size_t>(rng.below(max_len + 1));
  seq.categorical.assign(cats.size(), {});
  seq.numeric.assign(nums.size(), {});
  double t = rng.below(2) == 0 ? 0.0 : 1.6e9 + std::floor(rng.uniform() * 1e7);
  const double rate_per_day = 0.2 + rng.uniform() * 3.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && rng.below(6) != 0) t += std::round(rng.exponential(rate_per_day) * 86400.0);
    seq.timestamps.push_back(t);
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const auto vocab = schema.vocabulary(cats[c]).size();
      seq.categorical[c].push_back(rng.below(20) == 0 ? data::kMissingCategory
                                                      : static_cast<std::uint32_t>(rng.below(vocab)));
    }
    for (std::size_t c = 0; c < nums.size(); ++c) {
      double v = rng.below(20) == 0 ? kMissing : std::round(rng.lognormal(3.0, 1.0) * 100.0) / 100.0;
      if (rng.below(10) == 0 && !std::isnan(v)) v = 12.5;  // plateaus exercise ties and zero variance
      seq.numeric[c].push_back(v);
    }
  }
  return seq;
}

}  // namespace eafd::testing
