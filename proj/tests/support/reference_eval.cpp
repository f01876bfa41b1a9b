#include "reference_eval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>

namespace eafd::testing {

using namespace eafd::fdsl;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Event {
  double sec;
  double day;
  std::map<std::string, std::optional<std::string>> cats;
  std::map<std::string, std::optional<double>> nums;
};

std::vector<Event> events_of(const data::EventSchema& schema, const data::EventSequence& seq) {
  std::vector<Event> out;
  const auto cats = schema.categorical_fields();
  const auto nums = schema.numeric_fields();
  for (std::size_t i = 0; i < seq.size(); ++i) {
    Event e;
    e.sec = seq.timestamps[i];
    e.day = e.sec / 86400.0;
    for (std::size_t c = 0; c < cats.size(); ++c) {
      const auto id = seq.categorical[c][i];
      if (id == data::kMissingCategory) {
        e.cats[cats[c]] = std::nullopt;
      } else {
        e.cats[cats[c]] = schema.vocabulary(cats[c])[id];
      }
    }
    for (std::size_t c = 0; c < nums.size(); ++c) {
      const double v = seq.numeric[c][i];
      e.nums[nums[c]] = std::isnan(v) ? std::nullopt : std::optional<double>(v);
    }
    out.push_back(std::move(e));
  }
  return out;
}

bool holds(const Predicate& p, const Event& e) {
  if (const auto* l = std::get_if<Logical>(&p.node)) {
    if (l->op == LogicOp::Not) return !holds(l->operands[0], e);
    if (l->op == LogicOp::And) return holds(l->operands[0], e) && holds(l->operands[1], e);
    return holds(l->operands[0], e) || holds(l->operands[1], e);
  }
  const auto& c = std::get<Comparison>(p.node);
  if (std::holds_alternative<double>(c.literals[0])) {
    const auto v = e.nums.at(c.field);
    if (!v) return false;
    const double lit = std::get<double>(c.literals[0]);
    switch (c.op) {
      case CmpOp::Eq: return *v == lit;
      case CmpOp::Ne: return *v != lit;
      case CmpOp::Lt: return *v < lit;
      case CmpOp::Le: return *v <= lit;
      case CmpOp::Gt: return *v > lit;
      case CmpOp::Ge: return *v >= lit;
      default: return false;
    }
  }
  const auto v = e.cats.at(c.field);
  if (!v) return false;
  if (c.op == CmpOp::In) {
    for (const auto& lit : c.literals) {
      if (std::get<std::string>(lit) == *v) return true;
    }
    return false;
  }
  const bool same = std::get<std::string>(c.literals[0]) == *v;
  return c.op == CmpOp::Eq ? same : !same;
}

double mean(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double pstd(const std::vector<double>& v) {
  const double m = mean(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

double aggregate(const Aggregate& a, const std::vector<Event>& all) {
  // Window first, then predicate, then drop events missing the field.
  std::vector<const Event*> windowed;
  for (std::size_t i = 0; i < all.size(); ++i) {
    bool keep = true;
    if (a.window.kind == WindowKind::LastEvents) {
      keep = all.size() - i <= static_cast<std::size_t>(a.window.events);
    } else if (a.window.kind == WindowKind::LastDays) {
      keep = all[i].sec >= all.back().sec - a.window.days * 86400.0;
    }
    if (keep) windowed.push_back(&all[i]);
  }
  const auto kind = info(a.kind).field;
  std::vector<const Event*> sel;
  for (const Event* e : windowed) {
    if (a.where && !holds(*a.where, *e)) continue;
    if (kind == FieldRequirement::Numeric && !e->nums.at(a.field)) continue;
    if (kind == FieldRequirement::Categorical && !e->cats.at(a.field)) continue;
    sel.push_back(e);
  }
  std::vector<double> x;
  if (kind == FieldRequirement::Numeric) {
    for (const Event* e : sel) x.push_back(*e->nums.at(a.field));
  }
  std::vector<double> gaps;
  for (std::size_t j = 1; j < sel.size(); ++j) gaps.push_back((sel[j]->sec - sel[j - 1]->sec) / 86400.0);
  const std::size_t m = sel.size();

  switch (a.kind) {
    case AggKind::Count: return static_cast<double>(m);
    case AggKind::Sum: {
      if (m == 0) return kNaN;
      double s = 0.0;
      for (double v : x) s += v;
      return s;
    }
    case AggKind::Mean: return m == 0 ? kNaN : mean(x);
    case AggKind::Std: return m == 0 ? kNaN : pstd(x);
    case AggKind::Min: return m == 0 ? kNaN : *std::min_element(x.begin(), x.end());
    case AggKind::Max: return m == 0 ? kNaN : *std::max_element(x.begin(), x.end());
    case AggKind::Median: {
      if (m == 0) return kNaN;
      std::sort(x.begin(), x.end());
      return m % 2 ? x[m / 2] : (x[m / 2 - 1] + x[m / 2]) / 2.0;
    }
    case AggKind::Nunique:
    case AggKind::Entropy:
    case AggKind::Hhi: {
      if (m == 0) return kNaN;
      std::map<std::string, int> counts;
      for (const Event* e : sel) ++counts[*e->cats.at(a.field)];
      if (a.kind == AggKind::Nunique) return static_cast<double>(counts.size());
      double h = 0.0, hhi = 0.0;
      for (const auto& [k, c] : counts) {
        const double p = static_cast<double>(c) / static_cast<double>(m);
        h -= p * std::log(p);
        hhi += p * p;
      }
      return a.kind == AggKind::Entropy ? h : hhi;
    }
    case AggKind::SpanDays: return m < 2 ? kNaN : (sel.back()->sec - sel.front()->sec) / 86400.0;
    case AggKind::RecencyDays: return m == 0 ? kNaN : (all.back().sec - sel.back()->sec) / 86400.0;
    case AggKind::MeanIntereventDays: return m < 2 ? kNaN : mean(gaps);
    case AggKind::StdIntereventDays: return m < 2 ? kNaN : pstd(gaps);
    case AggKind::Burstiness: {
      if (m < 2) return kNaN;
      const double mu = mean(gaps), sd = pstd(gaps);
      return mu + sd == 0.0 ? 0.0 : (sd - mu) / (sd + mu);
    }
    case AggKind::Ewma: {
      if (m == 0) return kNaN;
      const double now = all.back().sec;
      double num = 0.0, den = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        const double w = std::pow(0.5, (now - sel[j]->sec) / 86400.0 / a.halflife_days);
        num += w * x[j];
        den += w;
      }
      return num / den;
    }
    case AggKind::Autocorr: {
      const auto lag = static_cast<std::size_t>(a.lag);
      if (m <= lag) return kNaN;
      std::vector<double> head(x.begin() + static_cast<std::ptrdiff_t>(lag), x.end());
      std::vector<double> tail(x.begin(), x.end() - static_cast<std::ptrdiff_t>(lag));
      const double mh = mean(head), mt = mean(tail);
      double c = 0.0, vh = 0.0, vt = 0.0;
      for (std::size_t j = 0; j < head.size(); ++j) {
        c += (head[j] - mh) * (tail[j] - mt);
        vh += (head[j] - mh) * (head[j] - mh);
        vt += (tail[j] - mt) * (tail[j] - mt);
      }
      if (vh == 0.0 || vt == 0.0) return kNaN;
      if (head.size() == 2) return c > 0 ? 1.0 : -1.0;
      return std::max(-1.0, std::min(1.0, c / std::sqrt(vh) / std::sqrt(vt)));
    }
    case AggKind::TrendPerDay: {
      if (m < 2) return kNaN;
      std::vector<double> t;
      for (const Event* e : sel) t.push_back(e->day);
      const double mt = mean(t), mx = mean(x);
      double cov = 0.0, var = 0.0;
      for (std::size_t j = 0; j < m; ++j) {
        cov += (t[j] - mt) * (x[j] - mx);
        var += (t[j] - mt) * (t[j] - mt);
      }
      return var == 0.0 ? kNaN : cov / var;
    }
  }
  return kNaN;
}

double eval(const Expr& e, const std::vector<Event>& events) {
  if (const auto* c = std::get_if<Constant>(&e.node)) return c->value;
  double out = kNaN;
  if (const auto* a = std::get_if<Aggregate>(&e.node)) {
    out = aggregate(*a, events);
  } else if (const auto* ar = std::get_if<Arith>(&e.node)) {
    const double l = eval(ar->operands[0], events), r = eval(ar->operands[1], events);
    if (std::isnan(l) || std::isnan(r)) return kNaN;
    if (ar->op == ArithOp::Add) out = l + r;
    if (ar->op == ArithOp::Sub) out = l - r;
    if (ar->op == ArithOp::Mul) out = l * r;
    if (ar->op == ArithOp::Div) out = r == 0.0 ? kNaN : l / r;
  } else {
    const auto& u = std::get<Unary>(e.node);
    const double v = eval(u.operand[0], events);
    if (std::isnan(v)) return kNaN;
    if (u.fn == UnaryFn::Log1p) out = v > -1.0 ? std::log1p(v) : kNaN;
    if (u.fn == UnaryFn::Abs) out = v < 0 ? -v : v;
    if (u.fn == UnaryFn::Sqrt) out = v >= 0.0 ? std::sqrt(v) : kNaN;
    if (u.fn == UnaryFn::Clip) out = v < u.lo ? u.lo : (v > u.hi ? u.hi : v);
  }
  return std::isinf(out) ? kNaN : out;
}

}  // namespace

double reference_evaluate(const Expr& e, const data::EventSchema& schema, const data::EventSequence& seq) {
  return eval(e, events_of(schema, seq));
}

bool same_value(double a, double b, double rel) {
  if (std::isnan(a) || std::isnan(b)) return std::isnan(a) && std::isnan(b);
  return std::fabs(a - b) <= rel * std::max({1.0, std::fabs(a), std::fabs(b)});
}

}  // namespace eafd::testing
