#include <algorithm>
#include <cmath>

#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/fdsl/eval.hpp"
#include "eafd/fdsl/parser.hpp"
#include "json.hpp"

namespace eafd::fdsl {

namespace {

struct PredOp {
  enum class Kind { NumCmp, CatEq, CatNe, CatIn, And, Or, Not };
  Kind kind = Kind::NumCmp;
  std::size_t slot = 0;
  CmpOp cmp = CmpOp::Eq;
  double number = 0.0;
  std::optional<std::uint32_t> category;  // nullopt: literal absent from vocabulary
  std::vector<std::uint32_t> set;
};

struct Node {
  enum class Kind { Aggregate, Arith, Unary, Constant };
  Kind kind = Kind::Constant;
  AggKind agg = AggKind::Count;
  FieldRequirement field = FieldRequirement::None;
  std::size_t slot = 0;
  Window window;
  std::vector<PredOp> predicate;  // postfix
  double halflife_days = 0.0;
  std::int64_t lag = 0;
  ArithOp op = ArithOp::Add;
  UnaryFn fn = UnaryFn::Abs;
  double lo = 0.0, hi = 0.0, value = 0.0;
  std::vector<Node> children;
};

void lower_pred(const Predicate& p, const data::EventSchema& schema, std::vector<PredOp>& out) {
  if (const auto* c = std::get_if<Comparison>(&p.node)) {
    PredOp op;
    if (std::holds_alternative<double>(c->literals.at(0))) {
      op.kind = PredOp::Kind::NumCmp;
      op.slot = *schema.numeric_slot(c->field);
      op.cmp = c->op;
      op.number = std::get<double>(c->literals[0]);
    } else {
      op.slot = *schema.categorical_slot(c->field);
      if (c->op == CmpOp::In) {
        op.kind = PredOp::Kind::CatIn;
        for (const auto& l : c->literals) {
          if (auto id = schema.category_id(c->field, std::get<std::string>(l))) op.set.push_back(*id);
        }
        std::sort(op.set.begin(), op.set.end());
      } else {
        op.kind = c->op == CmpOp::Eq ? PredOp::Kind::CatEq : PredOp::Kind::CatNe;
        op.category = schema.category_id(c->field, std::get<std::string>(c->literals[0]));
      }
    }
    out.push_back(std::move(op));
    return;
  }
  const auto& l = std::get<Logical>(p.node);
  for (const auto& child : l.operands) lower_pred(child, schema, out);
  PredOp op;
  op.kind = l.op == LogicOp::And ? PredOp::Kind::And : l.op == LogicOp::Or ? PredOp::Kind::Or : PredOp::Kind::Not;
  out.push_back(std::move(op));
}

Node lower(const Expr& e, const data::EventSchema& schema) {
  Node n;
  std::visit(
      [&](const auto& x) {
        using T = std::decay_t<decltype(x)>;
        if constexpr (std::is_same_v<T, Aggregate>) {
          n.kind = Node::Kind::Aggregate;
          n.agg = x.kind;
          n.field = info(x.kind).field;
          if (n.field == FieldRequirement::Numeric) n.slot = *schema.numeric_slot(x.field);
          if (n.field == FieldRequirement::Categorical) n.slot = *schema.categorical_slot(x.field);
          n.window = x.window;
          if (x.where) lower_pred(*x.where, schema, n.predicate);
          n.halflife_days = x.halflife_days;
          n.lag = x.lag;
        } else if constexpr (std::is_same_v<T, Arith>) {
          n.kind = Node::Kind::Arith;
          n.op = x.op;
          for (const auto& c : x.operands) n.children.push_back(lower(c, schema));
        } else if constexpr (std::is_same_v<T, Unary>) {
          n.kind = Node::Kind::Unary;
          n.fn = x.fn;
          n.lo = x.lo;
          n.hi = x.hi;
          n.children.push_back(lower(x.operand.at(0), schema));
        } else {
          n.kind = Node::Kind::Constant;
          n.value = x.value;
        }
      },
      e.node);
  return n;
}

// Per-thread buffers reused across evaluations.
struct Scratch {
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<std::uint32_t> selection;
  std::vector<double> values;
  std::vector<std::uint32_t> ids;
};

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

bool compare_number(double v, CmpOp op, double lit) {
  switch (op) {
    case CmpOp::Eq: return v == lit;
    case CmpOp::Ne: return v != lit;
    case CmpOp::Lt: return v < lit;
    case CmpOp::Le: return v <= lit;
    case CmpOp::Gt: return v > lit;
    case CmpOp::Ge: return v >= lit;
    case CmpOp::In: return false;
  }
  return false;
}

// Evaluates the postfix predicate over events [begin, end) column by column.
// A comparison against a missing value is false.
const std::vector<std::uint8_t>& eval_mask(const std::vector<PredOp>& program, const data::EventSequence& seq,
                                           std::size_t begin, std::size_t end, Scratch& s) {
  const std::size_t len = end - begin;
  std::size_t depth = 0;
  auto push = [&]() -> std::vector<std::uint8_t>& {
    if (s.masks.size() <= depth) s.masks.emplace_back();
    auto& m = s.masks[depth++];
    m.assign(len, 0);
    return m;
  };
  for (const auto& op : program) {
    switch (op.kind) {
      case PredOp::Kind::NumCmp: {
        auto& m = push();
        const auto& col = seq.numeric[op.slot];
        for (std::size_t i = 0; i < len; ++i) {
          const double v = col[begin + i];
          m[i] = !std::isnan(v) && compare_number(v, op.cmp, op.number);
        }
        break;
      }
      case PredOp::Kind::CatEq:
      case PredOp::Kind::CatNe: {
        auto& m = push();
        const auto& col = seq.categorical[op.slot];
        const bool eq = op.kind == PredOp::Kind::CatEq;
        for (std::size_t i = 0; i < len; ++i) {
          const auto id = col[begin + i];
          if (id == data::kMissingCategory) continue;
          const bool same = op.category && id == *op.category;
          m[i] = eq ? same : !same;
        }
        break;
      }
      case PredOp::Kind::CatIn: {
        auto& m = push();
        const auto& col = seq.categorical[op.slot];
        for (std::size_t i = 0; i < len; ++i) {
          const auto id = col[begin + i];
          m[i] = id != data::kMissingCategory && std::binary_search(op.set.begin(), op.set.end(), id);
        }
        break;
      }
      case PredOp::Kind::And:
      case PredOp::Kind::Or: {
        auto& rhs = s.masks[--depth];
        auto& lhs = s.masks[depth - 1];
        if (op.kind == PredOp::Kind::And) {
          for (std::size_t i = 0; i < len; ++i) lhs[i] = lhs[i] & rhs[i];
        } else {
          for (std::size_t i = 0; i < len; ++i) lhs[i] = lhs[i] | rhs[i];
        }
        break;
      }
      case PredOp::Kind::Not: {
        auto& m = s.masks[depth - 1];
        for (std::size_t i = 0; i < len; ++i) m[i] = !m[i];
        break;
      }
    }
  }
  return s.masks[0];
}

double mean_of(const std::vector<double>& v) {
  double sum = 0.0;
  for (double x : v) sum += x;
  return sum / static_cast<double>(v.size());
}

double pop_std(const std::vector<double>& v) {
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size()));
}

double eval_aggregate(const Node& n, const data::EventSequence& seq) {
  Scratch& s = scratch();
  const std::size_t total = seq.size();
  std::size_t begin = 0;
  const std::size_t end = total;
  if (total > 0) {
    switch (n.window.kind) {
      case WindowKind::All: break;
      case WindowKind::LastEvents:
        begin = total > static_cast<std::size_t>(n.window.events) ? total - static_cast<std::size_t>(n.window.events) : 0;
        break;
      case WindowKind::LastDays: {
        const double cutoff = seq.timestamps.back() - n.window.days * data::kSecondsPerDay;
        begin = static_cast<std::size_t>(
            std::lower_bound(seq.timestamps.begin(), seq.timestamps.end(), cutoff) - seq.timestamps.begin());
        break;
      }
    }
  }
  const std::uint8_t* mask = nullptr;
  if (!n.predicate.empty() && end > begin) mask = eval_mask(n.predicate, seq, begin, end, s).data();

  auto& sel = s.selection;
  sel.clear();
  for (std::size_t i = begin; i < end; ++i) {
    if (mask && !mask[i - begin]) continue;
    if (n.field == FieldRequirement::Numeric && std::isnan(seq.numeric[n.slot][i])) continue;
    if (n.field == FieldRequirement::Categorical && seq.categorical[n.slot][i] == data::kMissingCategory) continue;
    sel.push_back(static_cast<std::uint32_t>(i));
  }
  const std::size_t m = sel.size();
  const auto& ts = seq.timestamps;

  auto gather_values = [&]() -> std::vector<double>& {
    auto& v = s.values;
    v.clear();
    for (auto i : sel) v.push_back(seq.numeric[n.slot][i]);
    return v;
  };
  auto gather_gaps = [&]() -> std::vector<double>& {
    auto& v = s.values;
    v.clear();
    for (std::size_t j = 1; j < m; ++j) v.push_back((ts[sel[j]] - ts[sel[j - 1]]) / data::kSecondsPerDay);
    return v;
  };

  switch (n.agg) {
    case AggKind::Count:
      return static_cast<double>(m);
    case AggKind::Sum: {
      if (m == 0) return kMissing;
      double sum = 0.0;
      for (double x : gather_values()) sum += x;
      return sum;
    }
    case AggKind::Mean:
      return m == 0 ? kMissing : mean_of(gather_values());
    case AggKind::Std:
      return m == 0 ? kMissing : pop_std(gather_values());
    case AggKind::Min: {
      if (m == 0) return kMissing;
      const auto& v = gather_values();
      return *std::min_element(v.begin(), v.end());
    }
    case AggKind::Max: {
      if (m == 0) return kMissing;
      const auto& v = gather_values();
      return *std::max_element(v.begin(), v.end());
    }
    case AggKind::Median: {
      if (m == 0) return kMissing;
      auto& v = gather_values();
      std::sort(v.begin(), v.end());
      return m % 2 == 1 ? v[m / 2] : 0.5 * (v[m / 2 - 1] + v[m / 2]);
    }
    case AggKind::Nunique:
    case AggKind::Entropy:
    case AggKind::Hhi: {
      if (m == 0) return kMissing;
      auto& ids = s.ids;
      ids.clear();
      for (auto i : sel) ids.push_back(seq.categorical[n.slot][i]);
      std::sort(ids.begin(), ids.end());
      double distinct = 0.0, entropy = 0.0, hhi = 0.0;
      const double total_d = static_cast<double>(m);
      for (std::size_t j = 0; j < ids.size();) {
        std::size_t k = j;
        while (k < ids.size() && ids[k] == ids[j]) ++k;
        const double p = static_cast<double>(k - j) / total_d;
        distinct += 1.0;
        entropy -= p * std::log(p);
        hhi += p * p;
        j = k;
      }
      if (n.agg == AggKind::Nunique) return distinct;
      return n.agg == AggKind::Entropy ? entropy : hhi;
    }
    case AggKind::SpanDays:
      return m < 2 ? kMissing : (ts[sel.back()] - ts[sel.front()]) / data::kSecondsPerDay;
    case AggKind::RecencyDays:
      return m == 0 ? kMissing : (ts.back() - ts[sel.back()]) / data::kSecondsPerDay;
    case AggKind::MeanIntereventDays:
      return m < 2 ? kMissing : mean_of(gather_gaps());
    case AggKind::StdIntereventDays:
      return m < 2 ? kMissing : pop_std(gather_gaps());
    case AggKind::Burstiness: {
      if (m < 2) return kMissing;
      const auto& gaps = gather_gaps();
      const double mu = mean_of(gaps);
      const double sigma = pop_std(gaps);
      const double denom = sigma + mu;
      return denom == 0.0 ? 0.0 : (sigma - mu) / denom;
    }
    case AggKind::Ewma: {
      if (m == 0) return kMissing;
      // Weights 2^(-age/h) with age measured from the sequence's last event.
      // Factoring out the newest selected weight keeps the ratio exact and
      // avoids underflow for long-idle sequences.
      const double newest = ts[sel.back()];
      double num = 0.0, den = 0.0;
      for (auto i : sel) {
        const double w = std::exp2(-((newest - ts[i]) / data::kSecondsPerDay) / n.halflife_days);
        num += w * seq.numeric[n.slot][i];
        den += w;
      }
      return num / den;
    }
    case AggKind::Autocorr: {
      const std::size_t lag = static_cast<std::size_t>(n.lag);
      if (m <= lag) return kMissing;
      const auto& v = gather_values();
      const std::size_t len = m - lag;
      double ma = 0.0, mb = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        ma += v[j + lag];
        mb += v[j];
      }
      ma /= static_cast<double>(len);
      mb /= static_cast<double>(len);
      double sab = 0.0, saa = 0.0, sbb = 0.0;
      for (std::size_t j = 0; j < len; ++j) {
        const double a = v[j + lag] - ma;
        const double b = v[j] - mb;
        sab += a * b;
        saa += a * a;
        sbb += b * b;
      }
      if (saa == 0.0 || sbb == 0.0) return kMissing;
      // Two pairs are always perfectly (anti)correlated; keep that exact.
      if (len == 2) return sab > 0.0 ? 1.0 : -1.0;
      return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
    }
    case AggKind::TrendPerDay: {
      if (m < 2) return kMissing;
      double mt = 0.0, mx = 0.0;
      for (auto i : sel) {
        mt += ts[i] / data::kSecondsPerDay;
        mx += seq.numeric[n.slot][i];
      }
      mt /= static_cast<double>(m);
      mx /= static_cast<double>(m);
      double stx = 0.0, stt = 0.0;
      for (auto i : sel) {
        const double dt = ts[i] / data::kSecondsPerDay - mt;
        stx += dt * (seq.numeric[n.slot][i] - mx);
        stt += dt * dt;
      }
      if (stt == 0.0) return kMissing;
      return stx / stt;
    }
  }
  return kMissing;
}

double eval_node(const Node& n, const data::EventSequence& seq) {
  double out = kMissing;
  switch (n.kind) {
    case Node::Kind::Constant:
      return n.value;
    case Node::Kind::Aggregate:
      out = eval_aggregate(n, seq);
      break;
    case Node::Kind::Arith: {
      const double a = eval_node(n.children[0], seq);
      if (std::isnan(a)) return kMissing;
      const double b = eval_node(n.children[1], seq);
      if (std::isnan(b)) return kMissing;
      switch (n.op) {
        case ArithOp::Add: out = a + b; break;
        case ArithOp::Sub: out = a - b; break;
        case ArithOp::Mul: out = a * b; break;
        case ArithOp::Div: out = b == 0.0 ? kMissing : a / b; break;
      }
      break;
    }
    case Node::Kind::Unary: {
      const double x = eval_node(n.children[0], seq);
      if (std::isnan(x)) return kMissing;
      switch (n.fn) {
        case UnaryFn::Log1p: out = x <= -1.0 ? kMissing : std::log1p(x); break;
        case UnaryFn::Abs: out = std::fabs(x); break;
        case UnaryFn::Sqrt: out = x < 0.0 ? kMissing : std::sqrt(x); break;
        case UnaryFn::Clip: out = std::min(std::max(x, n.lo), n.hi); break;
      }
      break;
    }
  }
  return std::isfinite(out) ? out : kMissing;
}

}  // namespace

struct CompiledFeature::Program {
  Node root;
};

double CompiledFeature::evaluate(const data::EventSequence& seq) const { return eval_node(program_->root, seq); }

CompiledFeature compile(const Expr& e, const data::EventSchema& schema, std::optional<Category> category) {
  typecheck(e, schema);
  CompiledFeature f;
  f.canonical_ = canonical_print(e);
  f.category_ = category.value_or(tag_category(e));
  f.expr_ = e;
  f.program_ = std::make_shared<const CompiledFeature::Program>(CompiledFeature::Program{lower(e, schema)});
  return f;
}

CompiledFeature compile(std::string_view text, const data::EventSchema& schema, std::optional<Category> category) {
  return compile(parse(text, schema), schema, category);
}

std::vector<std::uint8_t> FeatureMatrix::missing_mask(std::size_t c) const {
  std::vector<std::uint8_t> mask(rows());
  for (std::size_t r = 0; r < rows(); ++r) mask[r] = missing(r, c) ? 1 : 0;
  return mask;
}

FeatureMatrix evaluate_batch(std::span<const CompiledFeature> features, const data::Dataset& dataset, int workers) {
  FeatureMatrix out;
  const std::size_t n = dataset.size();
  out.table.rows = n;
  out.table.columns.assign(features.size(), std::vector<double>(n, kMissing));
  for (const auto& f : features) {
    out.table.names.push_back(f.canonical());
    out.categories.push_back(f.category());
  }
  const auto seqs = dataset.sequences();
  parallel_for(n, workers > 0 ? workers : default_workers(), [&](std::size_t r) {
    for (std::size_t c = 0; c < features.size(); ++c) out.table.columns[c][r] = features[c].evaluate(seqs[r]);
  });
  return out;
}

// ---------------------------------------------------------------- feature lists

std::vector<FeatureSpec> parse_feature_list(const std::string& json_text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(json_text);
  } catch (const nlohmann::json::exception& e) {
    throw_config(std::string("feature list: ") + e.what());
  }
  if (j.is_object() && j.contains("features")) j = j["features"];
  if (!j.is_array()) throw_config("feature list: expected a JSON array of {name, dsl, category?}");
  std::vector<FeatureSpec> out;
  for (const auto& item : j) {
    FeatureSpec spec;
    if (item.is_string()) {
      spec.dsl = item.get<std::string>();
    } else if (item.is_object() && item.contains("dsl") && item["dsl"].is_string()) {
      spec.dsl = item["dsl"].get<std::string>();
      if (item.contains("name") && item["name"].is_string()) spec.name = item["name"].get<std::string>();
      if (item.contains("category") && item["category"].is_string()) {
        spec.category = category_from_string(item["category"].get<std::string>());
        if (!spec.category) throw_config("feature list: unknown category '" + item["category"].get<std::string>() + "'");
      }
    } else {
      throw_config("feature list: each entry needs a string 'dsl'");
    }
    if (spec.name.empty()) spec.name = spec.dsl;
    out.push_back(std::move(spec));
  }
  return out;
}

std::string feature_list_json(std::span<const FeatureSpec> specs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : specs) {
    nlohmann::json item = {{"name", s.name}, {"dsl", s.dsl}};
    if (s.category) item["category"] = std::string(to_string(*s.category));
    j.push_back(std::move(item));
  }
  return j.dump(2) + "\n";
}

std::vector<CompiledFeature> compile_all(std::span<const FeatureSpec> specs, const data::EventSchema& schema) {
  std::vector<CompiledFeature> out;
  for (const auto& s : specs) {
    try {
      out.push_back(compile(s.dsl, schema, s.category));
    } catch (const DslError& e) {
      throw_config("feature '" + s.name + "': " + e.what());
    }
  }
  return out;
}

}  // namespace eafd::fdsl
