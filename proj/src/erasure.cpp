#include <algorithm>
#include <cmath>
#include <numeric>

#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/core/rng.hpp"
#include "eafd/core/text.hpp"
#include "eafd/erasure.hpp"

namespace eafd::erasure {

using nlohmann::json;

namespace {

constexpr std::size_t kBandwidthRows = 1024;

double sq_dist(const Matrix& x, std::size_t i, std::size_t j) {
  double s = 0.0;
  for (std::size_t c = 0; c < x.cols(); ++c) {
    const double d = x(i, c) - x(j, c);
    s += d * d;
  }
  return s;
}

// First `m` entries of a seeded shuffle of 0..n-1, sorted.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t m, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  if (m >= n) return idx;
  for (std::size_t i = 0; i < m; ++i) std::swap(idx[i], idx[i + rng.below(n - i)]);
  idx.resize(m);
  std::sort(idx.begin(), idx.end());
  return idx;
}

Matrix take_rows(const Matrix& x, std::span<const std::size_t> rows) {
  Matrix out(rows.size(), x.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(x.row(rows[i]).begin(), x.row(rows[i]).end(), out.row(i).begin());
  }
  return out;
}

void check_aligned(const Matrix& x, const Matrix& s) {
  if (x.rows() != s.rows()) throw_data("hsic: inputs are not row-aligned");
  for (double v : x.data()) {
    if (!std::isfinite(v)) throw_data("hsic: non-finite input");
  }
  for (double v : s.data()) {
    if (!std::isfinite(v)) throw_data("hsic: non-finite input");
  }
}

// H L H for a Gram matrix.
Matrix center(const Matrix& l) {
  const std::size_t n = l.rows();
  std::vector<double> row(n, 0.0);
  double all = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) row[i] += l(i, j);
    all += row[i];
    row[i] /= static_cast<double>(n);
  }
  all /= static_cast<double>(n) * static_cast<double>(n);
  Matrix out(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) out(i, j) = l(i, j) - row[i] - row[j] + all;
  }
  return out;
}

}  // namespace

void HsicConfig::validate() const {
  if (bandwidth_x && !(*bandwidth_x > 0.0)) throw_config("hsic: bandwidth must be positive");
  if (bandwidth_s && !(*bandwidth_s > 0.0)) throw_config("hsic: bandwidth must be positive");
  if (minibatch < 4) throw_config("hsic: minibatch must be >= 4");
  if (max_rows < 4) throw_config("hsic: max_rows must be >= 4");
}

json HsicConfig::to_json() const {
  return {{"kernel", "rbf"},
          {"bandwidth_x", bandwidth_x ? json(*bandwidth_x) : json("median")},
          {"bandwidth_s", bandwidth_s ? json(*bandwidth_s) : json("median")},
          {"minibatch", minibatch},
          {"max_rows", max_rows},
          {"seed", seed}};
}

double median_bandwidth(const Matrix& x, std::uint64_t seed, std::vector<std::string>* warnings) {
  if (x.rows() < 2) throw_data("median bandwidth: need at least 2 rows");
  Rng rng = Rng::stream(seed, 0x6277);
  const auto rows = sample_rows(x.rows(), kBandwidthRows, rng);
  std::vector<double> d;
  d.reserve(rows.size() * (rows.size() - 1) / 2);
  for (std::size_t a = 0; a < rows.size(); ++a) {
    for (std::size_t b = a + 1; b < rows.size(); ++b) d.push_back(std::sqrt(sq_dist(x, rows[a], rows[b])));
  }
  const std::size_t m = d.size() / 2;
  std::nth_element(d.begin(), d.begin() + m, d.end());
  double med = d[m];
  if (d.size() % 2 == 0) med = 0.5 * (med + *std::max_element(d.begin(), d.begin() + m));
  if (!(med > 0.0)) {
    if (warnings) warnings->push_back("median bandwidth is zero (constant input); using 1.0");
    return 1.0;
  }
  return med;
}

Matrix rbf_gram(const Matrix& x, double bandwidth) {
  const std::size_t n = x.rows();
  const double scale = -1.0 / (2.0 * bandwidth * bandwidth);
  Matrix k(n, n, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i + 1; j < n; ++j) k(i, j) = k(j, i) = std::exp(scale * sq_dist(x, i, j));
  }
  return k;
}

double hsic_gram(const Matrix& k, const Matrix& l) {
  const std::size_t n = k.rows();
  if (n < 2 || l.rows() != n || k.cols() != n || l.cols() != n) throw_data("hsic: Gram matrices must be n×n, n >= 2");
  double cross = 0.0, rk_rl = 0.0, sk = 0.0, sl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double a = 0.0, rk = 0.0, rl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      a += k(i, j) * l(i, j);
      rk += k(i, j);
      rl += l(i, j);
    }
    cross += a;
    rk_rl += rk * rl;
    sk += rk;
    sl += rl;
  }
  const double nn = static_cast<double>(n);
  const double trace = cross - 2.0 * rk_rl / nn + sk * sl / (nn * nn);
  return trace / ((nn - 1.0) * (nn - 1.0));
}

double rbf_hsic(const Matrix& x, const Matrix& s, double bandwidth_x, double bandwidth_s, int workers) {
  check_aligned(x, s);
  const std::size_t n = x.rows();
  if (n < 2) throw_data("hsic: need at least 2 rows");
  const double gx = -1.0 / (2.0 * bandwidth_x * bandwidth_x);
  const double gs = -1.0 / (2.0 * bandwidth_s * bandwidth_s);
  std::vector<double> cross(n), rk(n), rl(n);
  parallel_for(n, workers > 0 ? workers : default_workers(), [&](std::size_t i) {
    double a = 0.0, sk = 0.0, sl = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double kv = i == j ? 1.0 : std::exp(gx * sq_dist(x, i, j));
      const double lv = i == j ? 1.0 : std::exp(gs * sq_dist(s, i, j));
      a += kv * lv;
      sk += kv;
      sl += lv;
    }
    cross[i] = a;
    rk[i] = sk;
    rl[i] = sl;
  });
  double c = 0.0, p = 0.0, sk = 0.0, sl = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    c += cross[i];
    p += rk[i] * rl[i];
    sk += rk[i];
    sl += rl[i];
  }
  const double nn = static_cast<double>(n);
  return (c - 2.0 * p / nn + sk * sl / (nn * nn)) / ((nn - 1.0) * (nn - 1.0));
}

double hsic(const Matrix& x, const Matrix& s, const HsicConfig& config, std::vector<std::string>* warnings,
            int workers) {
  config.validate();
  check_aligned(x, s);
  if (x.rows() < 2) throw_data("hsic: need at least 2 rows");
  const double bx = config.bandwidth_x ? *config.bandwidth_x : median_bandwidth(x, config.seed, warnings);
  const double bs = config.bandwidth_s ? *config.bandwidth_s : median_bandwidth(s, config.seed, warnings);
  if (x.rows() <= config.max_rows) return rbf_hsic(x, s, bx, bs, workers);
  Rng rng = Rng::stream(config.seed, 0x6873);
  const auto rows = sample_rows(x.rows(), config.max_rows, rng);
  return rbf_hsic(take_rows(x, rows), take_rows(s, rows), bx, bs, workers);
}

std::vector<double> permutation_null(const Matrix& k, const Matrix& l, std::size_t n_permutations,
                                     std::uint64_t seed) {
  const std::size_t n = k.rows();
  Rng rng(seed);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Matrix lp(n, n);
  std::vector<double> out;
  out.reserve(n_permutations);
  for (std::size_t t = 0; t < n_permutations; ++t) {
    rng.shuffle(perm);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) lp(i, j) = l(perm[i], perm[j]);
    }
    out.push_back(hsic_gram(k, lp));
  }
  return out;
}

// ---------------------------------------------------------------- eraser

void EraserConfig::validate() const {
  if (!(lambda >= 0.0)) throw_config("eraser: lambda must be >= 0");
  if (steps < 1) throw_config("eraser: steps must be >= 1");
  if (!(learning_rate > 0.0)) throw_config("eraser: learning_rate must be positive");
  if (!(decay >= 0.0)) throw_config("eraser: decay must be >= 0");
  hsic.validate();
}

json EraserConfig::to_json() const {
  return {{"lambda", lambda}, {"steps", steps}, {"learning_rate", learning_rate}, {"decay", decay},
          {"hsic", hsic.to_json()}};
}

namespace {

std::optional<double> bandwidth_from_json(const json& j, const char* key) {
  if (!j.contains(key) || (j[key].is_string() && j[key] == "median")) return std::nullopt;
  if (!j[key].is_number()) throw_config(std::string("hsic: ") + key + " must be a number or \"median\"");
  return j[key].get<double>();
}

}  // namespace

HsicConfig HsicConfig::from_json(const json& j) {
  HsicConfig c;
  c.bandwidth_x = bandwidth_from_json(j, "bandwidth_x");
  c.bandwidth_s = bandwidth_from_json(j, "bandwidth_s");
  c.minibatch = j.value("minibatch", c.minibatch);
  c.max_rows = j.value("max_rows", c.max_rows);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

EraserConfig EraserConfig::from_json(const json& j) {
  EraserConfig c;
  c.lambda = j.value("lambda", c.lambda);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.decay = j.value("decay", c.decay);
  if (j.contains("hsic")) c.hsic = HsicConfig::from_json(j.at("hsic"));
  c.validate();
  return c;
}

Matrix multiply(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) throw_invariant("multiply: shape mismatch");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = a(i, k);
      if (v == 0.0) continue;
      for (std::size_t j = 0; j < b.cols(); ++j) out(i, j) += v * b(k, j);
    }
  }
  return out;
}

Objective eraser_objective(const Matrix& z, const Matrix& s, const Matrix& w, double lambda, double bandwidth_x,
                           double bandwidth_s, std::span<const std::size_t> rows) {
  const std::size_t n = z.rows(), d = z.cols();
  if (w.rows() != d || w.cols() != d) throw_invariant("eraser: W must be d×d");
  if (s.rows() != n) throw_data("eraser: sensitive columns are not row-aligned with the embeddings");
  Objective obj;
  obj.gradient = Matrix(d, d);

  // Fidelity over all rows.
  const Matrix y = multiply(z, w);
  const double norm = 1.0 / (static_cast<double>(n) * static_cast<double>(d));
  Matrix resid(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < d; ++c) {
      resid(i, c) = y(i, c) - z(i, c);
      obj.fidelity += resid(i, c) * resid(i, c);
    }
  }
  obj.fidelity *= norm;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < d; ++a) {
      const double za = 2.0 * norm * z(i, a);
      for (std::size_t c = 0; c < d; ++c) obj.gradient(a, c) += za * resid(i, c);
    }
  }

  if (lambda > 0.0 && rows.size() >= 2) {
    const std::size_t m = rows.size();
    const Matrix yb = take_rows(y, rows);
    const Matrix zb = take_rows(z, rows);
    const Matrix k = rbf_gram(yb, bandwidth_x);
    const Matrix lc = center(rbf_gram(take_rows(s, rows), bandwidth_s));
    const double c = 1.0 / ((static_cast<double>(m) - 1.0) * (static_cast<double>(m) - 1.0));
    double h = 0.0;
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < m; ++j) h += k(i, j) * lc(i, j);
    }
    obj.hsic = c * h;
    // dHSIC/dy_i = -(2c / bw^2) sum_j Lc_ij K_ij (y_i - y_j)
    const double g = -2.0 * c / (bandwidth_x * bandwidth_x);
    Matrix grad_y(m, d);
    for (std::size_t i = 0; i < m; ++i) {
      double msum = 0.0;
      std::vector<double> my(d, 0.0);
      for (std::size_t j = 0; j < m; ++j) {
        const double mij = lc(i, j) * k(i, j);
        msum += mij;
        for (std::size_t a = 0; a < d; ++a) my[a] += mij * yb(j, a);
      }
      for (std::size_t a = 0; a < d; ++a) grad_y(i, a) = g * (yb(i, a) * msum - my[a]);
    }
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t a = 0; a < d; ++a) {
        const double za = lambda * zb(i, a);
        for (std::size_t c2 = 0; c2 < d; ++c2) obj.gradient(a, c2) += za * grad_y(i, c2);
      }
    }
  }
  obj.total = obj.fidelity + lambda * obj.hsic;
  return obj;
}

std::string EraserResult::trace_csv() const {
  std::string out = "step,fidelity,hsic,total,learning_rate\n";
  for (const auto& t : trace) {
    out += std::to_string(t.step) + "," + format_double(t.fidelity) + "," + format_double(t.hsic) + "," +
           format_double(t.total) + "," + format_double(t.learning_rate) + "\n";
  }
  return out;
}

EraserResult fit_eraser(const Matrix& z, const Matrix& s, const EraserConfig& config, int workers) {
  config.validate();
  check_aligned(z, s);
  const std::size_t n = z.rows(), d = z.cols();
  if (n < 4) throw_data("eraser: need at least 4 rows");
  if (s.cols() == 0) throw_data("eraser: no sensitive columns");

  EraserResult res;
  res.bandwidth_x = config.hsic.bandwidth_x ? *config.hsic.bandwidth_x
                                            : median_bandwidth(z, config.hsic.seed, &res.warnings);
  res.bandwidth_s = config.hsic.bandwidth_s ? *config.hsic.bandwidth_s
                                            : median_bandwidth(s, config.hsic.seed, &res.warnings);
  HsicConfig full = config.hsic;
  full.bandwidth_x = res.bandwidth_x;
  full.bandwidth_s = res.bandwidth_s;
  res.hsic_before = hsic(z, s, full, nullptr, workers);

  Matrix w(d, d);
  for (std::size_t i = 0; i < d; ++i) w(i, i) = 1.0;
  Rng rng = Rng::stream(config.hsic.seed, 0x6572);
  const std::size_t m = std::min(config.hsic.minibatch, n);
  double initial = 0.0;
  for (int step = 0; step < config.steps; ++step) {
    const auto rows = sample_rows(n, m, rng);
    auto obj = eraser_objective(z, s, w, config.lambda, res.bandwidth_x, res.bandwidth_s, rows);
    const double lr = config.learning_rate / (1.0 + config.decay * step);
    res.trace.push_back({step, obj.fidelity, obj.hsic, obj.total, lr});
    if (step == 0) initial = obj.total;
    if (!std::isfinite(obj.total) || (step > 0 && obj.total > 10.0 * initial && obj.total > 0.0)) {
      res.diverged = true;
      break;
    }
    for (std::size_t i = 0; i < d; ++i) {
      for (std::size_t j = 0; j < d; ++j) w(i, j) -= lr * obj.gradient(i, j);
    }
  }
  res.w = w;
  res.erased = multiply(z, w);
  res.hsic_after = hsic(res.erased, s, full, nullptr, workers);
  return res;
}

Matrix sensitive_columns(std::span<const scoring::CatalogEntry> catalog, fdsl::Category group) {
  std::vector<const scoring::CatalogEntry*> cols;
  for (const auto& e : catalog) {
    if (e.category == group) cols.push_back(&e);
  }
  if (cols.empty()) throw_config("erasure: sensitive group " + std::string(fdsl::to_string(group)) + " has no features");
  const std::size_t n = cols.front()->values.size();
  Matrix s(n, cols.size());
  for (std::size_t c = 0; c < cols.size(); ++c) {
    const auto& v = cols[c]->values;
    if (v.size() != n) throw_data("erasure: catalog columns differ in length");
    double sum = 0.0, cnt = 0.0;
    for (double x : v) {
      if (!std::isnan(x)) {
        sum += x;
        cnt += 1.0;
      }
    }
    const double mean = cnt > 0.0 ? sum / cnt : 0.0;
    double ss = 0.0;
    for (double x : v) {
      if (!std::isnan(x)) ss += (x - mean) * (x - mean);
    }
    const double sd = cnt > 1.0 ? std::sqrt(ss / cnt) : 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      s(r, c) = std::isnan(v[r]) || sd == 0.0 ? 0.0 : (v[r] - mean) / sd;
    }
  }
  return s;
}

// ---------------------------------------------------------------- report

const GroupDelta* ErasureReport::group(fdsl::Category c) const {
  for (const auto& g : groups) {
    if (g.group == c) return &g;
  }
  return nullptr;
}

json ErasureReport::to_json() const {
  json gs = json::array();
  for (const auto& g : groups) {
    gs.push_back({{"group", std::string(fdsl::to_string(g.group))},
                  {"erased", g.group == erased},
                  {"n_features", g.n_features},
                  {"r2_before", g.before},
                  {"r2_after", g.after},
                  {"delta_r2_pp", g.delta_pp}});
  }
  json fs = json::array();
  for (const auto& [dsl, v] : per_feature) {
    fs.push_back({{"dsl", dsl},
                  {"r2_before", v.first ? json(*v.first) : json(nullptr)},
                  {"r2_after", v.second ? json(*v.second) : json(nullptr)}});
  }
  return {{"erased_group", std::string(fdsl::to_string(erased))},
          {"groups", gs},
          {"features", fs},
          {"downstream", {{"metric", metric}, {"before", metric_before}, {"after", metric_after},
                          {"delta_pp", metric_delta_pp}}},
          {"notes", notes}};
}

namespace {

double oof_metric(const Matrix& z, const data::Target& target, const data::FoldPlan& folds,
                  const probe::GbtConfig& config, int workers) {
  std::vector<std::vector<double>> storage;
  const auto x = columns_of(z, storage);
  const auto cv = probe::cross_val_loss(config, target.kind, target.n_classes, x, target.values, folds, workers);
  return probe::task_metric(target.kind, target.n_classes, target.values, cv.oof);
}

}  // namespace

ErasureReport erasure_report(const Matrix& before, const Matrix& after, std::span<const scoring::CatalogEntry> catalog,
                             fdsl::Category erased, const data::Target& target, const data::FoldPlan& recon_folds,
                             const data::FoldPlan& target_folds, const probe::GbtConfig& config, std::size_t min_rows,
                             int workers) {
  if (before.rows() != after.rows()) throw_data("erasure report: embeddings differ in row count");
  ErasureReport rep;
  rep.erased = erased;
  const auto g0 = scoring::group_report(catalog, before, recon_folds, config, min_rows, workers);
  const auto g1 = scoring::group_report(catalog, after, recon_folds, config, min_rows, workers);
  for (auto c : fdsl::kAllCategories) {
    const auto it0 = g0.group_mean.find(c);
    const auto it1 = g1.group_mean.find(c);
    if (it0 == g0.group_mean.end() || it1 == g1.group_mean.end()) continue;
    rep.groups.push_back({c, it0->second, it1->second, 100.0 * (it1->second - it0->second), g0.group_size.at(c)});
  }
  for (std::size_t i = 0; i < g0.per_feature.size(); ++i) {
    rep.per_feature.push_back({g0.per_feature[i].first, {g0.per_feature[i].second, g1.per_feature[i].second}});
  }
  rep.notes = g0.notes;
  if (!rep.group(erased)) rep.notes.push_back("erased group has no scorable features");
  rep.metric = probe::metric_name(target.kind);
  rep.metric_before = oof_metric(before, target, target_folds, config, workers);
  rep.metric_after = oof_metric(after, target, target_folds, config, workers);
  rep.metric_delta_pp = 100.0 * (rep.metric_after - rep.metric_before);
  return rep;
}

}  // namespace eafd::erasure
