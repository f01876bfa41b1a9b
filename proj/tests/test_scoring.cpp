#include <cmath>
#include <numbers>
#include <numeric>

#include "doctest.h"
#include "eafd/core/error.hpp"
#include "eafd/core/rng.hpp"
#include "eafd/scoring.hpp"

using namespace eafd;
using namespace eafd::scoring;
using data::TaskKind;

namespace {

Matrix random_embedding(Rng& rng, std::size_t n, std::size_t d) {
  Matrix z(n, d);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < d; ++c) z(r, c) = rng.normal();
  }
  return z;
}

std::vector<double> noise(Rng& rng, std::size_t n) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal();
  return v;
}

ColumnView view1(const std::vector<double>& v) { return {std::span<const double>(v)}; }

probe::GbtConfig small_probe() {
  probe::GbtConfig c;
  c.n_trees = 60;
  return c;
}

// Binary label driven by z0 and a hidden signal absent from z.
data::Target planted_target(Rng& rng, const Matrix& z, const std::vector<double>& hidden) {
  data::Target t;
  t.name = "y";
  t.kind = TaskKind::Binary;
  t.n_classes = 2;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    const double logit = 0.5 * z(r, 0) + 2.0 * hidden[r];
    t.values.push_back(rng.bernoulli(1.0 / (1.0 + std::exp(-logit))) ? 1.0 : 0.0);
  }
  return t;
}

// Diffs with the given mean and unit sample standard deviation.
std::vector<double> diffs_with(double mean, std::size_t k) {
  std::vector<double> e(k);
  for (std::size_t i = 0; i < k; ++i) e[i] = static_cast<double>(i) - static_cast<double>(k - 1) / 2.0;
  double ss = 0.0;
  for (double v : e) ss += v * v;
  const double sd = std::sqrt(ss / static_cast<double>(k - 1));
  for (auto& v : e) v = mean + v / sd;
  return e;
}

}  // namespace

TEST_CASE("categorize examples") {
  ScoringConfig cfg;
  CHECK(categorize(0.9, 0.002, 0.4, cfg) == Verdict::Aligned);
  CHECK(categorize(0.2, 0.01, 0.001, cfg) == Verdict::Complementary);
  CHECK(categorize(0.1, -0.003, 0.9, cfg) == Verdict::Uninformative);
  CHECK(categorize(std::nullopt, 0.0, 1.0, cfg) == Verdict::Uninformative);
  CHECK(categorize(0.5, 0.0, 0.0, cfg) == Verdict::Aligned);
  CHECK(categorize(0.99, 0.1, 0.05, cfg) == Verdict::Complementary);
}

TEST_CASE("categorize partitions the score space") {
  ScoringConfig cfg;
  Rng rng(11);
  for (int t = 0; t < 5000; ++t) {
    std::optional<double> recon;
    if (!rng.bernoulli(0.1)) recon = rng.uniform() * 2.0 - 0.5;
    const double u = rng.bernoulli(0.1) ? 0.0 : rng.normal() * 0.01;
    const double p = rng.bernoulli(0.1) ? cfg.alpha : rng.uniform();
    const Verdict v = categorize(recon, u, p, cfg);
    const bool comp = u > 0.0 && p <= cfg.alpha;
    const bool aligned = !comp && recon && *recon >= cfg.tau_a;
    CHECK(v == (comp ? Verdict::Complementary : aligned ? Verdict::Aligned : Verdict::Uninformative));
    CHECK(categorize(recon, u, p, cfg) == v);
  }
}

TEST_CASE("scoring config validation") {
  ScoringConfig cfg;
  CHECK_NOTHROW(cfg.validate());
  cfg.tau_a = 1.0;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.alpha = 0.5;
  CHECK_THROWS_AS(cfg.validate(), Error);
  cfg = {};
  cfg.folds = 1;
  CHECK_THROWS_AS(cfg.validate(), Error);
}

TEST_CASE("paired t p-value against closed forms and tables") {
  // One degree of freedom: survival = 1/2 - atan(t)/pi.
  for (double t : {-3.0, -0.5, 0.0, 0.3, 1.0, 2.5, 10.0}) {
    const auto d = diffs_with(t / std::sqrt(2.0), 2);
    CHECK(paired_t_pvalue(d) == doctest::Approx(0.5 - std::atan(t) / std::numbers::pi).epsilon(1e-10));
  }
  // Four degrees of freedom: one-sided critical values 2.131847 (5%) and 3.746947 (1%).
  CHECK(paired_t_pvalue(diffs_with(2.131847 / std::sqrt(5.0), 5)) == doctest::Approx(0.05).epsilon(1e-5));
  CHECK(paired_t_pvalue(diffs_with(3.746947 / std::sqrt(5.0), 5)) == doctest::Approx(0.01).epsilon(1e-5));
  CHECK(paired_t_pvalue(std::vector<double>{0.1, 0.1, 0.1}) == 0.0);
  CHECK(paired_t_pvalue(std::vector<double>{0.0, 0.0, 0.0}) == 1.0);
  CHECK(paired_t_pvalue(std::vector<double>{-0.2, -0.2}) == 1.0);
  CHECK_THROWS_AS(paired_t_pvalue(std::vector<double>{1.0}), Error);
}

TEST_CASE("reconstruction of an embedding coordinate") {
  Rng rng(3);
  const std::size_t n = 2000;
  const auto z = random_embedding(rng, n, 5);
  std::vector<double> f(n);
  for (std::size_t r = 0; r < n; ++r) f[r] = z(r, 3) + 1e-3 * rng.normal();
  const auto folds = data::split_folds_plain(n, 5, 1);
  const auto score = reconstruction_ef(f, z, folds, probe::GbtConfig{});
  REQUIRE(score);
  CHECK(*score >= 0.99);
}

TEST_CASE("reconstruction of a nonlinear function") {
  Rng rng(5);
  const std::size_t n = 1000;
  const auto z = random_embedding(rng, n, 4);
  std::vector<double> f(n);
  for (std::size_t r = 0; r < n; ++r) f[r] = std::sin(z(r, 0)) + z(r, 1) * z(r, 1);
  const auto folds = data::split_folds_plain(n, 5, 2);
  const auto score = reconstruction_ef(f, z, folds, probe::GbtConfig{});
  REQUIRE(score);
  CHECK(*score >= 0.8);
}

TEST_CASE("reconstruction of independent noise is near zero") {
  const std::size_t n = 2000;
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(100 + seed);
    const auto z = random_embedding(rng, n, 4);
    const auto f = noise(rng, n);
    const auto score = reconstruction_ef(f, z, data::split_folds_plain(n, 5, seed), probe::GbtConfig{});
    REQUIRE(score);
    sum += *score;
  }
  CHECK(std::fabs(sum / 20.0) <= 0.05);
}

TEST_CASE("reconstruction skips missing rows and needs enough of them") {
  Rng rng(8);
  const std::size_t n = 300;
  const auto z = random_embedding(rng, n, 3);
  std::vector<double> f(n);
  for (std::size_t r = 0; r < n; ++r) f[r] = r % 3 == 0 ? kMissing : 2.0 * z(r, 1);
  const auto folds = data::split_folds_plain(n, 5, 3);
  const auto score = reconstruction_ef(f, z, folds, probe::GbtConfig{});
  REQUIRE(score);
  CHECK(*score >= 0.95);

  std::vector<double> sparse(n, kMissing);
  for (std::size_t r = 0; r < 49; ++r) sparse[r] = z(r, 0);
  CHECK_FALSE(reconstruction_ef(sparse, z, folds, probe::GbtConfig{}).has_value());
  for (std::size_t r = 49; r < 50; ++r) sparse[r] = z(r, 0);
  CHECK(reconstruction_ef(sparse, z, folds, probe::GbtConfig{}).has_value());
  CHECK_THROWS_AS(reconstruction_ef(std::vector<double>(n - 1), z, folds, probe::GbtConfig{}), Error);
}

TEST_CASE("reconstruction ranking is stable under affine rescaling") {
  Rng rng(21);
  const std::size_t n = 500;
  const auto z = random_embedding(rng, n, 4);
  std::vector<double> strong(n), weak(n);
  for (std::size_t r = 0; r < n; ++r) {
    strong[r] = z(r, 0) + 0.2 * rng.normal();
    weak[r] = z(r, 1) + 1.5 * rng.normal();
  }
  const auto folds = data::split_folds_plain(n, 5, 4);
  const double s = *reconstruction_ef(strong, z, folds, small_probe());
  const double w = *reconstruction_ef(weak, z, folds, small_probe());
  REQUIRE(s > w);
  for (double a : {-3.0, 0.01, 250.0}) {
    std::vector<double> s2(n), w2(n);
    for (std::size_t r = 0; r < n; ++r) {
      s2[r] = a * strong[r] + 7.0;
      w2[r] = a * weak[r] - 1.0;
    }
    CHECK(*reconstruction_ef(s2, z, folds, small_probe()) > *reconstruction_ef(w2, z, folds, small_probe()));
  }
}

TEST_CASE("alignment examples") {
  Rng rng(9);
  const std::size_t n = 2000;
  const auto folds = data::split_folds_plain(n, 5, 5);
  {
    const auto z = random_embedding(rng, n, 1);
    const auto copy = z.column(0);
    CHECK(alignment_fe(view1(copy), z, folds, probe::GbtConfig{}) >= 0.99);
    const std::vector<double> constant(n, 4.0);
    CHECK(alignment_fe(view1(constant), z, folds, probe::GbtConfig{}) <= 0.0);
  }
  {
    Matrix flat(n, 2, 1.5);
    const auto f = noise(rng, n);
    CHECK(alignment_fe(view1(f), flat, folds, probe::GbtConfig{}) == 0.0);
  }
  double sum = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r2(500 + seed);
    const auto z = random_embedding(r2, 300, 2);
    const auto f = noise(r2, 300);
    sum += alignment_fe(view1(f), z, data::split_folds_plain(300, 5, seed), small_probe());
  }
  CHECK(sum / 20.0 <= 0.05);
  const Matrix tiny(9, 1, 0.0);
  CHECK_THROWS_AS(alignment_fe(view1(std::vector<double>(9)), tiny, data::split_folds_plain(9, 5, 0), small_probe()),
                  Error);
}

TEST_CASE("duplicate of an accepted column has exactly zero utility") {
  Rng rng(13);
  const std::size_t n = 600;
  const auto z = random_embedding(rng, n, 3);
  const auto h = noise(rng, n);
  const auto target = planted_target(rng, z, h);
  const auto folds = data::split_folds(target.values, target.kind, 5, 7);
  const auto res = utility(view1(h), view1(h), z, target, folds, small_probe());
  REQUIRE(res.per_fold.size() == 5);
  for (double u : res.per_fold) CHECK(u == 0.0);
  CHECK(res.utility == 0.0);
  CHECK(res.p_value == 1.0);
  CHECK(res.fold_fingerprint == folds.fingerprint());
}

TEST_CASE("utility uses paired folds") {
  Rng rng(14);
  const std::size_t n = 400;
  const auto z = random_embedding(rng, n, 3);
  const auto h = noise(rng, n);
  const auto target = planted_target(rng, z, h);
  const auto folds = data::split_folds(target.values, target.kind, 5, 1);
  const auto other = data::split_folds(target.values, target.kind, 5, 2);
  REQUIRE(folds.fingerprint() != other.fingerprint());
  const auto base = baseline_cv({}, z, target, folds, small_probe());
  CHECK(base.fold_fingerprint == folds.fingerprint());
  const auto res = utility(view1(h), {}, z, target, folds, small_probe(), &base);
  const auto fresh = utility(view1(h), {}, z, target, folds, small_probe());
  CHECK(res.per_fold == fresh.per_fold);
  double mean = std::accumulate(res.per_fold.begin(), res.per_fold.end(), 0.0) / 5.0;
  CHECK(res.utility == doctest::Approx(mean).epsilon(1e-14));
  CHECK(res.utility == doctest::Approx(res.base_loss - res.with_loss).epsilon(1e-12));
  try {
    utility(view1(h), {}, z, target, other, small_probe(), &base);
    FAIL("expected a fold mismatch");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::Invariant);
  }
}

TEST_CASE("planted blind-spot feature is significant") {
  int hits = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(40 + seed);
    const std::size_t n = 1000;
    const auto z = random_embedding(rng, n, 4);
    const auto h = noise(rng, n);
    const auto target = planted_target(rng, z, h);
    const auto folds = data::split_folds(target.values, target.kind, 5, seed);
    const auto res = utility(view1(h), {}, z, target, folds, small_probe());
    hits += res.utility > 0.0 && res.p_value < 0.05 ? 1 : 0;
  }
  CHECK(hits >= 5);
}

TEST_CASE("noise candidates are rarely significant") {
  // Allowed rate is alpha with a slack factor of 2.
  int significant = 0;
  const std::size_t n = 300;
  probe::GbtConfig cfg;
  cfg.n_trees = 30;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(900 + seed);
    const auto z = random_embedding(rng, n, 3);
    const auto hidden = noise(rng, n);
    const auto target = planted_target(rng, z, hidden);
    const auto candidate = noise(rng, n);
    const auto folds = data::split_folds(target.values, target.kind, 5, seed);
    const auto res = utility(view1(candidate), {}, z, target, folds, cfg);
    significant += res.utility > 0.0 && res.p_value <= 0.05 ? 1 : 0;
  }
  MESSAGE("noise candidates flagged significant: " << significant << "/100");
  CHECK(significant <= 10);
}

TEST_CASE("importance examples") {
  Rng rng(17);
  const std::size_t n = 400;
  {
    const auto x = noise(rng, n);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = 2.0 * x[r];
    const auto model = probe::fit_task(probe::GbtConfig{}, TaskKind::Regression, 0, view1(x), y);
    const auto imp = feature_importance(model);
    REQUIRE(imp.size() == 1);
    CHECK(imp[0].importance == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(imp[0].rank == 1);
  }
  {
    const auto x = noise(rng, n);
    const auto w = noise(rng, n);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = x[r] + 0.5 * w[r];
    const ColumnView cols = {std::span<const double>(x), std::span<const double>(w), std::span<const double>(x)};
    const auto model = probe::fit_task(probe::GbtConfig{}, TaskKind::Regression, 0, cols, y);
    const auto imp = feature_importance(model);
    REQUIRE(imp.size() == 3);
    CHECK(imp[0].column == 0);
    CHECK(imp[2].column == 2);
    CHECK(imp[2].importance == 0.0);
    double total = 0.0;
    for (const auto& e : imp) total += e.importance;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  }
  int first = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r2(300 + seed);
    std::vector<std::vector<double>> cols(5);
    for (auto& c : cols) c = noise(r2, n);
    std::vector<double> y(n);
    for (std::size_t r = 0; r < n; ++r) y[r] = r2.bernoulli(1.0 / (1.0 + std::exp(-2.0 * cols[2][r]))) ? 1.0 : 0.0;
    const auto model = probe::fit_task(small_probe(), TaskKind::Binary, 2, ColumnView(cols.begin(), cols.end()), y);
    first += feature_importance(model)[0].column == 2 ? 1 : 0;
  }
  CHECK(first >= 19);
}

TEST_CASE("importance ties rank by column index") {
  probe::TaskModel model;
  model.kind = TaskKind::Regression;
  probe::GbtModel m;
  m.n_features = 3;
  model.models.push_back(m);
  const auto imp = feature_importance(model);
  REQUIRE(imp.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(imp[i].column == i);
    CHECK(imp[i].rank == static_cast<int>(i + 1));
    CHECK(imp[i].importance == 0.0);
  }
}

TEST_CASE("group report") {
  Rng rng(23);
  const std::size_t n = 500;
  const auto z = random_embedding(rng, n, 4);
  const auto folds = data::split_folds_plain(n, 5, 9);
  std::vector<double> share(n), gap(n);
  for (std::size_t r = 0; r < n; ++r) {
    share[r] = 1.0 / (1.0 + std::exp(-z(r, 0)));
    gap[r] = rng.exponential(1.0);
  }
  {
    const std::vector<CatalogEntry> one = {{"s", "mean(amount)", fdsl::Category::Amount, share}};
    const auto rep = group_report(one, z, folds, small_probe());
    REQUIRE(rep.group_mean.size() == 1);
    REQUIRE(rep.per_feature.size() == 1);
    CHECK(rep.group_mean.at(fdsl::Category::Amount) == *rep.per_feature[0].second);
    CHECK(rep.group_size.at(fdsl::Category::Amount) == 1);
    CHECK(rep.notes.size() == 3);
    const auto j = rep.to_json();
    CHECK(j["groups"].size() == 1);
    CHECK(j["groups"].contains("Amount"));
  }
  const std::vector<CatalogEntry> catalog = {
      {"a", "share_a", fdsl::Category::Categories, share},
      {"b", "gap_b", fdsl::Category::Time, gap},
      {"c", "sparse", fdsl::Category::Activity, std::vector<double>(n, kMissing)},
  };
  const auto rep = group_report(catalog, z, folds, small_probe());
  CHECK(rep.group_mean.at(fdsl::Category::Categories) > 0.9);
  CHECK(rep.group_mean.at(fdsl::Category::Time) < 0.1);
  CHECK(rep.group_mean.count(fdsl::Category::Activity) == 0);
  CHECK_FALSE(rep.per_feature[2].second.has_value());
}

TEST_CASE("multi-target aggregation") {
  int flagged = 0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(700 + seed);
    const std::size_t n = 600;
    const auto z = random_embedding(rng, n, 3);
    const auto h = noise(rng, n);
    data::Target a = planted_target(rng, z, h);
    a.name = "a";
    data::Target b;
    b.name = "b";
    b.kind = TaskKind::Regression;
    for (std::size_t r = 0; r < n; ++r) b.values.push_back(z(r, 1) + 1.5 * h[r] + 0.3 * rng.normal());
    const std::vector<data::Target> targets = {a, b};
    const std::vector<data::FoldPlan> folds = {data::split_folds(a.values, a.kind, 5, seed),
                                               data::split_folds(b.values, b.kind, 5, seed)};
    ScoringConfig cfg;
    cfg.probe = small_probe();
    const auto res = multi_target_utility(view1(h), {}, z, targets, folds, cfg);
    REQUIRE(res.per_target.size() == 2);
    double mean = 0.0;
    for (const auto& t : res.per_target) {
      CHECK(t.normalized == doctest::Approx(t.result.utility / t.embedding_only_loss).epsilon(1e-12));
      mean += t.normalized / 2.0;
    }
    CHECK(res.aggregate == doctest::Approx(mean).epsilon(1e-12));
    const bool any = res.per_target[0].significant || res.per_target[1].significant;
    CHECK(res.complementary == (res.aggregate > 0.0 && any));
    flagged += res.complementary ? 1 : 0;
  }
  CHECK(flagged >= 18);
}

TEST_CASE("multi-target preconditions and inert feature") {
  Rng rng(31);
  const std::size_t n = 300;
  const auto z = random_embedding(rng, n, 2);
  const auto h = noise(rng, n);
  data::Target a = planted_target(rng, z, h);
  const std::vector<data::Target> one = {a};
  const std::vector<data::FoldPlan> f1 = {data::split_folds(a.values, a.kind, 5, 0)};
  CHECK_THROWS_AS(multi_target_utility(view1(h), {}, z, one, f1, ScoringConfig{}), Error);

  // A copy of an embedding column already in the design is inert on every target.
  data::Target b = a;
  b.name = "b";
  const std::vector<data::Target> two = {a, b};
  const std::vector<data::FoldPlan> f2 = {f1[0], f1[0]};
  ScoringConfig cfg;
  cfg.probe = small_probe();
  const auto copy = z.column(z.cols() - 1);
  const auto res = multi_target_utility(view1(copy), {}, z, two, f2, cfg);
  CHECK(res.aggregate == 0.0);
  CHECK_FALSE(res.complementary);
}

TEST_CASE("candidate record json round trip") {
  CandidateRecord r;
  r.name = "f1";
  r.dsl = "mean(amount)";
  r.category = fdsl::Category::Amount;
  r.iteration = 3;
  r.alignment_fe = 0.25;
  r.utility = 0.004;
  r.utility_per_fold = {0.001, 0.002, 0.003, 0.005, 0.009};
  r.p_value = 0.01;
  r.verdict = Verdict::Complementary;
  r.importance_rank = 2;
  const auto j = r.to_json();
  CHECK(j["reconstruction_ef"].is_null());
  const auto back = CandidateRecord::from_json(j);
  CHECK(back.to_json() == j);
  CHECK(verdict_from_string("aligned") == Verdict::Aligned);
  CHECK_THROWS_AS(verdict_from_string("maybe"), Error);
}
