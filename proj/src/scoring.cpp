#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/distributions/students_t.hpp>

#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/scoring.hpp"

namespace eafd::scoring {

using nlohmann::json;

const char* to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::Complementary: return "complementary";
    case Verdict::Aligned: return "aligned";
    case Verdict::Uninformative: return "uninformative";
  }
  return "?";
}

Verdict verdict_from_string(const std::string& s) {
  if (s == "complementary") return Verdict::Complementary;
  if (s == "aligned") return Verdict::Aligned;
  if (s == "uninformative") return Verdict::Uninformative;
  throw_config("unknown verdict '" + s + "'");
}

void ScoringConfig::validate() const {
  if (!(tau_a > 0.0 && tau_a < 1.0)) throw_config("scoring: tau_a must be in (0, 1)");
  if (!(alpha > 0.0 && alpha < 0.5)) throw_config("scoring: alpha must be in (0, 0.5)");
  if (folds < 2) throw_config("scoring: folds must be >= 2");
  probe.validate();
}

json ScoringConfig::to_json() const {
  return {{"tau_a", tau_a}, {"alpha", alpha}, {"folds", folds}, {"seed", seed}, {"min_rows", min_rows},
          {"probe", probe.to_json()}};
}

ScoringConfig ScoringConfig::from_json(const json& j) {
  ScoringConfig c;
  c.tau_a = j.value("tau_a", c.tau_a);
  c.alpha = j.value("alpha", c.alpha);
  c.folds = j.value("folds", c.folds);
  c.seed = j.value("seed", c.seed);
  c.min_rows = j.value("min_rows", c.min_rows);
  if (j.contains("probe")) c.probe = probe::GbtConfig::from_json(j.at("probe"));
  c.validate();
  return c;
}

namespace {

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

// Small training sets get a proportionally smaller minimum leaf.
probe::GbtConfig fitted_config(probe::GbtConfig cfg, std::size_t n_train) {
  if (n_train < 2) throw_data("probe: fewer than 2 training rows in a fold");
  const auto limit = static_cast<int>(n_train / 2);
  if (cfg.min_samples_leaf > limit) cfg.min_samples_leaf = limit;
  return cfg;
}

// Pooled out-of-fold regression predictions over rows with present[r] set.
std::vector<double> oof_regression(const ColumnView& x, std::span<const double> y, const data::FoldPlan& folds,
                                   const std::vector<std::uint8_t>& present, const probe::GbtConfig& config,
                                   int workers) {
  std::vector<double> oof(y.size(), kMissing);
  parallel_for(folds.k, workers > 0 ? workers : default_workers(), [&](std::size_t f) {
    std::vector<std::size_t> train, test;
    for (auto r : folds.train_rows(f)) {
      if (present[r]) train.push_back(r);
    }
    for (auto r : folds.test_rows(f)) {
      if (present[r]) test.push_back(r);
    }
    if (test.empty()) return;
    auto train_cols = probe::take_rows(x, train);
    auto test_cols = probe::take_rows(x, test);
    const auto model = probe::fit(fitted_config(config, train.size()), ColumnView(train_cols.begin(), train_cols.end()),
                                  probe::take(y, train));
    const auto pred = model.predict(ColumnView(test_cols.begin(), test_cols.end()));
    for (std::size_t i = 0; i < test.size(); ++i) oof[test[i]] = pred[i];
  });
  return oof;
}

double pooled_r2(std::span<const double> y, const std::vector<double>& oof, const std::vector<std::uint8_t>& present) {
  std::vector<double> a, b;
  for (std::size_t r = 0; r < y.size(); ++r) {
    if (present[r]) {
      a.push_back(y[r]);
      b.push_back(oof[r]);
    }
  }
  return probe::metric_r2(a, b);
}

}  // namespace

json CandidateRecord::to_json() const {
  json importance = importance_rank ? json(*importance_rank) : json(nullptr);
  return {{"name", name},
          {"dsl", dsl},
          {"category", std::string(fdsl::to_string(category))},
          {"iteration", iteration},
          {"alignment_fe", optional_number(alignment_fe)},
          {"reconstruction_ef", optional_number(reconstruction_ef)},
          {"utility", utility},
          {"utility_per_fold", utility_per_fold},
          {"p_value", p_value},
          {"verdict", to_string(verdict)},
          {"importance_rank", importance}};
}

CandidateRecord CandidateRecord::from_json(const json& j) {
  CandidateRecord r;
  r.name = j.value("name", std::string());
  r.dsl = j.at("dsl").get<std::string>();
  r.category = fdsl::category_from_string(j.at("category").get<std::string>()).value_or(fdsl::Category::Activity);
  r.iteration = j.value("iteration", 0);
  if (j.contains("alignment_fe") && j["alignment_fe"].is_number()) r.alignment_fe = j["alignment_fe"].get<double>();
  if (j.contains("reconstruction_ef") && j["reconstruction_ef"].is_number()) {
    r.reconstruction_ef = j["reconstruction_ef"].get<double>();
  }
  r.utility = j.value("utility", 0.0);
  r.utility_per_fold = j.value("utility_per_fold", std::vector<double>{});
  r.p_value = j.value("p_value", 1.0);
  r.verdict = verdict_from_string(j.value("verdict", std::string("uninformative")));
  if (j.contains("importance_rank") && j["importance_rank"].is_number()) r.importance_rank = j["importance_rank"].get<int>();
  return r;
}

double alignment_fe(const ColumnView& candidate, const Matrix& embeddings, const data::FoldPlan& folds,
                    const probe::GbtConfig& config, int workers) {
  const std::size_t n = embeddings.rows();
  if (n < 2 * folds.k) throw_data("alignment: need at least 2k rows");
  for (const auto& c : candidate) {
    if (c.size() != n) throw_data("alignment: candidate and embeddings are not row-aligned");
  }
  const std::vector<std::uint8_t> all(n, 1);
  double sum = 0.0;
  std::size_t used = 0;
  for (std::size_t j = 0; j < embeddings.cols(); ++j) {
    const auto zj = embeddings.column(j);
    if (std::all_of(zj.begin(), zj.end(), [&](double v) { return v == zj[0]; })) continue;
    const auto oof = oof_regression(candidate, zj, folds, all, config, workers);
    sum += pooled_r2(zj, oof, all);
    ++used;
  }
  return used == 0 ? 0.0 : sum / static_cast<double>(used);
}

std::optional<double> reconstruction_ef(std::span<const double> feature, const Matrix& embeddings,
                                        const data::FoldPlan& folds, const probe::GbtConfig& config,
                                        std::size_t min_rows, int workers) {
  const std::size_t n = embeddings.rows();
  if (feature.size() != n) throw_data("reconstruction: feature and embeddings are not row-aligned");
  std::vector<std::uint8_t> present(n);
  std::size_t count = 0;
  for (std::size_t r = 0; r < n; ++r) {
    present[r] = std::isnan(feature[r]) ? 0 : 1;
    count += present[r];
  }
  if (count < std::max<std::size_t>(min_rows, 2)) return std::nullopt;
  std::vector<std::vector<double>> storage;
  const auto x = design(embeddings, storage);
  const auto oof = oof_regression(x, feature, folds, present, config, workers);
  return pooled_r2(feature, oof, present);
}

ColumnView design(const Matrix& embeddings, std::vector<std::vector<double>>& storage,
                  std::span<const std::span<const double>> extra) {
  auto view = columns_of(embeddings, storage);
  for (const auto& c : extra) {
    if (c.size() != embeddings.rows()) throw_data("design: column length does not match embeddings");
    view.push_back(c);
  }
  return view;
}

double paired_t_pvalue(std::span<const double> diffs) {
  const std::size_t k = diffs.size();
  if (k < 2) throw_data("paired t-test: need at least 2 folds");
  double mean = 0.0;
  for (double d : diffs) mean += d;
  mean /= static_cast<double>(k);
  double ss = 0.0;
  for (double d : diffs) ss += (d - mean) * (d - mean);
  const double sd = std::sqrt(ss / static_cast<double>(k - 1));
  // Spread at rounding level counts as none.
  if (sd <= 1e-12 * std::fabs(mean) || sd == 0.0) return mean > 0.0 ? 0.0 : 1.0;
  const double t = mean / (sd / std::sqrt(static_cast<double>(k)));
  boost::math::students_t dist(static_cast<double>(k - 1));
  return boost::math::cdf(boost::math::complement(dist, t));
}

probe::CvResult baseline_cv(const ColumnView& accepted, const Matrix& embeddings, const data::Target& target,
                            const data::FoldPlan& folds, const probe::GbtConfig& config, int workers) {
  std::vector<std::vector<double>> storage;
  const auto x = design(embeddings, storage, accepted);
  return probe::cross_val_loss(config, target.kind, target.n_classes, x, target.values, folds, workers);
}

UtilityResult utility(const ColumnView& candidate, const ColumnView& accepted, const Matrix& embeddings,
                      const data::Target& target, const data::FoldPlan& folds, const probe::GbtConfig& config,
                      const probe::CvResult* baseline, int workers) {
  probe::CvResult own;
  if (!baseline) {
    own = baseline_cv(accepted, embeddings, target, folds, config, workers);
    baseline = &own;
  }
  if (baseline->fold_fingerprint != folds.fingerprint()) {
    throw_invariant("utility: baseline and candidate were scored on different folds");
  }
  ColumnView extra(accepted.begin(), accepted.end());
  extra.insert(extra.end(), candidate.begin(), candidate.end());
  std::vector<std::vector<double>> storage;
  const auto x = design(embeddings, storage, extra);
  const auto with = probe::cross_val_loss(config, target.kind, target.n_classes, x, target.values, folds, workers);
  if (with.fold_fingerprint != baseline->fold_fingerprint) throw_invariant("utility: fold plans differ");

  UtilityResult res;
  res.fold_fingerprint = with.fold_fingerprint;
  res.base_loss = baseline->mean_loss;
  res.with_loss = with.mean_loss;
  res.per_fold.resize(folds.k);
  double sum = 0.0;
  for (std::size_t f = 0; f < folds.k; ++f) {
    res.per_fold[f] = baseline->per_fold[f] - with.per_fold[f];
    sum += res.per_fold[f];
  }
  res.utility = sum / static_cast<double>(folds.k);
  res.p_value = paired_t_pvalue(res.per_fold);
  return res;
}

Verdict categorize(std::optional<double> reconstruction, double utility, double p_value, const ScoringConfig& config) {
  if (utility > 0.0 && p_value <= config.alpha) return Verdict::Complementary;
  if (reconstruction && *reconstruction >= config.tau_a) return Verdict::Aligned;
  return Verdict::Uninformative;
}

std::vector<ImportanceEntry> feature_importance(const probe::TaskModel& model) {
  const auto imp = model.importance();
  std::vector<ImportanceEntry> out;
  for (std::size_t j = 0; j < imp.size(); ++j) out.push_back({j, imp[j], 0});
  std::stable_sort(out.begin(), out.end(),
                   [](const ImportanceEntry& a, const ImportanceEntry& b) { return a.importance > b.importance; });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i + 1);
  return out;
}

json GroupReport::to_json() const {
  json groups = json::object();
  for (auto c : fdsl::kAllCategories) {
    auto it = group_mean.find(c);
    if (it == group_mean.end()) continue;
    groups[std::string(fdsl::to_string(c))] = {{"mean_r2", it->second}, {"n_features", group_size.at(c)}};
  }
  json features = json::array();
  for (const auto& [dsl, score] : per_feature) features.push_back({{"dsl", dsl}, {"r2", optional_number(score)}});
  return {{"groups", groups}, {"features", features}, {"notes", notes}};
}

GroupReport group_report(std::span<const CatalogEntry> catalog, const Matrix& embeddings, const data::FoldPlan& folds,
                         const probe::GbtConfig& config, std::size_t min_rows, int workers) {
  GroupReport rep;
  std::map<fdsl::Category, double> sums;
  for (const auto& e : catalog) {
    const auto score = reconstruction_ef(e.values, embeddings, folds, config, min_rows, workers);
    rep.per_feature.emplace_back(e.dsl, score);
    if (!score) {
      rep.notes.push_back("feature '" + e.dsl + "' has too few present rows; excluded from its group");
      continue;
    }
    sums[e.category] += *score;
    ++rep.group_size[e.category];
  }
  for (auto c : fdsl::kAllCategories) {
    if (rep.group_size.count(c) == 0) {
      rep.notes.push_back("group " + std::string(fdsl::to_string(c)) + " is empty; omitted");
      continue;
    }
    rep.group_mean[c] = sums[c] / static_cast<double>(rep.group_size[c]);
  }
  return rep;
}

json MultiTargetResult::to_json() const {
  json per = json::array();
  for (const auto& t : per_target) {
    per.push_back({{"target", t.target},
                   {"utility", t.result.utility},
                   {"utility_per_fold", t.result.per_fold},
                   {"p_value", t.result.p_value},
                   {"embedding_only_loss", t.embedding_only_loss},
                   {"normalized", t.normalized},
                   {"significant", t.significant}});
  }
  return {{"per_target", per}, {"aggregate", aggregate}, {"complementary", complementary}};
}

MultiTargetResult multi_target_utility(const ColumnView& candidate, const ColumnView& accepted,
                                       const Matrix& embeddings, std::span<const data::Target> targets,
                                       std::span<const data::FoldPlan> folds, const ScoringConfig& config) {
  if (targets.size() < 2) throw_config("multi-target utility needs at least 2 targets");
  if (folds.size() != targets.size()) throw_config("multi-target utility: one fold plan per target");
  MultiTargetResult res;
  bool any_significant = false;
  double sum = 0.0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    TargetUplift up;
    up.target = targets[t].name;
    const auto emb_only = baseline_cv({}, embeddings, targets[t], folds[t], config.probe, config.workers);
    up.embedding_only_loss = emb_only.mean_loss;
    up.result = accepted.empty()
                    ? utility(candidate, accepted, embeddings, targets[t], folds[t], config.probe, &emb_only, config.workers)
                    : utility(candidate, accepted, embeddings, targets[t], folds[t], config.probe, nullptr, config.workers);
    up.normalized = up.embedding_only_loss > 0.0 ? up.result.utility / up.embedding_only_loss : 0.0;
    up.significant = up.result.utility > 0.0 && up.result.p_value <= config.alpha;
    any_significant = any_significant || up.significant;
    sum += up.normalized;
    res.per_target.push_back(std::move(up));
  }
  res.aggregate = sum / static_cast<double>(targets.size());
  res.complementary = res.aggregate > 0.0 && any_significant;
  return res;
}

}  // namespace eafd::scoring
