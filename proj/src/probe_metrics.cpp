#include <algorithm>
#include <cmath>
#include <numeric>

#include "eafd/core/error.hpp"
#include "eafd/core/parallel.hpp"
#include "eafd/probe.hpp"

namespace eafd::probe {

using nlohmann::json;

namespace {

constexpr double kProbFloor = 1e-15;

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw_data(std::string(what) + ": length mismatch (" + std::to_string(a) + " vs " + std::to_string(b) + ")");
}

}  // namespace

double metric_r2(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true.size(), y_pred.size(), "r2");
  if (y_true.size() < 2) throw_data("r2: need at least 2 values");
  double mean = 0.0;
  for (double v : y_true) mean += v;
  mean /= static_cast<double>(y_true.size());
  double sse = 0.0, sst = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    sse += (y_true[i] - y_pred[i]) * (y_true[i] - y_pred[i]);
    sst += (y_true[i] - mean) * (y_true[i] - mean);
  }
  if (sst == 0.0) return sse > 0.0 ? 0.0 : 1.0;
  return 1.0 - sse / sst;
}

double metric_auc(std::span<const double> y_true, std::span<const double> scores) {
  require_same_length(y_true.size(), scores.size(), "auc");
  const std::size_t n = y_true.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0, n_pos = 0.0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (y_true[order[k]] == 1.0) rank_sum += midrank;
    }
    i = j;
  }
  for (double v : y_true) n_pos += v == 1.0 ? 1.0 : 0.0;
  const double n_neg = static_cast<double>(n) - n_pos;
  if (n_pos == 0.0 || n_neg == 0.0) throw_data("auc: both classes must be present");
  return (rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg);
}

double metric_mae(std::span<const double> y_true, std::span<const double> y_pred) {
  require_same_length(y_true.size(), y_pred.size(), "mae");
  if (y_true.empty()) throw_data("mae: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) s += std::fabs(y_true[i] - y_pred[i]);
  return s / static_cast<double>(y_true.size());
}

double metric_logloss(std::span<const double> y_true, std::span<const double> prob) {
  require_same_length(y_true.size(), prob.size(), "logloss");
  if (y_true.empty()) throw_data("logloss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const double p = std::clamp(prob[i], kProbFloor, 1.0 - kProbFloor);
    s -= y_true[i] == 1.0 ? std::log(p) : std::log1p(-p);
  }
  return s / static_cast<double>(y_true.size());
}

double metric_multi_logloss(std::span<const double> y_true, std::span<const double> probs, std::size_t n_classes) {
  require_same_length(y_true.size() * n_classes, probs.size(), "multiclass logloss");
  if (y_true.empty()) throw_data("logloss: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    const auto c = static_cast<std::size_t>(y_true[i]);
    s -= std::log(std::max(probs[i * n_classes + c], kProbFloor));
  }
  return s / static_cast<double>(y_true.size());
}

double metric_accuracy(std::span<const double> y_true, std::span<const double> pred, std::size_t n_classes) {
  if (y_true.empty()) throw_data("accuracy: empty input");
  double hits = 0.0;
  if (n_classes <= 2 && pred.size() == y_true.size()) {
    for (std::size_t i = 0; i < y_true.size(); ++i) hits += ((pred[i] >= 0.5) == (y_true[i] == 1.0)) ? 1.0 : 0.0;
  } else {
    require_same_length(y_true.size() * n_classes, pred.size(), "accuracy");
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      const double* row = pred.data() + i * n_classes;
      const auto arg = static_cast<std::size_t>(std::max_element(row, row + n_classes) - row);
      hits += static_cast<double>(arg) == y_true[i] ? 1.0 : 0.0;
    }
  }
  return hits / static_cast<double>(y_true.size());
}

json EvalMetrics::to_json() const {
  json j = json::object();
  if (r2) j["r2"] = *r2;
  if (auc) j["auc"] = *auc;
  if (accuracy) j["accuracy"] = *accuracy;
  if (mae) j["mae"] = *mae;
  if (logloss) j["logloss"] = *logloss;
  return j;
}

EvalMetrics evaluate_metrics(data::TaskKind kind, std::size_t n_classes, std::span<const double> y,
                             std::span<const double> pred) {
  EvalMetrics m;
  switch (kind) {
    case data::TaskKind::Regression:
      m.r2 = metric_r2(y, pred);
      m.mae = metric_mae(y, pred);
      break;
    case data::TaskKind::Binary:
      m.auc = metric_auc(y, pred);
      m.accuracy = metric_accuracy(y, pred, 2);
      m.logloss = metric_logloss(y, pred);
      break;
    case data::TaskKind::Multiclass:
      m.accuracy = metric_accuracy(y, pred, n_classes);
      m.logloss = metric_multi_logloss(y, pred, n_classes);
      break;
  }
  return m;
}

double task_loss(data::TaskKind kind, std::size_t n_classes, std::span<const double> y,
                 std::span<const double> pred) {
  switch (kind) {
    case data::TaskKind::Regression: return metric_mae(y, pred);
    case data::TaskKind::Binary: return metric_logloss(y, pred);
    case data::TaskKind::Multiclass: return metric_multi_logloss(y, pred, n_classes);
  }
  return 0.0;
}

double task_metric(data::TaskKind kind, std::size_t n_classes, std::span<const double> y,
                   std::span<const double> pred) {
  switch (kind) {
    case data::TaskKind::Regression: return metric_mae(y, pred);
    case data::TaskKind::Binary: return metric_auc(y, pred);
    case data::TaskKind::Multiclass: return metric_accuracy(y, pred, n_classes);
  }
  return 0.0;
}

bool metric_higher_is_better(data::TaskKind kind) noexcept { return kind != data::TaskKind::Regression; }

const char* metric_name(data::TaskKind kind) noexcept {
  switch (kind) {
    case data::TaskKind::Regression: return "mae";
    case data::TaskKind::Binary: return "auc";
    case data::TaskKind::Multiclass: return "accuracy";
  }
  return "?";
}

// ---------------------------------------------------------------- cross-validation

std::vector<std::vector<double>> take_rows(const ColumnView& x, std::span<const std::size_t> rows) {
  std::vector<std::vector<double>> out(x.size());
  for (std::size_t j = 0; j < x.size(); ++j) out[j] = take(x[j], rows);
  return out;
}

std::vector<double> take(std::span<const double> v, std::span<const std::size_t> rows) {
  std::vector<double> out(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) out[i] = v[rows[i]];
  return out;
}

CvResult cross_val_loss(const GbtConfig& config, data::TaskKind kind, std::size_t n_classes, const ColumnView& x,
                        std::span<const double> y, const data::FoldPlan& folds, int workers) {
  const std::size_t n = y.size();
  if (folds.assignments.size() != n) throw_data("cross-validation: fold plan does not match row count");
  for (const auto& col : x) {
    if (col.size() != n) throw_data("cross-validation: column length does not match labels");
  }
  const std::size_t width = kind == data::TaskKind::Multiclass ? n_classes : 1;
  CvResult res;
  res.per_fold.assign(folds.k, 0.0);
  res.oof.assign(n * width, 0.0);
  res.fold_fingerprint = folds.fingerprint();
  parallel_for(folds.k, workers > 0 ? workers : default_workers(), [&](std::size_t f) {
    const auto train = folds.train_rows(f);
    const auto test = folds.test_rows(f);
    auto train_cols = take_rows(x, train);
    auto test_cols = take_rows(x, test);
    ColumnView tv(train_cols.begin(), train_cols.end()), sv(test_cols.begin(), test_cols.end());
    const auto ytrain = take(y, train);
    const auto ytest = take(y, test);
    const auto model = fit_task(config, kind, n_classes, tv, ytrain);
    const auto pred = model.predict(sv);
    res.per_fold[f] = task_loss(kind, n_classes, ytest, pred);
    for (std::size_t i = 0; i < test.size(); ++i) {
      for (std::size_t c = 0; c < width; ++c) res.oof[test[i] * width + c] = pred[i * width + c];
    }
  });
  double s = 0.0;
  for (double v : res.per_fold) s += v;
  res.mean_loss = s / static_cast<double>(folds.k);
  return res;
}

}  // namespace eafd::probe
