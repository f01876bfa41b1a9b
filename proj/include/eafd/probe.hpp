#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "json.hpp"

#include "eafd/core/matrix.hpp"
#include "eafd/dataset.hpp"

namespace eafd::probe {

enum class Loss { Squared, Logistic };

struct GbtConfig {
  int n_trees = 100;
  int max_depth = 3;
  double learning_rate = 0.1;
  int min_samples_leaf = 20;
  Loss loss = Loss::Squared;
  std::uint64_t seed = 0;
  double feature_subsample = 1.0;
  /// L2 penalty on leaf values in the Newton step.
  double l2 = 1.0;

  void validate() const;
  nlohmann::json to_json() const;
  static GbtConfig from_json(const nlohmann::json& j);
};

struct TreeNode {
  int feature = -1;  // -1 marks a leaf
  double threshold = 0.0;
  bool missing_left = true;
  int left = -1;
  int right = -1;
  double value = 0.0;  // leaf output, learning rate already applied
  double gain = 0.0;
  std::size_t cover = 0;
};

struct Tree {
  std::vector<TreeNode> nodes;
  double predict(const ColumnView& x, std::size_t row) const;
};

/// One boosted ensemble on one raw score.
class GbtModel {
 public:
  Loss loss = Loss::Squared;
  double base_score = 0.0;
  std::size_t n_features = 0;
  std::vector<Tree> trees;

  /// Raw additive score (log-odds for logistic loss).
  std::vector<double> predict_raw(const ColumnView& x) const;
  /// Raw score for regression, probability for logistic loss.
  std::vector<double> predict(const ColumnView& x) const;
  /// Summed split gain per input column.
  std::vector<double> split_gain() const;

  nlohmann::json to_json() const;
  static GbtModel from_json(const nlohmann::json& j);
  bool operator==(const GbtModel& other) const { return to_json() == other.to_json(); }
};

struct FitStats {
  /// Training loss after the base score and after every round.
  std::vector<double> train_loss;
  /// Rounds whose step had to be shortened to keep the loss from rising.
  std::size_t backtracked_rounds = 0;
};

/// Gradient boosting with exact greedy splits. Equal gains keep the earlier
/// candidate in (feature index, threshold) order, so an exact copy of an
/// earlier column is never used.
GbtModel fit(const GbtConfig& config, const ColumnView& x, std::span<const double> y, FitStats* stats = nullptr);

/// Process-wide count of fitted rounds whose training loss rose. Stays zero
/// unless the backtracking safeguard fails.
std::size_t monotonicity_violations() noexcept;

// ---------------------------------------------------------------- task models

/// Regression (squared loss), binary (logistic) or multiclass (one-vs-rest
/// logistic, softmax over per-class scores).
struct TaskModel {
  data::TaskKind kind = data::TaskKind::Regression;
  std::size_t n_classes = 0;
  std::vector<GbtModel> models;

  /// Regression: value; binary: P(y=1); multiclass: n×K row-major probabilities.
  std::vector<double> predict(const ColumnView& x) const;
  /// Split gain per column normalized to sum 1 (all zero when no splits).
  std::vector<double> importance() const;

  nlohmann::json to_json() const;
  static TaskModel from_json(const nlohmann::json& j);
};

TaskModel fit_task(const GbtConfig& config, data::TaskKind kind, std::size_t n_classes, const ColumnView& x,
                   std::span<const double> y);

/// Logloss (binary), multiclass logloss, or MAE (regression) of predictions
/// in the layout returned by TaskModel::predict.
double task_loss(data::TaskKind kind, std::size_t n_classes, std::span<const double> y,
                 std::span<const double> pred);

/// Headline validation metric: AUC, accuracy or MAE.
double task_metric(data::TaskKind kind, std::size_t n_classes, std::span<const double> y,
                   std::span<const double> pred);
/// True when larger values of task_metric are better.
bool metric_higher_is_better(data::TaskKind kind) noexcept;
const char* metric_name(data::TaskKind kind) noexcept;

// ---------------------------------------------------------------- metrics

double metric_r2(std::span<const double> y_true, std::span<const double> y_pred);
double metric_auc(std::span<const double> y_true, std::span<const double> scores);
double metric_mae(std::span<const double> y_true, std::span<const double> y_pred);
double metric_logloss(std::span<const double> y_true, std::span<const double> prob);
double metric_multi_logloss(std::span<const double> y_true, std::span<const double> probs, std::size_t n_classes);
/// Binary: threshold 0.5 on probabilities; multiclass: argmax (lowest class on ties).
double metric_accuracy(std::span<const double> y_true, std::span<const double> pred, std::size_t n_classes);

struct EvalMetrics {
  std::optional<double> r2, auc, accuracy, mae, logloss;
  nlohmann::json to_json() const;
};

EvalMetrics evaluate_metrics(data::TaskKind kind, std::size_t n_classes, std::span<const double> y,
                             std::span<const double> pred);

// ---------------------------------------------------------------- cross-validation

/// Copies the given rows of each column.
std::vector<std::vector<double>> take_rows(const ColumnView& x, std::span<const std::size_t> rows);
std::vector<double> take(std::span<const double> v, std::span<const std::size_t> rows);

struct CvResult {
  double mean_loss = 0.0;
  std::vector<double> per_fold;
  /// Out-of-fold predictions in TaskModel::predict layout.
  std::vector<double> oof;
  std::uint64_t fold_fingerprint = 0;
};

/// Folds are fitted in parallel; results do not depend on the worker count.
CvResult cross_val_loss(const GbtConfig& config, data::TaskKind kind, std::size_t n_classes, const ColumnView& x,
                        std::span<const double> y, const data::FoldPlan& folds, int workers = 0);

}  // namespace eafd::probe
