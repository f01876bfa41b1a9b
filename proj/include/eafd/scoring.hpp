#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eafd/core/matrix.hpp"
#include "eafd/dataset.hpp"
#include "eafd/fdsl/ast.hpp"
#include "eafd/probe.hpp"

namespace eafd::scoring {

enum class Verdict { Complementary, Aligned, Uninformative };
const char* to_string(Verdict v) noexcept;
Verdict verdict_from_string(const std::string& s);

struct ScoringConfig {
  double tau_a = 0.5;
  double alpha = 0.05;
  std::size_t folds = 5;
  std::uint64_t seed = 0;
  /// Minimum non-missing rows for a reconstruction score.
  std::size_t min_rows = 50;
  probe::GbtConfig probe;
  int workers = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static ScoringConfig from_json(const nlohmann::json& j);
};

struct CandidateRecord {
  std::string name;
  std::string dsl;  // canonical text
  fdsl::Category category = fdsl::Category::Activity;
  int iteration = 0;
  std::optional<double> alignment_fe;
  std::optional<double> reconstruction_ef;
  double utility = 0.0;
  std::vector<double> utility_per_fold;
  double p_value = 1.0;
  Verdict verdict = Verdict::Uninformative;
  std::optional<int> importance_rank;

  nlohmann::json to_json() const;
  static CandidateRecord from_json(const nlohmann::json& j);
};

/// Mean over embedding dimensions of the out-of-fold R² of a probe predicting
/// that dimension from the candidate columns. Constant dimensions are skipped;
/// 0 when every dimension is constant.
double alignment_fe(const ColumnView& candidate, const Matrix& embeddings, const data::FoldPlan& folds,
                    const probe::GbtConfig& config, int workers = 0);

/// Out-of-fold R² of a probe predicting the feature from the embedding, over
/// rows where the feature is present. nullopt when fewer than `min_rows`
/// rows are present.
std::optional<double> reconstruction_ef(std::span<const double> feature, const Matrix& embeddings,
                                        const data::FoldPlan& folds, const probe::GbtConfig& config,
                                        std::size_t min_rows = 50, int workers = 0);

/// Embedding columns followed by the given extra columns.
ColumnView design(const Matrix& embeddings, std::vector<std::vector<double>>& storage,
                  std::span<const std::span<const double>> extra = {});

/// One-sided paired t-test p-value for mean(diffs) > 0 with k-1 degrees of
/// freedom. Zero spread gives 0 when the mean is positive, else 1.
double paired_t_pvalue(std::span<const double> diffs);

struct UtilityResult {
  double utility = 0.0;
  std::vector<double> per_fold;
  double p_value = 1.0;
  double base_loss = 0.0;
  double with_loss = 0.0;
  std::uint64_t fold_fingerprint = 0;
};

/// Per-fold loss of [z, accepted] minus loss of [z, accepted, candidate].
/// `baseline` may carry a precomputed CV result for [z, accepted] on the
/// same folds; it is checked against the fold fingerprint.
UtilityResult utility(const ColumnView& candidate, const ColumnView& accepted, const Matrix& embeddings,
                      const data::Target& target, const data::FoldPlan& folds, const probe::GbtConfig& config,
                      const probe::CvResult* baseline = nullptr, int workers = 0);

probe::CvResult baseline_cv(const ColumnView& accepted, const Matrix& embeddings, const data::Target& target,
                            const data::FoldPlan& folds, const probe::GbtConfig& config, int workers = 0);

/// complementary iff U > 0 and p <= alpha; else aligned iff reconstruction
/// >= tau_a; else uninformative. An undefined reconstruction is not aligned.
Verdict categorize(std::optional<double> reconstruction, double utility, double p_value, const ScoringConfig& config);

struct ImportanceEntry {
  std::size_t column = 0;
  double importance = 0.0;
  int rank = 0;  // 1-based
};

/// Split-gain importance of a fitted model, normalized to sum 1, ranked
/// descending with ties by column index.
std::vector<ImportanceEntry> feature_importance(const probe::TaskModel& model);

struct CatalogEntry {
  std::string name;
  std::string dsl;
  fdsl::Category category = fdsl::Category::Activity;
  std::vector<double> values;
};

struct GroupReport {
  std::map<fdsl::Category, double> group_mean;
  std::map<fdsl::Category, std::size_t> group_size;
  std::vector<std::pair<std::string, std::optional<double>>> per_feature;  // (dsl, score)
  std::vector<std::string> notes;
  nlohmann::json to_json() const;
};

GroupReport group_report(std::span<const CatalogEntry> catalog, const Matrix& embeddings, const data::FoldPlan& folds,
                         const probe::GbtConfig& config, std::size_t min_rows = 50, int workers = 0);

struct TargetUplift {
  std::string target;
  UtilityResult result;
  double embedding_only_loss = 0.0;
  double normalized = 0.0;
  bool significant = false;
};

struct MultiTargetResult {
  std::vector<TargetUplift> per_target;
  double aggregate = 0.0;
  bool complementary = false;
  nlohmann::json to_json() const;
};

/// Per-target utility divided by that target's embeddings-only CV loss,
/// averaged. Each target uses its own fold plan.
MultiTargetResult multi_target_utility(const ColumnView& candidate, const ColumnView& accepted,
                                       const Matrix& embeddings, std::span<const data::Target> targets,
                                       std::span<const data::FoldPlan> folds, const ScoringConfig& config);

}  // namespace eafd::scoring
