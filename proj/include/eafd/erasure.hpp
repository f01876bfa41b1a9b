#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "eafd/core/matrix.hpp"
#include "eafd/dataset.hpp"
#include "eafd/fdsl/ast.hpp"
#include "eafd/probe.hpp"
#include "eafd/scoring.hpp"

namespace eafd::erasure {

struct HsicConfig {
  /// RBF bandwidths; median heuristic when unset.
  std::optional<double> bandwidth_x;
  std::optional<double> bandwidth_s;
  /// Minibatch size during eraser optimization.
  std::size_t minibatch = 256;
  /// Full-batch estimates use at most this many seeded-subsampled rows.
  std::size_t max_rows = 2048;
  std::uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static HsicConfig from_json(const nlohmann::json& j);
};

/// Median pairwise Euclidean distance over min(n, 1024) seeded-subsampled
/// rows. A zero median falls back to 1.0 with a warning.
double median_bandwidth(const Matrix& x, std::uint64_t seed, std::vector<std::string>* warnings = nullptr);

/// k(a, b) = exp(-|a - b|^2 / (2 bw^2)).
Matrix rbf_gram(const Matrix& x, double bandwidth);

/// Biased estimator (n-1)^-2 tr(K H L H) from Gram matrices.
double hsic_gram(const Matrix& k, const Matrix& l);

/// Biased RBF HSIC over all rows without storing Gram matrices. Symmetric
/// in its arguments bit for bit.
double rbf_hsic(const Matrix& x, const Matrix& s, double bandwidth_x, double bandwidth_s, int workers = 0);

/// rbf_hsic with the configured bandwidth policy and row cap. Needs n >= 2.
double hsic(const Matrix& x, const Matrix& s, const HsicConfig& config, std::vector<std::string>* warnings = nullptr,
            int workers = 0);

/// HSIC values of `l` against `k` with rows of `l` permuted, one per permutation.
std::vector<double> permutation_null(const Matrix& k, const Matrix& l, std::size_t n_permutations, std::uint64_t seed);

struct EraserConfig {
  double lambda = 1000.0;
  int steps = 400;
  double learning_rate = 0.1;
  /// Step size at step t is learning_rate / (1 + decay * t).
  double decay = 0.01;
  HsicConfig hsic;

  void validate() const;
  nlohmann::json to_json() const;
  static EraserConfig from_json(const nlohmann::json& j);
};

struct Objective {
  double fidelity = 0.0;
  double hsic = 0.0;
  double total = 0.0;
  Matrix gradient;  // d × d
};

/// fidelity |ZW - Z|^2 / (n d) over all rows plus lambda HSIC(Z_b W, S_b)
/// over `rows`, with its analytic gradient in W. Bandwidths are fixed.
Objective eraser_objective(const Matrix& z, const Matrix& s, const Matrix& w, double lambda, double bandwidth_x,
                           double bandwidth_s, std::span<const std::size_t> rows);

struct TraceRow {
  int step = 0;
  double fidelity = 0.0;
  double hsic = 0.0;
  double total = 0.0;
  double learning_rate = 0.0;
};

struct EraserResult {
  Matrix w;
  Matrix erased;
  std::vector<TraceRow> trace;
  bool diverged = false;
  double bandwidth_x = 1.0;
  double bandwidth_s = 1.0;
  double hsic_before = 0.0;
  double hsic_after = 0.0;
  std::vector<std::string> warnings;

  std::string trace_csv() const;
};

Matrix multiply(const Matrix& a, const Matrix& b);

/// Gradient descent on W from the identity. Stops early and sets `diverged`
/// when the objective exceeds ten times its initial value.
EraserResult fit_eraser(const Matrix& z, const Matrix& s, const EraserConfig& config, int workers = 0);

/// Catalog columns of one group, standardized, missing cells set to 0.
Matrix sensitive_columns(std::span<const scoring::CatalogEntry> catalog, fdsl::Category group);

struct GroupDelta {
  fdsl::Category group = fdsl::Category::Amount;
  double before = 0.0;
  double after = 0.0;
  double delta_pp = 0.0;  // percentage points
  std::size_t n_features = 0;
};

struct ErasureReport {
  fdsl::Category erased = fdsl::Category::Amount;
  std::vector<GroupDelta> groups;
  std::vector<std::pair<std::string, std::pair<std::optional<double>, std::optional<double>>>> per_feature;
  std::string metric;
  double metric_before = 0.0;
  double metric_after = 0.0;
  double metric_delta_pp = 0.0;
  std::vector<std::string> notes;

  const GroupDelta* group(fdsl::Category c) const;
  nlohmann::json to_json() const;
};

/// Group reconstruction R² before and after erasure, and the downstream
/// out-of-fold task metric on each embedding.
ErasureReport erasure_report(const Matrix& before, const Matrix& after, std::span<const scoring::CatalogEntry> catalog,
                             fdsl::Category erased, const data::Target& target, const data::FoldPlan& recon_folds,
                             const data::FoldPlan& target_folds, const probe::GbtConfig& config,
                             std::size_t min_rows = 50, int workers = 0);

}  // namespace eafd::erasure
