#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include "eafd/core/matrix.hpp"
#include "eafd/dataset.hpp"
#include "eafd/fdsl/ast.hpp"

namespace eafd::fdsl {

/// A type-checked feature bound to one schema. Immutable and shareable
/// across threads.
class CompiledFeature {
 public:
  const std::string& canonical() const noexcept { return canonical_; }
  Category category() const noexcept { return category_; }
  const Expr& expr() const noexcept { return expr_; }

  /// Value of the feature on one sequence; NaN means missing.
  double evaluate(const data::EventSequence& seq) const;

  struct Program;

 private:
  friend CompiledFeature compile(const Expr&, const data::EventSchema&, std::optional<Category>);
  std::string canonical_;
  Category category_ = Category::Activity;
  Expr expr_;
  std::shared_ptr<const Program> program_;
};

/// Type-checks and lowers `e`. Throws DslError on type errors. A category
/// override replaces the rule-based tag.
CompiledFeature compile(const Expr& e, const data::EventSchema& schema,
                        std::optional<Category> category = std::nullopt);
CompiledFeature compile(std::string_view text, const data::EventSchema& schema,
                        std::optional<Category> category = std::nullopt);

inline double evaluate_feature(const CompiledFeature& f, const data::EventSequence& seq) {
  return f.evaluate(seq);
}

/// n_sequences × n_features with NaN for missing cells. Column names are
/// canonical texts.
struct FeatureMatrix {
  ColumnTable table;
  std::vector<Category> categories;

  std::size_t rows() const noexcept { return table.rows; }
  std::size_t cols() const noexcept { return table.cols(); }
  bool missing(std::size_t r, std::size_t c) const { return table.is_missing(r, c); }
  std::span<const double> column(std::size_t c) const { return table.columns[c]; }
  std::vector<std::uint8_t> missing_mask(std::size_t c) const;
};

/// Parallel over sequences; output does not depend on the worker count.
FeatureMatrix evaluate_batch(std::span<const CompiledFeature> features, const data::Dataset& dataset,
                             int workers = 0);

// ---------------------------------------------------------------- feature lists

/// One entry of a JSON feature list `[{name, dsl, category?}, ...]`.
struct FeatureSpec {
  std::string name;
  std::string dsl;
  std::optional<Category> category;
};

std::vector<FeatureSpec> parse_feature_list(const std::string& json_text);
std::string feature_list_json(std::span<const FeatureSpec> specs);
std::vector<CompiledFeature> compile_all(std::span<const FeatureSpec> specs, const data::EventSchema& schema);

}  // namespace eafd::fdsl
