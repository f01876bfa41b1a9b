#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "eafd/dataset.hpp"
#include "eafd/fdsl/ast.hpp"

namespace eafd::fdsl {

enum class DiagCode { Lexical, Syntax, Type, UnknownField, UnknownAggregator };
std::string_view to_string(DiagCode code);

inline constexpr std::size_t kNoOffset = static_cast<std::size_t>(-1);

struct Diagnostic {
  DiagCode code = DiagCode::Syntax;
  std::size_t offset = kNoOffset;  // byte offset into the source text
  std::vector<std::string> expected;
  std::string message;

  /// One line, suitable for verbatim inclusion in a repair prompt.
  std::string render() const;
};

class DslError : public std::runtime_error {
 public:
  explicit DslError(Diagnostic d) : std::runtime_error(d.render()), diag_(std::move(d)) {}
  const Diagnostic& diagnostic() const noexcept { return diag_; }

 private:
  Diagnostic diag_;
};

/// Parses without a schema: lexical, syntactic, unknown-aggregator and
/// parameter-range errors are reported.
Expr parse(std::string_view text);

/// Parses and type-checks field references against `schema` in one pass so
/// that type and unknown-field diagnostics carry byte offsets.
Expr parse(std::string_view text, const data::EventSchema& schema);

/// Type-checks an AST (diagnostics carry no offset).
void typecheck(const Expr& e, const data::EventSchema& schema);

}  // namespace eafd::fdsl
