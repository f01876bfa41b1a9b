#pragma once

#include "eafd/dataset.hpp"
#include "eafd/fdsl/ast.hpp"

namespace eafd::testing {

/// Naive interpreter over the AST, one event at a time with string-valued
/// categories. Used as an oracle for the compiled evaluator.
double reference_evaluate(const fdsl::Expr& e, const data::EventSchema& schema, const data::EventSequence& seq);

/// True when both are missing or they agree to a relative 1e-9.
bool same_value(double a, double b, double rel = 1e-9);

}  // namespace eafd::testing
