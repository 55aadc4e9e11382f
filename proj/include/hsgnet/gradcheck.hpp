#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hsgnet/autodiff.hpp"

namespace hsg {

struct GradcheckOptions {
  double step = 1e-5;
  double tol = 1e-5;

  bool operator==(const GradcheckOptions&) const = default;
};

struct GradcheckReport {
  /// Per input, one error per element: min(absolute, relative) discrepancy
  /// between the analytic and the central-difference derivative.
  std::vector<Tensor> element_errors;
  double max_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool passed = false;
};

/// Builds a scalar-valued graph from leaf variables. Called once for the
/// analytic pass and twice per probed element; must be deterministic.
using ScalarGraphFn = std::function<Var(const std::vector<Var>& inputs)>;

/// Compares reverse-mode gradients of `f` against central differences
/// (f(x+h) - f(x-h)) / 2h for every element of every input.
/// Throws `Error` naming the element if a probe produces a non-finite value.
GradcheckReport gradcheck(const ScalarGraphFn& f, const std::vector<Tensor>& inputs, const GradcheckOptions& opts = {});

/// Same check against existing parameter leaves that `f` closes over, such
/// as a model's weights. Leaf gradients are cleared before and after.
GradcheckReport gradcheck_leaves(const std::function<Var()>& f, const std::vector<Var>& leaves,
                                 const GradcheckOptions& opts = {});

/// min(|a - n|, |a - n| / max(|a|, |n|)); 0 when both vanish.
double gradient_discrepancy(double analytic, double numeric);

}  // namespace hsg
