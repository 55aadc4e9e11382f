#include "hsgnet/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace hsg {

double gradient_discrepancy(double analytic, double numeric) {
  const double abs_err = std::abs(analytic - numeric);
  const double scale = std::max(std::abs(analytic), std::abs(numeric));
  if (scale == 0.0) return 0.0;
  return std::min(abs_err, abs_err / scale);
}

namespace {

double evaluate(const std::function<Var()>& f) {
  Var out = f();
  if (out->value().size() != 1) {
    throw Error(fmt::format("gradcheck needs a scalar function, got shape {}", shape_str(out->value().shape())));
  }
  return out->value()[0];
}

}  // namespace

GradcheckReport gradcheck_leaves(const std::function<Var()>& f, const std::vector<Var>& leaves,
                                 const GradcheckOptions& opts) {
  for (const auto& leaf : leaves) {
    if (!leaf->is_leaf() || !leaf->requires_grad()) throw Error("gradcheck_leaves needs parameter leaves");
    leaf->zero_grad();
  }
  backward(f());

  GradcheckReport report;
  for (std::size_t in = 0; in < leaves.size(); ++in) {
    const Tensor analytic = leaves[in]->grad();
    Tensor errors(analytic.shape());
    Tensor& x = leaves[in]->mutable_value();
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double saved = x[i];
      x[i] = saved + opts.step;
      const double up = evaluate(f);
      x[i] = saved - opts.step;
      const double down = evaluate(f);
      x[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw Error(fmt::format("non-finite value while probing input {} element {}", in, i));
      }
      const double numeric = (up - down) / (2.0 * opts.step);
      const double err = gradient_discrepancy(analytic[i], numeric);
      errors[i] = err;
      if (err > report.max_error || (in == 0 && i == 0)) {
        report.max_error = std::max(report.max_error, err);
        report.worst_input = in;
        report.worst_index = i;
        report.worst_analytic = analytic[i];
        report.worst_numeric = numeric;
      }
    }
    report.element_errors.push_back(std::move(errors));
  }
  for (const auto& leaf : leaves) leaf->zero_grad();
  report.passed = report.max_error < opts.tol;
  return report;
}

GradcheckReport gradcheck(const ScalarGraphFn& f, const std::vector<Tensor>& inputs, const GradcheckOptions& opts) {
  std::vector<Var> leaves;
  leaves.reserve(inputs.size());
  for (const auto& t : inputs) leaves.push_back(parameter(t));
  return gradcheck_leaves([&] { return f(leaves); }, leaves, opts);
}

}  // namespace hsg
