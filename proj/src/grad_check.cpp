// SPDX-License-Identifier: Apache-2.0

#include "icvl/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "icvl/error.hpp"

namespace icvl {

namespace {

double checked(const ScalarFn& f, const NamedMatrices& p) {
  const double v = f(p);
  if (!std::isfinite(v)) throw NumericError("grad_check: loss is not finite");
  return v;
}

}  // namespace

std::vector<GradCheckReport> grad_check(const ScalarFn& f, const GradientFn& gradient,
                                        const NamedMatrices& params,
                                        const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw ConfigError("grad_check: epsilon must be positive");
  checked(f, params);
  const NamedMatrices analytic = gradient(params);
  std::vector<GradCheckReport> reports;
  NamedMatrices probe = params;
  for (const auto& [name, value] : params) {
    const auto it = analytic.find(name);
    if (it == analytic.end()) throw DataError("grad_check: no analytic gradient for " + name);
    if (it->second.rows() != value.rows() || it->second.dims() != value.dims()) {
      throw ShapeError("grad_check: gradient shape mismatch for " + name);
    }
    GradCheckReport report;
    report.parameter_name = name;
    Matrix& slot = probe.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double original = value.data()[i];
      slot.data()[i] = original + options.epsilon;
      const double up = checked(f, probe);
      slot.data()[i] = original - options.epsilon;
      const double down = checked(f, probe);
      slot.data()[i] = original;
      const double numeric = (up - down) / (2.0 * options.epsilon);
      const double a = it->second.data()[i];
      const double abs_err = std::abs(a - numeric);
      const double denom = std::max({std::abs(a), std::abs(numeric), options.denom_floor});
      report.max_abs_err = std::max(report.max_abs_err, abs_err);
      report.max_rel_err = std::max(report.max_rel_err, abs_err / denom);
    }
    report.passed = report.max_rel_err <= options.tolerance;
    reports.push_back(report);
  }
  return reports;
}

std::pair<double, NamedMatrices> evaluate_with_gradient(const GraphLossFn& loss,
                                                        const NamedMatrices& params) {
  ad::Graph g;
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, m] : params) vars.emplace(name, g.parameter(m));
  const ad::Var out = loss(g, vars);
  g.backward(out);
  NamedMatrices grads;
  for (const auto& [name, v] : vars) grads.emplace(name, g.grad(v));
  return {g.value(out)(0, 0), std::move(grads)};
}

std::vector<GradCheckReport> grad_check(const GraphLossFn& loss, const NamedMatrices& params,
                                        const GradCheckOptions& options) {
  const ScalarFn f = [&](const NamedMatrices& p) {
    ad::Graph g;
    std::map<std::string, ad::Var> vars;
    for (const auto& [name, m] : p) vars.emplace(name, g.constant(m));
    return g.value(loss(g, vars))(0, 0);
  };
  const GradientFn grad = [&](const NamedMatrices& p) { return evaluate_with_gradient(loss, p).second; };
  return grad_check(f, grad, params, options);
}

bool all_passed(const std::vector<GradCheckReport>& reports) {
  return std::all_of(reports.begin(), reports.end(), [](const auto& r) { return r.passed; });
}

}  // namespace icvl
