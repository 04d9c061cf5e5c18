// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "icvl/autograd.hpp"
#include "icvl/matrix_io.hpp"

namespace icvl {

struct GradCheckReport {
  std::string parameter_name;
  double max_abs_err = 0.0;
  double max_rel_err = 0.0;
  bool passed = false;
};

/// Relative error per entry is |analytic − numeric| / max(|analytic|,
/// |numeric|, denom_floor). The floor keeps entries whose true gradient is
/// (near) zero from turning round-off into a relative error of 1.
struct GradCheckOptions {
  double epsilon = 1e-5;
  double tolerance = 1e-4;
  double denom_floor = 1e-6;
};

using ScalarFn = std::function<double(const NamedMatrices&)>;
using GradientFn = std::function<NamedMatrices(const NamedMatrices&)>;

/// Compares `gradient(params)` with central differences
/// (f(p+ε) − f(p−ε)) / 2ε for every entry of every named parameter.
/// Throws NumericError if f is non-finite at any probe.
std::vector<GradCheckReport> grad_check(const ScalarFn& f, const GradientFn& gradient,
                                        const NamedMatrices& params,
                                        const GradCheckOptions& options = {});

/// Builds a loss on a fresh Graph from parameter nodes; used to derive both
/// the scalar function and its tape gradient.
using GraphLossFn =
    std::function<ad::Var(ad::Graph&, const std::map<std::string, ad::Var>&)>;

/// Value and tape gradients of `loss` at `params`.
std::pair<double, NamedMatrices> evaluate_with_gradient(const GraphLossFn& loss,
                                                        const NamedMatrices& params);

std::vector<GradCheckReport> grad_check(const GraphLossFn& loss, const NamedMatrices& params,
                                        const GradCheckOptions& options = {});

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace icvl
