// SPDX-License-Identifier: Apache-2.0

#include "icvl/optim.hpp"

#include <cmath>

#include "icvl/error.hpp"

namespace icvl {

OptimizerKind parse_optimizer(const std::string& name) {
  if (name == "gd" || name == "sgd") return OptimizerKind::kGradientDescent;
  if (name == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + name + "' (expected gd|adam)");
}

std::string to_string(OptimizerKind kind) {
  return kind == OptimizerKind::kAdam ? "adam" : "gd";
}

Optimizer::Optimizer(OptimizerKind kind, double lr, double beta1, double beta2, double eps)
    : kind_(kind), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
}

void Optimizer::step(NamedMatrices& params, const NamedMatrices& grads) {
  ++step_count_;
  for (const auto& [name, g] : grads) {
    auto it = params.find(name);
    if (it == params.end()) throw DataError("optimizer: unknown tensor " + name);
    Matrix& p = it->second;
    if (p.size() != g.size()) throw ShapeError("optimizer: gradient shape mismatch for " + name);
    if (lr_ == 0.0) continue;
    auto pd = p.data();
    auto gd = g.data();
    if (kind_ == OptimizerKind::kGradientDescent) {
      for (std::size_t i = 0; i < pd.size(); ++i) pd[i] -= lr_ * gd[i];
      continue;
    }
    auto [mit, fresh_m] = m_.try_emplace(name, p.rows(), p.dims());
    auto [vit, fresh_v] = v_.try_emplace(name, p.rows(), p.dims());
    auto md = mit->second.data();
    auto vd = vit->second.data();
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(step_count_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(step_count_));
    for (std::size_t i = 0; i < pd.size(); ++i) {
      md[i] = beta1_ * md[i] + (1.0 - beta1_) * gd[i];
      vd[i] = beta2_ * vd[i] + (1.0 - beta2_) * gd[i] * gd[i];
      pd[i] -= lr_ * (md[i] / c1) / (std::sqrt(vd[i] / c2) + eps_);
    }
  }
}

}  // namespace icvl
