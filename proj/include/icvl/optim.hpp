// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <string>

#include "icvl/matrix_io.hpp"

namespace icvl {

enum class OptimizerKind { kGradientDescent, kAdam };

OptimizerKind parse_optimizer(const std::string& name);
std::string to_string(OptimizerKind kind);

/// Updates the tensors of `params` that have an entry in `grads`; other
/// tensors are left untouched. Plain descent uses p -= lr·g; Adam uses the
/// bias-corrected moment estimates.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double lr, double beta1 = 0.9, double beta2 = 0.999,
            double eps = 1e-8);

  void step(NamedMatrices& params, const NamedMatrices& grads);

  double lr() const noexcept { return lr_; }
  OptimizerKind kind() const noexcept { return kind_; }

 private:
  OptimizerKind kind_;
  double lr_;
  double beta1_;
  double beta2_;
  double eps_;
  long step_count_ = 0;
  NamedMatrices m_;
  NamedMatrices v_;
};

}  // namespace icvl
