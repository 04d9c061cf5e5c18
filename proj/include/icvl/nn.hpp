// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <string>

#include "icvl/autograd.hpp"

namespace icvl::nn {

/// Applies the named weight (and its bias, if the model has one) to x.
/// Lets encoder and decoder share block code while storing weights in
/// different layouts or wrapping them with adapters.
using Projector = std::function<ad::Var(ad::Graph&, ad::Var x, const std::string& name)>;

struct BlockSpec {
  std::size_t heads = 1;
  ad::AttentionMask mask;
};

/// Pre-norm transformer block:
///   h   = x + W_o · MHA(LN(x) W_q, LN(x) W_k, LN(x) W_v)
///   out = h + W_2 · relu(W_1 · LN(h))
/// Weight names are `<prefix>.wq`, `.wk`, `.wv`, `.wo`, `.w1`, `.w2`.
ad::Var transformer_block(ad::Graph& g, ad::Var x, const std::string& prefix,
                          const Projector& project, const BlockSpec& spec);

}  // namespace icvl::nn
