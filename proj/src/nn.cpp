// SPDX-License-Identifier: Apache-2.0

#include "icvl/nn.hpp"

namespace icvl::nn {

ad::Var transformer_block(ad::Graph& g, ad::Var x, const std::string& prefix,
                          const Projector& project, const BlockSpec& spec) {
  const ad::Var xn = g.layer_norm(x);
  const ad::Var q = project(g, xn, prefix + ".wq");
  const ad::Var k = project(g, xn, prefix + ".wk");
  const ad::Var v = project(g, xn, prefix + ".wv");
  const ad::Var att = ad::multi_head_attention(g, q, k, v, spec.heads, spec.mask);
  const ad::Var h = g.add(x, project(g, att, prefix + ".wo"));
  const ad::Var hn = g.layer_norm(h);
  const ad::Var ff = project(g, g.relu(project(g, hn, prefix + ".w1")), prefix + ".w2");
  return g.add(h, ff);
}

}  // namespace icvl::nn
