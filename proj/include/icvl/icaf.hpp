// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icvl/autograd.hpp"
#include "icvl/matrix_io.hpp"

namespace icvl::icaf {

/// Which tensors an optimizer may touch.
struct Trainable {
  bool proj_weight = true;
  bool proj_bias = true;
  bool wq = true;
  bool wk = true;
  bool wv = true;
};

/// Projection from the visual width d_v to the decoder width d_l, followed
/// by per-operand attention projections. With `strict` set the attention
/// projections are pinned to the identity and never trained, which reduces
/// fuse() to softmax(Q Kᵀ / √d_l) V on the raw operands.
struct IcafParams {
  Matrix proj_weight;  // d_v × d_l
  Matrix proj_bias;    // 1 × d_l
  Matrix wq;           // d_l × d_l
  Matrix wk;
  Matrix wv;
  std::size_t head_count = 1;
  bool strict = false;
  Trainable trainable;

  /// Gaussian projection (std 1/√d_v), zero bias, identity wq/wk/wv.
  static IcafParams init(std::size_t visual_dims, std::size_t llm_dims, std::size_t head_count,
                         std::uint64_t seed);

  std::size_t visual_dims() const noexcept { return proj_weight.rows(); }
  std::size_t llm_dims() const noexcept { return proj_weight.dims(); }

  /// Throws ConfigError/ShapeError/NumericError on a broken parameter set.
  void validate() const;

  /// Tensor names: "icaf.proj_weight", "icaf.proj_bias", "icaf.wq", ...
  NamedMatrices tensors() const;
  /// Subset of tensors() an optimizer may update.
  NamedMatrices trainable_tensors() const;
  void assign(const NamedMatrices& tensors);
};

struct FusionOutput {
  Matrix fused;              // query rows × d_l
  Matrix attention_weights;  // query rows × key rows (averaged over heads)
};

/// Stacks per-segment frame embeddings (each k × d_v) into T × d_v.
Matrix concat_segments(std::span<const Matrix> segments);

/// Concatenate, add the (segment, frame) positional encoding in d_v space,
/// then project to d_l.
Matrix prepare_visual(std::span<const Matrix> segments, const IcafParams& params);

/// Cross-attention with intention rows as queries and visual rows as keys
/// and values.
FusionOutput fuse(const Matrix& intention, const Matrix& visual, const IcafParams& params);

/// Row-wise concatenation, intention rows first.
Matrix fuse_concat(const Matrix& intention, const Matrix& visual);

/// Cross-attention with visual rows as queries and intention rows as keys
/// and values.
FusionOutput fuse_visual_query(const Matrix& intention, const Matrix& visual,
                               const IcafParams& params);

// Tape versions used by training and gradient checks.

struct IcafVars {
  ad::Var proj_weight;
  ad::Var proj_bias;
  ad::Var wq;
  ad::Var wk;
  ad::Var wv;
};

/// Adds the parameter tensors to `g`. Tensors flagged trainable (and not
/// pinned by strict mode) become parameter nodes when `with_grad` is set.
IcafVars bind(ad::Graph& g, const IcafParams& params, bool with_grad);

/// Name of each IcafVars member, in tensors() naming.
std::vector<std::pair<std::string, ad::Var>> named_vars(const IcafVars& vars);

/// `frames` is the T × d_v concatenation of `n_segments` segments.
ad::Var prepare_visual(ad::Graph& g, const Matrix& frames, std::size_t n_segments,
                       const IcafVars& vars);

ad::Var fuse(ad::Graph& g, ad::Var queries, ad::Var keys_values, const IcafVars& vars,
             std::size_t head_count, std::vector<ad::Var>* probabilities = nullptr);

/// Positional table for n_segments × frames_per_segment rows of width
/// `dims`, computed at the next multiple of 4 and truncated.
Matrix visual_positional_encoding(std::size_t n_segments, std::size_t frames_per_segment,
                                  std::size_t dims);

}  // namespace icvl::icaf
