// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "icvl/matrix.hpp"

namespace icvl::ad {

/// Handle to a node of a Graph.
struct Var {
  static constexpr std::size_t kInvalid = std::numeric_limits<std::size_t>::max();
  std::size_t id = kInvalid;
  bool valid() const noexcept { return id != kInvalid; }
};

/// With `causal` set, row r of the score matrix may attend to column c
/// only when c <= r + offset.
struct AttentionMask {
  bool causal = false;
  std::size_t offset = 0;
};

/// Single-use reverse-mode tape over matrices. Build the forward pass with
/// the op methods, call backward() once on a 1×1 node, then read grads.
class Graph {
 public:
  Var constant(Matrix value);
  Var parameter(Matrix value);

  const Matrix& value(Var v) const { return nodes_.at(v.id).value; }
  /// Gradient of the last backward() root w.r.t. v (zeros if unreached).
  const Matrix& grad(Var v);
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  void backward(Var root);

  Var matmul(Var a, Var b);
  /// a × bᵀ
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  /// Adds a 1×d row to every row of a.
  Var add_row(Var a, Var row);
  Var scale(Var a, double factor);
  Var relu(Var a);
  Var softmax_rows(Var a, AttentionMask mask = {});
  /// Per-row normalisation to zero mean and unit variance (no affine).
  Var layer_norm(Var a, double eps = 1e-5);
  Var slice_cols(Var a, std::size_t begin, std::size_t count);
  Var slice_rows(Var a, std::size_t begin, std::size_t count);
  Var concat_cols(std::span<const Var> parts);
  Var concat_rows(std::span<const Var> parts);
  /// Σ_r −log softmax(logits[r])[targets[r]] as a 1×1 node.
  Var nll_sum(Var logits, std::span<const std::size_t> targets);
  Var sum(Var a);
  Var sum_squares(Var a);
  Var mean_rows(Var a);

 private:
  using Backward = std::function<void(Graph&, const Matrix& upstream)>;

  struct Node {
    Matrix value;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool requires_grad, Backward backward);
  void accumulate(Var v, const Matrix& g);
  bool any_grad(std::initializer_list<Var> vars) const;

  std::vector<Node> nodes_;
};

/// Multi-head scaled dot-product attention: per head h,
/// softmax(Q_h K_hᵀ / √d_head) V_h, heads concatenated along columns.
/// When `probabilities` is non-null it receives one node per head.
Var multi_head_attention(Graph& g, Var q, Var k, Var v, std::size_t heads,
                         AttentionMask mask = {}, std::vector<Var>* probabilities = nullptr);

}  // namespace icvl::ad
