// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cmath>

#include "icvl/autograd.hpp"
#include "icvl/error.hpp"
#include "icvl/grad_check.hpp"
#include "icvl/nn.hpp"
#include "icvl/optim.hpp"
#include "icvl/random.hpp"

using namespace icvl;

namespace {

NamedMatrices random_params(std::initializer_list<std::tuple<const char*, std::size_t, std::size_t>> shapes,
                            std::uint64_t seed) {
  Rng rng(seed);
  NamedMatrices out;
  for (const auto& [name, r, c] : shapes) out.emplace(name, random_normal(r, c, 1.0, rng));
  return out;
}

void expect_passes(const GraphLossFn& loss, const NamedMatrices& params) {
  for (const auto& r : grad_check(loss, params)) {
    EXPECT_TRUE(r.passed) << r.parameter_name << " rel " << r.max_rel_err << " abs " << r.max_abs_err;
  }
}

}  // namespace

TEST(GradCheck, SumOfParamsHasUnitGradient) {
  const NamedMatrices p = random_params({{"a", 3, 4}, {"b", 2, 2}}, 1);
  const ScalarFn f = [](const NamedMatrices& m) {
    double s = 0;
    for (const auto& [_, x] : m)
      for (double v : x.data()) s += v;
    return s;
  };
  const GradientFn grad = [](const NamedMatrices& m) {
    NamedMatrices g;
    for (const auto& [n, x] : m) g.emplace(n, Matrix(x.rows(), x.dims(), 1.0));
    return g;
  };
  for (const auto& r : grad_check(f, grad, p)) {
    EXPECT_TRUE(r.passed);
    EXPECT_LE(r.max_abs_err, 1e-10);
  }
}

TEST(GradCheck, QuadraticHasGradientP) {
  const NamedMatrices p = random_params({{"w", 4, 3}}, 2);
  const GraphLossFn loss = [](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
    return g.scale(g.sum_squares(v.at("w")), 0.5);
  };
  const auto [value, grads] = evaluate_with_gradient(loss, p);
  EXPECT_LE(max_abs_diff(grads.at("w"), p.at("w")), 1e-15);
  expect_passes(loss, p);
}

TEST(GradCheck, WrongGradientFails) {
  const NamedMatrices p = random_params({{"w", 2, 2}}, 3);
  const ScalarFn f = [](const NamedMatrices& m) {
    double s = 0;
    for (double v : m.at("w").data()) s += v * v;
    return s;
  };
  const GradientFn grad = [](const NamedMatrices& m) { return NamedMatrices{{"w", m.at("w")}}; };
  EXPECT_FALSE(all_passed(grad_check(f, grad, p)));
}

TEST(GradCheck, NonFiniteLossThrows) {
  const NamedMatrices p = {{"w", Matrix(1, 1, {1.0})}};
  const ScalarFn f = [](const NamedMatrices&) { return std::nan(""); };
  const GradientFn grad = [](const NamedMatrices& m) { return m; };
  EXPECT_THROW((void)grad_check(f, grad, p), NumericError);
}

TEST(Autograd, ElementaryOps) {
  const NamedMatrices p = random_params({{"a", 3, 4}, {"b", 4, 5}, {"c", 5, 4}, {"r", 1, 5}}, 4);
  expect_passes(
      [](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
        ad::Var x = g.matmul(v.at("a"), v.at("b"));
        x = g.add_row(x, v.at("r"));
        x = g.relu(g.add(x, g.matmul_nt(v.at("a"), v.at("c"))));
        x = g.layer_norm(x);
        x = g.softmax_rows(g.scale(x, 1.7));
        const ad::Var left = g.slice_cols(x, 1, 3);
        const ad::Var top = g.slice_rows(x, 0, 2);
        const ad::Var parts[] = {left, g.slice_cols(x, 0, 1)};
        const ad::Var rows[] = {top, g.mean_rows(x)};
        return g.add(g.sum_squares(g.concat_cols(parts)), g.sum(g.concat_rows(rows)));
      },
      p);
}

TEST(Autograd, NllSumAndCausalAttention) {
  const NamedMatrices p = random_params({{"q", 5, 8}, {"k", 5, 8}, {"v", 5, 8}}, 5);
  const std::vector<std::size_t> targets = {0, 7, 3, 3, 1};
  expect_passes(
      [&](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
        const ad::Var att =
            ad::multi_head_attention(g, v.at("q"), v.at("k"), v.at("v"), 2, {true, 0});
        return g.nll_sum(att, targets);
      },
      p);
}

TEST(Autograd, NllSumMatchesFormula) {
  Rng rng(6);
  const Matrix logits = random_normal(6, 5, 1.5, rng);
  const std::vector<std::size_t> t = {4, 0, 2, 2, 1, 3};
  ad::Graph g;
  const double got = g.value(g.nll_sum(g.constant(logits), t))(0, 0);
  double ref = 0.0;
  for (std::size_t r = 0; r < 6; ++r) {
    double z = 0.0;
    for (std::size_t c = 0; c < 5; ++c) z += std::exp(logits(r, c));
    ref -= std::log(std::exp(logits(r, t[r])) / z);
  }
  EXPECT_NEAR(got, ref, 1e-12);
}

TEST(Autograd, CausalMaskHidesFuture) {
  Rng rng(7);
  Matrix q = random_normal(4, 4, 1.0, rng);
  Matrix k = random_normal(4, 4, 1.0, rng);
  Matrix v = random_normal(4, 4, 1.0, rng);
  auto run = [&](const Matrix& vv) {
    ad::Graph g;
    return g.value(ad::multi_head_attention(g, g.constant(q), g.constant(k), g.constant(vv), 1, {true, 0}));
  };
  const Matrix base = run(v);
  Matrix bumped = v;
  bumped(3, 0) += 5.0;
  const Matrix after = run(bumped);
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t c = 0; c < 4; ++c) EXPECT_EQ(base(r, c), after(r, c));
  EXPECT_NE(base(3, 0), after(3, 0));
}

TEST(Autograd, TransformerBlockGradients) {
  const NamedMatrices p = random_params(
      {{"x", 5, 8}, {"b.wq", 8, 8}, {"b.wk", 8, 8}, {"b.wv", 8, 8}, {"b.wo", 8, 8}, {"b.w1", 8, 16}, {"b.w2", 16, 8}},
      8);
  expect_passes(
      [](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
        const nn::Projector proj = [&v](ad::Graph& gg, ad::Var x, const std::string& name) {
          return gg.matmul(x, v.at(name));
        };
        return g.sum_squares(nn::transformer_block(g, v.at("x"), "b", proj, {2, {true, 0}}));
      },
      p);
}

TEST(Optimizer, ZeroLrLeavesParamsAndAdamMoves) {
  NamedMatrices p = random_params({{"w", 3, 3}}, 9);
  const NamedMatrices before = p;
  const NamedMatrices g = random_params({{"w", 3, 3}}, 10);
  Optimizer(OptimizerKind::kGradientDescent, 0.0).step(p, g);
  EXPECT_EQ(p, before);

  Optimizer gd(OptimizerKind::kGradientDescent, 0.5);
  gd.step(p, g);
  EXPECT_LE(max_abs_diff(p.at("w"), subtract(before.at("w"), scale(g.at("w"), 0.5))), 1e-15);

  // First Adam step moves every coordinate by ~lr against the gradient sign.
  NamedMatrices q = before;
  Optimizer adam(OptimizerKind::kAdam, 0.01);
  adam.step(q, g);
  for (std::size_t i = 0; i < q.at("w").size(); ++i) {
    const double delta = q.at("w").data()[i] - before.at("w").data()[i];
    EXPECT_NEAR(delta, g.at("w").data()[i] > 0 ? -0.01 : 0.01, 1e-6);
  }
  EXPECT_THROW(Optimizer(OptimizerKind::kAdam, -1.0), ConfigError);
  EXPECT_EQ(parse_optimizer("adam"), OptimizerKind::kAdam);
  EXPECT_THROW((void)parse_optimizer("rmsprop"), ConfigError);
}
