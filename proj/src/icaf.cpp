// SPDX-License-Identifier: Apache-2.0

#include "icvl/icaf.hpp"

#include <cmath>

#include "icvl/error.hpp"
#include "icvl/random.hpp"

namespace icvl::icaf {

namespace {

constexpr const char* kProjWeight = "icaf.proj_weight";
constexpr const char* kProjBias = "icaf.proj_bias";
constexpr const char* kWq = "icaf.wq";
constexpr const char* kWk = "icaf.wk";
constexpr const char* kWv = "icaf.wv";

void expect_square(const Matrix& m, std::size_t d, const char* name) {
  if (m.rows() != d || m.dims() != d) {
    throw ShapeError(std::string("icaf: ") + name + " must be " + std::to_string(d) + "x" +
                     std::to_string(d) + ", got " + m.shape_string());
  }
}

Matrix average_heads(ad::Graph& g, const std::vector<ad::Var>& probs) {
  Matrix out = g.value(probs.front());
  for (std::size_t h = 1; h < probs.size(); ++h) out = add(out, g.value(probs[h]));
  return scale(out, 1.0 / static_cast<double>(probs.size()));
}

FusionOutput attend(const Matrix& queries, const Matrix& keys_values, const IcafParams& params) {
  params.validate();
  const std::size_t d = params.llm_dims();
  if (queries.dims() != d || keys_values.dims() != d) {
    throw ShapeError("icaf: operands must have width d_l=" + std::to_string(d) + ", got " +
                     queries.shape_string() + " and " + keys_values.shape_string());
  }
  if (keys_values.rows() == 0) throw ShapeError("icaf: no key/value rows");
  ad::Graph g;
  const IcafVars vars = bind(g, params, false);
  std::vector<ad::Var> probs;
  const ad::Var out = fuse(g, g.constant(queries), g.constant(keys_values), vars,
                           params.head_count, &probs);
  FusionOutput result;
  result.fused = g.value(out);
  result.attention_weights = queries.rows() == 0 ? Matrix(0, keys_values.rows()) : average_heads(g, probs);
  ensure_finite(result.fused, "icaf.fuse");
  return result;
}

}  // namespace

IcafParams IcafParams::init(std::size_t visual_dims, std::size_t llm_dims, std::size_t head_count,
                            std::uint64_t seed) {
  if (visual_dims == 0 || llm_dims == 0) throw ConfigError("icaf: dims must be positive");
  Rng rng(derive_seed(seed, "icaf.proj"));
  IcafParams p;
  p.proj_weight = random_normal(visual_dims, llm_dims, 1.0 / std::sqrt(static_cast<double>(visual_dims)), rng);
  p.proj_bias = Matrix(1, llm_dims);
  p.wq = Matrix::identity(llm_dims);
  p.wk = Matrix::identity(llm_dims);
  p.wv = Matrix::identity(llm_dims);
  p.head_count = head_count;
  p.validate();
  return p;
}

void IcafParams::validate() const {
  const std::size_t d = llm_dims();
  if (proj_weight.rows() == 0 || d == 0) throw ShapeError("icaf: empty projection");
  if (head_count == 0 || d % head_count != 0) {
    throw ConfigError("icaf: d_l=" + std::to_string(d) + " not divisible by head_count=" +
                      std::to_string(head_count));
  }
  if (proj_bias.rows() != 1 || proj_bias.dims() != d) {
    throw ShapeError("icaf: proj_bias must be 1x" + std::to_string(d) + ", got " + proj_bias.shape_string());
  }
  expect_square(wq, d, "wq");
  expect_square(wk, d, "wk");
  expect_square(wv, d, "wv");
  for (const Matrix* m : {&proj_weight, &proj_bias, &wq, &wk, &wv}) ensure_finite(*m, "icaf params");
}

NamedMatrices IcafParams::tensors() const {
  return {{kProjWeight, proj_weight}, {kProjBias, proj_bias}, {kWq, wq}, {kWk, wk}, {kWv, wv}};
}

NamedMatrices IcafParams::trainable_tensors() const {
  NamedMatrices out;
  if (trainable.proj_weight) out.emplace(kProjWeight, proj_weight);
  if (trainable.proj_bias) out.emplace(kProjBias, proj_bias);
  if (!strict) {
    if (trainable.wq) out.emplace(kWq, wq);
    if (trainable.wk) out.emplace(kWk, wk);
    if (trainable.wv) out.emplace(kWv, wv);
  }
  return out;
}

void IcafParams::assign(const NamedMatrices& tensors) {
  auto take = [&](const char* name, Matrix& slot) {
    auto it = tensors.find(name);
    if (it == tensors.end()) return;
    if (it->second.rows() != slot.rows() || it->second.dims() != slot.dims()) {
      throw ShapeError(std::string("icaf: assigned tensor ") + name + " has shape " +
                       it->second.shape_string() + ", expected " + slot.shape_string());
    }
    slot = it->second;
  };
  take(kProjWeight, proj_weight);
  take(kProjBias, proj_bias);
  take(kWq, wq);
  take(kWk, wk);
  take(kWv, wv);
}

Matrix concat_segments(std::span<const Matrix> segments) {
  if (segments.empty()) throw ShapeError("icaf: no segments");
  const std::size_t k = segments.front().rows();
  const std::size_t dv = segments.front().dims();
  for (std::size_t i = 0; i < segments.size(); ++i) {
    if (segments[i].rows() != k || segments[i].dims() != dv) {
      throw ShapeError("icaf: ragged segments, segment 0 is " + segments.front().shape_string() +
                       " but segment " + std::to_string(i) + " is " + segments[i].shape_string());
    }
  }
  if (k == 0) throw ShapeError("icaf: segments have no frames");
  return concat_rows(segments);
}

Matrix visual_positional_encoding(std::size_t n_segments, std::size_t frames_per_segment,
                                  std::size_t dims) {
  const std::size_t padded = (dims + 3) / 4 * 4;
  const Matrix full = positional_encoding_2d(n_segments, frames_per_segment, padded);
  if (padded == dims) return full;
  Matrix out(full.rows(), dims);
  for (std::size_t r = 0; r < full.rows(); ++r)
    for (std::size_t c = 0; c < dims; ++c) out(r, c) = full(r, c);
  return out;
}

Matrix prepare_visual(std::span<const Matrix> segments, const IcafParams& params) {
  params.validate();
  const Matrix frames = concat_segments(segments);
  if (frames.dims() != params.visual_dims()) {
    throw ShapeError("icaf: segment width " + std::to_string(frames.dims()) + " != d_v " +
                     std::to_string(params.visual_dims()));
  }
  ad::Graph g;
  const IcafVars vars = bind(g, params, false);
  Matrix out = g.value(prepare_visual(g, frames, segments.size(), vars));
  ensure_finite(out, "icaf.prepare_visual");
  return out;
}

FusionOutput fuse(const Matrix& intention, const Matrix& visual, const IcafParams& params) {
  return attend(intention, visual, params);
}

Matrix fuse_concat(const Matrix& intention, const Matrix& visual) {
  if (intention.rows() > 0 && visual.rows() > 0 && intention.dims() != visual.dims()) {
    throw ShapeError("fuse_concat: width mismatch " + intention.shape_string() + " vs " +
                     visual.shape_string());
  }
  const Matrix parts[] = {intention, visual};
  return concat_rows(parts);
}

FusionOutput fuse_visual_query(const Matrix& intention, const Matrix& visual,
                               const IcafParams& params) {
  return attend(visual, intention, params);
}

IcafVars bind(ad::Graph& g, const IcafParams& params, bool with_grad) {
  auto node = [&](const Matrix& m, bool trainable) {
    return with_grad && trainable ? g.parameter(m) : g.constant(m);
  };
  IcafVars v;
  v.proj_weight = node(params.proj_weight, params.trainable.proj_weight);
  v.proj_bias = node(params.proj_bias, params.trainable.proj_bias);
  if (params.strict) {
    const Matrix eye = Matrix::identity(params.llm_dims());
    v.wq = g.constant(eye);
    v.wk = g.constant(eye);
    v.wv = g.constant(eye);
    return v;
  }
  v.wq = node(params.wq, params.trainable.wq);
  v.wk = node(params.wk, params.trainable.wk);
  v.wv = node(params.wv, params.trainable.wv);
  return v;
}

std::vector<std::pair<std::string, ad::Var>> named_vars(const IcafVars& vars) {
  return {{kProjWeight, vars.proj_weight},
          {kProjBias, vars.proj_bias},
          {kWq, vars.wq},
          {kWk, vars.wk},
          {kWv, vars.wv}};
}

ad::Var prepare_visual(ad::Graph& g, const Matrix& frames, std::size_t n_segments,
                       const IcafVars& vars) {
  if (n_segments == 0 || frames.rows() % n_segments != 0) {
    throw ShapeError("icaf: " + std::to_string(frames.rows()) + " frame rows do not split into " +
                     std::to_string(n_segments) + " segments");
  }
  const std::size_t k = frames.rows() / n_segments;
  const Matrix with_pe = add(frames, visual_positional_encoding(n_segments, k, frames.dims()));
  return g.add_row(g.matmul(g.constant(with_pe), vars.proj_weight), vars.proj_bias);
}

ad::Var fuse(ad::Graph& g, ad::Var queries, ad::Var keys_values, const IcafVars& vars,
             std::size_t head_count, std::vector<ad::Var>* probabilities) {
  const ad::Var q = g.matmul(queries, vars.wq);
  const ad::Var k = g.matmul(keys_values, vars.wk);
  const ad::Var v = g.matmul(keys_values, vars.wv);
  if (g.value(q).rows() == 0) return q;
  return ad::multi_head_attention(g, q, k, v, head_count, {}, probabilities);
}

}  // namespace icvl::icaf
