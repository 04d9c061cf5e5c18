// SPDX-License-Identifier: Apache-2.0

#include "icvl/autograd.hpp"

#include <algorithm>
#include <cmath>

#include "icvl/error.hpp"

namespace icvl::ad {

Var Graph::push(Matrix value, bool requires_grad, Backward backward) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = requires_grad;
  if (requires_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var{nodes_.size() - 1};
}

Var Graph::constant(Matrix value) { return push(std::move(value), false, nullptr); }

Var Graph::parameter(Matrix value) { return push(std::move(value), true, nullptr); }

bool Graph::any_grad(std::initializer_list<Var> vars) const {
  return std::any_of(vars.begin(), vars.end(), [&](Var v) { return nodes_.at(v.id).requires_grad; });
}

const Matrix& Graph::grad(Var v) {
  Node& n = nodes_.at(v.id);
  if (!n.has_grad) {
    n.grad = Matrix(n.value.rows(), n.value.dims());
    n.has_grad = true;
  }
  return n.grad;
}

void Graph::accumulate(Var v, const Matrix& g) {
  Node& n = nodes_[v.id];
  if (!n.requires_grad) return;
  if (!n.has_grad) {
    n.grad = g;
    n.has_grad = true;
    return;
  }
  auto dst = n.grad.data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

void Graph::backward(Var root) {
  const Matrix& rv = value(root);
  if (rv.rows() != 1 || rv.dims() != 1) throw ShapeError("backward: root must be 1x1, got " + rv.shape_string());
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grad = Matrix();
  }
  if (!nodes_[root.id].requires_grad) return;
  accumulate(root, Matrix(1, 1, 1.0));
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.requires_grad || !n.has_grad || !n.backward) continue;
    // Copy: the callback may append to other nodes' grads but never to nodes_.
    const Matrix upstream = n.grad;
    n.backward(*this, upstream);
  }
}

Var Graph::matmul(Var a, Var b) {
  Matrix out = icvl::matmul(value(a), value(b));
  return push(std::move(out), any_grad({a, b}), [a, b](Graph& g, const Matrix& up) {
    if (g.requires_grad(a)) g.accumulate(a, icvl::matmul_nt(up, g.value(b)));
    if (g.requires_grad(b)) g.accumulate(b, icvl::matmul_tn(g.value(a), up));
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  Matrix out = icvl::matmul_nt(value(a), value(b));
  return push(std::move(out), any_grad({a, b}), [a, b](Graph& g, const Matrix& up) {
    if (g.requires_grad(a)) g.accumulate(a, icvl::matmul(up, g.value(b)));
    if (g.requires_grad(b)) g.accumulate(b, icvl::matmul_tn(up, g.value(a)));
  });
}

Var Graph::add(Var a, Var b) {
  Matrix out = icvl::add(value(a), value(b));
  return push(std::move(out), any_grad({a, b}), [a, b](Graph& g, const Matrix& up) {
    g.accumulate(a, up);
    g.accumulate(b, up);
  });
}

Var Graph::add_row(Var a, Var row) {
  const Matrix& av = value(a);
  const Matrix& rv = value(row);
  if (rv.rows() != 1 || rv.dims() != av.dims()) {
    throw ShapeError("add_row: " + av.shape_string() + " + " + rv.shape_string());
  }
  Matrix out = av;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    auto o = out.row(r);
    for (std::size_t c = 0; c < o.size(); ++c) o[c] += rv(0, c);
  }
  return push(std::move(out), any_grad({a, row}), [a, row](Graph& g, const Matrix& up) {
    g.accumulate(a, up);
    if (g.requires_grad(row)) {
      Matrix s(1, up.dims());
      for (std::size_t r = 0; r < up.rows(); ++r)
        for (std::size_t c = 0; c < up.dims(); ++c) s(0, c) += up(r, c);
      g.accumulate(row, s);
    }
  });
}

Var Graph::scale(Var a, double factor) {
  return push(icvl::scale(value(a), factor), any_grad({a}), [a, factor](Graph& g, const Matrix& up) {
    g.accumulate(a, icvl::scale(up, factor));
  });
}

Var Graph::relu(Var a) {
  Matrix out = value(a);
  for (double& v : out.data()) v = v > 0.0 ? v : 0.0;
  return push(std::move(out), any_grad({a}), [a](Graph& g, const Matrix& up) {
    Matrix d = up;
    const auto in = g.value(a).data();
    auto dd = d.data();
    for (std::size_t i = 0; i < dd.size(); ++i)
      if (!(in[i] > 0.0)) dd[i] = 0.0;
    g.accumulate(a, d);
  });
}

Var Graph::softmax_rows(Var a, AttentionMask mask) {
  const Matrix& in = value(a);
  if (in.empty()) throw ShapeError("softmax_rows: empty matrix");
  Matrix out(in.rows(), in.dims());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    const std::size_t limit =
        mask.causal ? std::min(in.dims(), r + mask.offset + 1) : in.dims();
    auto row = in.row(r);
    auto o = out.row(r);
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < limit; ++c) mx = std::max(mx, row[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < limit; ++c) {
      o[c] = std::exp(row[c] - mx);
      sum += o[c];
    }
    for (std::size_t c = 0; c < limit; ++c) o[c] /= sum;
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), any_grad({a}), [a, self](Graph& g, const Matrix& up) {
    const Matrix& y = g.nodes_[self].value;
    Matrix d(y.rows(), y.dims());
    for (std::size_t r = 0; r < y.rows(); ++r) {
      auto yr = y.row(r);
      auto ur = up.row(r);
      double dot = 0.0;
      for (std::size_t c = 0; c < yr.size(); ++c) dot += yr[c] * ur[c];
      auto dr = d.row(r);
      for (std::size_t c = 0; c < yr.size(); ++c) dr[c] = yr[c] * (ur[c] - dot);
    }
    g.accumulate(a, d);
  });
}

Var Graph::layer_norm(Var a, double eps) {
  const Matrix& in = value(a);
  Matrix out(in.rows(), in.dims());
  std::vector<double> inv_std(in.rows());
  const double n = static_cast<double>(in.dims());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto row = in.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    auto o = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) o[c] = (row[c] - mean) * inv_std[r];
  }
  const std::size_t self = nodes_.size();
  return push(std::move(out), any_grad({a}),
              [a, self, inv_std = std::move(inv_std), n](Graph& g, const Matrix& up) {
                const Matrix& y = g.nodes_[self].value;
                Matrix d(y.rows(), y.dims());
                for (std::size_t r = 0; r < y.rows(); ++r) {
                  auto yr = y.row(r);
                  auto ur = up.row(r);
                  double mean_u = 0.0;
                  double mean_uy = 0.0;
                  for (std::size_t c = 0; c < yr.size(); ++c) {
                    mean_u += ur[c];
                    mean_uy += ur[c] * yr[c];
                  }
                  mean_u /= n;
                  mean_uy /= n;
                  auto dr = d.row(r);
                  for (std::size_t c = 0; c < yr.size(); ++c)
                    dr[c] = inv_std[r] * (ur[c] - mean_u - yr[c] * mean_uy);
                }
                g.accumulate(a, d);
              });
}

Var Graph::slice_cols(Var a, std::size_t begin, std::size_t count) {
  const Matrix& in = value(a);
  if (begin + count > in.dims()) throw ShapeError("slice_cols: out of range on " + in.shape_string());
  Matrix out(in.rows(), count);
  for (std::size_t r = 0; r < in.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) out(r, c) = in(r, begin + c);
  return push(std::move(out), any_grad({a}), [a, begin, count](Graph& g, const Matrix& up) {
    const Matrix& src = g.value(a);
    Matrix d(src.rows(), src.dims());
    for (std::size_t r = 0; r < up.rows(); ++r)
      for (std::size_t c = 0; c < count; ++c) d(r, begin + c) = up(r, c);
    g.accumulate(a, d);
  });
}

Var Graph::slice_rows(Var a, std::size_t begin, std::size_t count) {
  const Matrix& in = value(a);
  if (begin + count > in.rows()) throw ShapeError("slice_rows: out of range on " + in.shape_string());
  Matrix out(count, in.dims());
  std::copy_n(in.data().begin() + static_cast<std::ptrdiff_t>(begin * in.dims()), count * in.dims(),
              out.data().begin());
  return push(std::move(out), any_grad({a}), [a, begin](Graph& g, const Matrix& up) {
    const Matrix& src = g.value(a);
    Matrix d(src.rows(), src.dims());
    std::copy(up.data().begin(), up.data().end(),
              d.data().begin() + static_cast<std::ptrdiff_t>(begin * src.dims()));
    g.accumulate(a, d);
  });
}

Var Graph::concat_cols(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = value(parts[0]).rows();
  std::size_t dims = 0;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).rows() != rows) throw ShapeError("concat_cols: row mismatch");
    dims += value(p).dims();
    rg = rg || requires_grad(p);
  }
  Matrix out(rows, dims);
  std::size_t off = 0;
  for (Var p : parts) {
    const Matrix& m = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < m.dims(); ++c) out(r, off + c) = m(r, c);
    off += m.dims();
  }
  std::vector<Var> ids(parts.begin(), parts.end());
  return push(std::move(out), rg, [ids](Graph& g, const Matrix& up) {
    std::size_t off2 = 0;
    for (Var p : ids) {
      const std::size_t w = g.value(p).dims();
      if (g.requires_grad(p)) {
        Matrix d(up.rows(), w);
        for (std::size_t r = 0; r < up.rows(); ++r)
          for (std::size_t c = 0; c < w; ++c) d(r, c) = up(r, off2 + c);
        g.accumulate(p, d);
      }
      off2 += w;
    }
  });
}

Var Graph::concat_rows(std::span<const Var> parts) {
  std::vector<Matrix> values;
  std::vector<Var> ids;
  bool rg = false;
  for (Var p : parts) {
    if (value(p).rows() == 0) continue;
    values.push_back(value(p));
    ids.push_back(p);
    rg = rg || requires_grad(p);
  }
  Matrix out = icvl::concat_rows(values);
  return push(std::move(out), rg, [ids](Graph& g, const Matrix& up) {
    std::size_t row = 0;
    for (Var p : ids) {
      const Matrix& m = g.value(p);
      if (g.requires_grad(p)) {
        Matrix d(m.rows(), m.dims());
        std::copy_n(up.data().begin() + static_cast<std::ptrdiff_t>(row * up.dims()), m.size(),
                    d.data().begin());
        g.accumulate(p, d);
      }
      row += m.rows();
    }
  });
}

Var Graph::nll_sum(Var logits, std::span<const std::size_t> targets) {
  const Matrix& in = value(logits);
  if (targets.size() != in.rows()) {
    throw ShapeError("nll_sum: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(in.rows()) + " rows");
  }
  Matrix probs(in.rows(), in.dims());
  double total = 0.0;
  for (std::size_t r = 0; r < in.rows(); ++r) {
    if (targets[r] >= in.dims()) {
      throw DataError("nll: target " + std::to_string(targets[r]) + " out of range for " +
                      std::to_string(in.dims()) + " classes");
    }
    auto row = in.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    auto p = probs.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) {
      p[c] = std::exp(row[c] - mx);
      sum += p[c];
    }
    for (double& v : p) v /= sum;
    total += -(row[targets[r]] - mx - std::log(sum));
  }
  std::vector<std::size_t> t(targets.begin(), targets.end());
  return push(Matrix(1, 1, total), any_grad({logits}),
              [logits, probs = std::move(probs), t = std::move(t)](Graph& g, const Matrix& up) {
                Matrix d = probs;
                for (std::size_t r = 0; r < t.size(); ++r) d(r, t[r]) -= 1.0;
                g.accumulate(logits, icvl::scale(d, up(0, 0)));
              });
}

Var Graph::sum(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v;
  return push(Matrix(1, 1, s), any_grad({a}), [a](Graph& g, const Matrix& up) {
    const Matrix& src = g.value(a);
    g.accumulate(a, Matrix(src.rows(), src.dims(), up(0, 0)));
  });
}

Var Graph::sum_squares(Var a) {
  double s = 0.0;
  for (double v : value(a).data()) s += v * v;
  return push(Matrix(1, 1, s), any_grad({a}), [a](Graph& g, const Matrix& up) {
    g.accumulate(a, icvl::scale(g.value(a), 2.0 * up(0, 0)));
  });
}

Var Graph::mean_rows(Var a) {
  Matrix m = Matrix::row_vector(column_means(value(a)));
  return push(std::move(m), any_grad({a}), [a](Graph& g, const Matrix& up) {
    const Matrix& src = g.value(a);
    Matrix d(src.rows(), src.dims());
    const double inv = 1.0 / static_cast<double>(src.rows());
    for (std::size_t r = 0; r < src.rows(); ++r)
      for (std::size_t c = 0; c < src.dims(); ++c) d(r, c) = up(0, c) * inv;
    g.accumulate(a, d);
  });
}

Var multi_head_attention(Graph& g, Var q, Var k, Var v, std::size_t heads, AttentionMask mask,
                         std::vector<Var>* probabilities) {
  const std::size_t d = g.value(q).dims();
  if (g.value(k).dims() != d) {
    throw ShapeError("attention: query dims " + std::to_string(d) + " vs key dims " +
                     std::to_string(g.value(k).dims()));
  }
  if (g.value(k).rows() != g.value(v).rows()) throw ShapeError("attention: key/value row mismatch");
  if (heads == 0 || d % heads != 0 || g.value(v).dims() % heads != 0) {
    throw ConfigError("attention: width " + std::to_string(d) + " not divisible by " +
                      std::to_string(heads) + " heads");
  }
  const std::size_t dh = d / heads;
  const std::size_t dvh = g.value(v).dims() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::size_t h = 0; h < heads; ++h) {
    Var qh = heads == 1 ? q : g.slice_cols(q, h * dh, dh);
    Var kh = heads == 1 ? k : g.slice_cols(k, h * dh, dh);
    Var vh = heads == 1 ? v : g.slice_cols(v, h * dvh, dvh);
    Var p = g.softmax_rows(g.scale(g.matmul_nt(qh, kh), inv_sqrt), mask);
    if (probabilities != nullptr) probabilities->push_back(p);
    outs.push_back(g.matmul(p, vh));
  }
  return heads == 1 ? outs[0] : g.concat_cols(outs);
}

}  // namespace icvl::ad
