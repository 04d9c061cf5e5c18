// SPDX-License-Identifier: Apache-2.0

#include "icvl/recognizer.hpp"

#include <cmath>

#include "icvl/autograd.hpp"
#include "icvl/error.hpp"
#include "icvl/nn.hpp"
#include "icvl/random.hpp"

namespace icvl::recognizer {

namespace {

std::string layer_name(std::size_t i) { return "enc" + std::to_string(i); }

std::size_t hidden_width(const RecognizerConfig& c) {
  return c.head_hidden == 0 ? c.input_dims : c.head_hidden;
}

// (name, rows, dims, init stddev); stddev 0 means zero init.
std::vector<std::tuple<std::string, std::size_t, std::size_t, double>> layout(
    const RecognizerConfig& c, std::size_t verbs, std::size_t nouns) {
  const std::size_t d = c.input_dims;
  const std::size_t ff = c.ffn_multiplier * d;
  const std::size_t hh = hidden_width(c);
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  const double sf = 1.0 / std::sqrt(static_cast<double>(ff));
  const double sh = 1.0 / std::sqrt(static_cast<double>(hh));
  std::vector<std::tuple<std::string, std::size_t, std::size_t, double>> out;
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_name(l);
    out.emplace_back(p + ".wq", d, d, sd);
    out.emplace_back(p + ".wk", d, d, sd);
    out.emplace_back(p + ".wv", d, d, sd);
    out.emplace_back(p + ".wo", d, d, sd);
    out.emplace_back(p + ".w1", d, ff, sd);
    out.emplace_back(p + ".b1", 1, ff, 0.0);
    out.emplace_back(p + ".w2", ff, d, sf);
    out.emplace_back(p + ".b2", 1, d, 0.0);
  }
  for (const auto& [head, classes] : {std::pair{std::string("verb"), verbs}, std::pair{std::string("noun"), nouns}}) {
    out.emplace_back(head + ".w1", d, hh, sd);
    out.emplace_back(head + ".b1", 1, hh, 0.0);
    out.emplace_back(head + ".w2", hh, classes, sh);
    out.emplace_back(head + ".b2", 1, classes, 0.0);
  }
  return out;
}

void check_config(const RecognizerConfig& c) {
  if (c.input_dims == 0 || c.layers == 0 || c.ffn_multiplier == 0) {
    throw ConfigError("recognizer: dims, layers and ffn multiplier must be positive");
  }
  if (c.heads == 0 || c.input_dims % c.heads != 0) {
    throw ConfigError("recognizer: input_dims " + std::to_string(c.input_dims) +
                      " not divisible by " + std::to_string(c.heads) + " heads");
  }
}

struct Forward {
  ad::Var verb_logits;
  ad::Var noun_logits;
};

Forward forward(ad::Graph& g, const Matrix& segments, const RecognizerParams& params,
                const std::map<std::string, ad::Var>& vars) {
  const RecognizerConfig& c = params.config;
  if (segments.rows() == 0) throw ShapeError("recognizer: no segments");
  if (segments.dims() != c.input_dims) {
    throw ShapeError("recognizer: segment width " + std::to_string(segments.dims()) + " != " +
                     std::to_string(c.input_dims));
  }
  Matrix input = segments;
  if (c.positional_encoding) {
    input = add(input, positional_encoding_1d(segments.rows(), c.input_dims));
  }
  const nn::Projector project = [&vars](ad::Graph& gg, ad::Var x, const std::string& name) {
    ad::Var y = gg.matmul(x, vars.at(name));
    const std::string bias = name.substr(0, name.size() - 2) + "b" + name.substr(name.size() - 1);
    if (name.ends_with(".w1") || name.ends_with(".w2")) y = gg.add_row(y, vars.at(bias));
    return y;
  };
  ad::Var x = g.constant(std::move(input));
  for (std::size_t l = 0; l < c.layers; ++l) {
    x = nn::transformer_block(g, x, layer_name(l), project, {c.heads, {}});
  }
  x = g.layer_norm(x);
  Forward f;
  f.verb_logits = project(g, g.relu(project(g, x, "verb.w1")), "verb.w2");
  f.noun_logits = project(g, g.relu(project(g, x, "noun.w1")), "noun.w2");
  return f;
}

std::map<std::string, ad::Var> bind(ad::Graph& g, const RecognizerParams& params, bool with_grad) {
  std::map<std::string, ad::Var> vars;
  for (const auto& [name, m] : params.tensors) {
    vars.emplace(name, with_grad ? g.parameter(m) : g.constant(m));
  }
  return vars;
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < row.size(); ++i)
    if (row[i] > row[best]) best = i;
  return best;
}

ad::Var batch_loss(ad::Graph& g, std::span<const LabelledSegments> batch,
                   const RecognizerParams& params, const std::map<std::string, ad::Var>& vars) {
  std::vector<ad::Var> terms;
  std::size_t total = 0;
  for (const auto& item : batch) {
    if (item.labels.size() != item.segments.rows()) {
      throw DataError("recognizer: " + std::to_string(item.labels.size()) + " labels for " +
                      std::to_string(item.segments.rows()) + " segments");
    }
    std::vector<std::size_t> verbs;
    std::vector<std::size_t> nouns;
    for (const auto& a : item.labels) {
      if (a.verb_id >= params.verb_count || a.noun_id >= params.noun_count) {
        throw DataError("recognizer: label (" + std::to_string(a.verb_id) + ", " +
                        std::to_string(a.noun_id) + ") outside vocabulary");
      }
      verbs.push_back(a.verb_id);
      nouns.push_back(a.noun_id);
    }
    const Forward f = forward(g, item.segments, params, vars);
    terms.push_back(g.nll_sum(f.verb_logits, verbs));
    terms.push_back(g.nll_sum(f.noun_logits, nouns));
    total += item.labels.size();
  }
  if (total == 0) throw DataError("recognizer: empty batch");
  ad::Var acc = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) acc = g.add(acc, terms[i]);
  return g.scale(acc, 1.0 / static_cast<double>(total));
}

}  // namespace

RecognizerParams RecognizerParams::init(const RecognizerConfig& config, const Vocabulary& vocab) {
  check_config(config);
  RecognizerParams p;
  p.config = config;
  p.verb_count = vocab.verb_count();
  p.noun_count = vocab.noun_count();
  for (const auto& [name, rows, dims, sd] : layout(config, p.verb_count, p.noun_count)) {
    Rng rng(derive_seed(config.seed, name));
    p.tensors.emplace(name, sd == 0.0 ? Matrix(rows, dims) : random_normal(rows, dims, sd, rng));
  }
  return p;
}

RecognizerParams RecognizerParams::zeros(const RecognizerConfig& config, const Vocabulary& vocab) {
  RecognizerParams p = init(config, vocab);
  for (auto& [name, m] : p.tensors) m = Matrix(m.rows(), m.dims());
  return p;
}

void RecognizerParams::validate() const {
  check_config(config);
  for (const auto& [name, rows, dims, sd] : layout(config, verb_count, noun_count)) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ShapeError("recognizer: missing tensor " + name);
    if (it->second.rows() != rows || it->second.dims() != dims) {
      throw ShapeError("recognizer: tensor " + name + " is " + it->second.shape_string());
    }
    ensure_finite(it->second, "recognizer params");
  }
}

Checkpoint RecognizerParams::to_checkpoint() const {
  Checkpoint ck;
  ck.seed = config.seed;
  ck.tensors = tensors;
  ck.meta = {{"kind", "recognizer"},
             {"input_dims", std::to_string(config.input_dims)},
             {"layers", std::to_string(config.layers)},
             {"heads", std::to_string(config.heads)},
             {"ffn_multiplier", std::to_string(config.ffn_multiplier)},
             {"head_hidden", std::to_string(config.head_hidden)},
             {"positional_encoding", config.positional_encoding ? "1" : "0"},
             {"verb_count", std::to_string(verb_count)},
             {"noun_count", std::to_string(noun_count)}};
  return ck;
}

RecognizerParams RecognizerParams::from_checkpoint(const Checkpoint& ck) {
  auto get = [&](const char* key) -> std::size_t {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IoError(std::string("recognizer checkpoint: missing meta ") + key);
    return std::stoull(it->second);
  };
  if (ck.meta.count("kind") == 0 || ck.meta.at("kind") != "recognizer") {
    throw IoError("checkpoint is not a recognizer checkpoint");
  }
  RecognizerParams p;
  p.config.input_dims = get("input_dims");
  p.config.layers = get("layers");
  p.config.heads = get("heads");
  p.config.ffn_multiplier = get("ffn_multiplier");
  p.config.head_hidden = get("head_hidden");
  p.config.positional_encoding = get("positional_encoding") != 0;
  p.config.seed = ck.seed;
  p.verb_count = get("verb_count");
  p.noun_count = get("noun_count");
  p.tensors = ck.tensors;
  p.validate();
  return p;
}

Matrix pool_segments(std::span<const Matrix> segment_frames) {
  if (segment_frames.empty()) throw ShapeError("pool_segments: no segments");
  Matrix out(segment_frames.size(), segment_frames.front().dims());
  for (std::size_t s = 0; s < segment_frames.size(); ++s) {
    if (segment_frames[s].dims() != out.dims()) throw ShapeError("pool_segments: ragged widths");
    const auto mean = column_means(segment_frames[s]);
    std::copy(mean.begin(), mean.end(), out.row(s).begin());
  }
  return out;
}

std::pair<Matrix, Matrix> logits(const Matrix& segment_embeddings, const RecognizerParams& params) {
  ad::Graph g;
  const auto vars = bind(g, params, false);
  const Forward f = forward(g, segment_embeddings, params, vars);
  return {g.value(f.verb_logits), g.value(f.noun_logits)};
}

ActionSequence recognize(const Matrix& segment_embeddings, const RecognizerParams& params,
                         const Vocabulary& vocab) {
  if (params.verb_count != vocab.verb_count() || params.noun_count != vocab.noun_count()) {
    throw ShapeError("recognizer: parameters were built for a different vocabulary");
  }
  const auto [verbs, nouns] = logits(segment_embeddings, params);
  ActionSequence out;
  out.reserve(verbs.rows());
  for (std::size_t r = 0; r < verbs.rows(); ++r) out.push_back({argmax(verbs.row(r)), argmax(nouns.row(r))});
  return out;
}

double loss(std::span<const LabelledSegments> batch, const RecognizerParams& params) {
  ad::Graph g;
  const auto vars = bind(g, params, false);
  return g.value(batch_loss(g, batch, params, vars))(0, 0);
}

std::pair<double, NamedMatrices> loss_and_gradients(std::span<const LabelledSegments> batch,
                                                    const RecognizerParams& params) {
  ad::Graph g;
  const auto vars = bind(g, params, true);
  const ad::Var l = batch_loss(g, batch, params, vars);
  const double value = g.value(l)(0, 0);
  if (!std::isfinite(value)) throw NumericError("recognizer: non-finite loss");
  g.backward(l);
  NamedMatrices grads;
  for (const auto& [name, v] : vars) grads.emplace(name, g.grad(v));
  return {value, std::move(grads)};
}

double train_step(std::span<const LabelledSegments> batch, RecognizerParams& params, double lr) {
  if (!(lr >= 0.0)) throw ConfigError("recognizer: learning rate must be >= 0");
  auto [value, grads] = loss_and_gradients(batch, params);
  Optimizer(OptimizerKind::kGradientDescent, lr).step(params.tensors, grads);
  return value;
}

Trainer::Trainer(RecognizerParams& params, OptimizerKind kind, double lr)
    : params_(params), optimizer_(kind, lr) {}

double Trainer::step(std::span<const LabelledSegments> batch) {
  auto [value, grads] = loss_and_gradients(batch, params_);
  optimizer_.step(params_.tensors, grads);
  return value;
}

double recognition_accuracy(const ActionSequence& predicted, const ActionSequence& gold) {
  if (predicted.size() != gold.size()) {
    throw DataError("recognition_accuracy: " + std::to_string(predicted.size()) + " predictions vs " +
                    std::to_string(gold.size()) + " labels");
  }
  if (gold.empty()) throw DataError("recognition_accuracy: no labels");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) hits += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

}  // namespace icvl::recognizer
