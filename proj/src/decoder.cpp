// SPDX-License-Identifier: Apache-2.0

#include "icvl/decoder.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>

#include "icvl/error.hpp"
#include "icvl/nn.hpp"
#include "icvl/random.hpp"

namespace icvl::decoder {

namespace {

std::string layer_name(std::size_t l) { return "dec" + std::to_string(l); }

struct TensorShape {
  std::string name;
  std::size_t rows;
  std::size_t dims;
};

// Base layout, every entry d_out × d_in.
std::vector<TensorShape> base_layout(const DecoderConfig& c, std::size_t vocab) {
  const std::size_t d = c.dims;
  const std::size_t ff = c.ffn_multiplier * d;
  std::vector<TensorShape> out{{"embed", vocab, d}};
  for (std::size_t l = 0; l < c.layers; ++l) {
    const std::string p = layer_name(l) + ".";
    out.push_back({p + "wq", d, d});
    out.push_back({p + "wk", d, d});
    out.push_back({p + "wv", d, d});
    out.push_back({p + "wo", d, d});
    out.push_back({p + "w1", ff, d});
    out.push_back({p + "w2", d, ff});
  }
  out.push_back({"head", vocab, d});
  return out;
}

std::string lora_a_name(const std::string& target) { return target + ".lora_a"; }
std::string lora_b_name(const std::string& target) { return target + ".lora_b"; }

double unit_draw(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void check_config(const DecoderConfig& c) {
  if (c.dims == 0 || c.layers == 0 || c.heads == 0 || c.ffn_multiplier == 0) {
    throw ConfigError("decoder: dims, layers, heads and ffn_multiplier must be positive");
  }
  if (c.dims % c.heads != 0) {
    throw ConfigError("decoder: dims " + std::to_string(c.dims) + " not divisible by " +
                      std::to_string(c.heads) + " heads");
  }
  if (c.lora_rank == 0) throw ConfigError("decoder: lora rank must be positive");
  if (!std::isfinite(c.lora_alpha)) throw ConfigError("decoder: lora alpha must be finite");
}

Matrix embed_tokens(const DecoderModel& model, std::span<const std::size_t> tokens) {
  const Matrix& table = model.base.at("embed");
  Matrix out(tokens.size(), table.dims());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= table.rows()) {
      throw DataError("decoder: token " + std::to_string(tokens[i]) + " outside vocabulary of " +
                      std::to_string(table.rows()));
    }
    auto src = table.row(tokens[i]);
    std::copy(src.begin(), src.end(), out.row(i).begin());
  }
  return out;
}

std::vector<std::size_t> input_tokens(const DecoderModel& model, const DecoderSample& s) {
  std::vector<std::size_t> tokens = s.context;
  tokens.push_back(model.tokens.bos());
  if (!s.targets.empty()) tokens.insert(tokens.end(), s.targets.begin(), s.targets.end() - 1);
  return tokens;
}

icaf::IcafVars bind_icaf(ad::Graph& g, const icaf::IcafParams& p,
                         const std::map<std::string, ad::Var>& trainable) {
  icaf::IcafVars v = icaf::bind(g, p, false);
  for (auto& [name, var] : icaf::named_vars(v)) {
    auto it = trainable.find(name);
    if (it == trainable.end()) continue;
    if (name == "icaf.proj_weight") v.proj_weight = it->second;
    if (name == "icaf.proj_bias") v.proj_bias = it->second;
    if (!p.strict) {
      if (name == "icaf.wq") v.wq = it->second;
      if (name == "icaf.wk") v.wk = it->second;
      if (name == "icaf.wv") v.wv = it->second;
    }
  }
  return v;
}

// Prefix rows on the tape.
ad::Var prefix_var(ad::Graph& g, const DecoderSample& s, const icaf::IcafParams& p, FusionMode mode,
                   const std::map<std::string, ad::Var>& trainable) {
  const icaf::IcafVars vars = bind_icaf(g, p, trainable);
  const Matrix frames = icaf::concat_segments(s.segment_frames);
  if (frames.dims() != p.visual_dims()) {
    throw ShapeError("decoder: frame width " + std::to_string(frames.dims()) + " != d_v " +
                     std::to_string(p.visual_dims()));
  }
  const ad::Var visual = icaf::prepare_visual(g, frames, s.segment_frames.size(), vars);
  if (mode == FusionMode::kNone) return visual;
  if (s.intention.dims() != p.llm_dims() || s.intention.rows() == 0) {
    throw ShapeError("decoder: intention embedding is " + s.intention.shape_string() +
                     ", expected rows × " + std::to_string(p.llm_dims()));
  }
  const ad::Var intention = g.constant(s.intention);
  switch (mode) {
    case FusionMode::kIcaf:
      return icaf::fuse(g, intention, visual, vars, p.head_count);
    case FusionMode::kVisualQuery:
      return icaf::fuse(g, visual, intention, vars, p.head_count);
    case FusionMode::kConcat: {
      const ad::Var parts[] = {intention, visual};
      return g.concat_rows(parts);
    }
    case FusionMode::kNone:
      break;
  }
  return visual;
}

// Logits for rows [logits_from, end) of [prefix] + tokens.
ad::Var tape_logits(ad::Graph& g, const DecoderModel& model, ad::Var prefix,
                    std::span<const std::size_t> tokens, std::size_t logits_from,
                    const std::map<std::string, ad::Var>& trainable) {
  const std::size_t d = model.config.dims;
  ad::Var x = g.constant(embed_tokens(model, tokens));
  if (prefix.valid()) {
    if (g.value(prefix).dims() != d) {
      throw ShapeError("decoder: prefix width " + std::to_string(g.value(prefix).dims()) +
                       " != d_l " + std::to_string(d));
    }
    const ad::Var parts[] = {prefix, x};
    x = g.concat_rows(parts);
  }
  const std::size_t n = g.value(x).rows();
  x = g.add(x, g.constant(positional_encoding_1d(n, d)));

  const nn::Projector project = [&](ad::Graph& gr, ad::Var in, const std::string& name) {
    const ad::Var base = gr.matmul_nt(in, gr.constant(model.base.at(name)));
    const LoraAdapter& lora = model.adapters.at(name);
    const auto a_it = trainable.find(lora_a_name(name));
    const auto b_it = trainable.find(lora_b_name(name));
    if (a_it == trainable.end() && b_it == trainable.end() && lora.is_zero()) return base;
    const ad::Var a = a_it != trainable.end() ? a_it->second : gr.constant(lora.a);
    const ad::Var b = b_it != trainable.end() ? b_it->second : gr.constant(lora.b);
    return gr.add(base, gr.scale(gr.matmul_nt(gr.matmul_nt(in, a), b), lora.scale));
  };
  const nn::BlockSpec spec{model.config.heads, ad::AttentionMask{true, 0}};
  for (std::size_t l = 0; l < model.config.layers; ++l) x = nn::transformer_block(g, x, layer_name(l), project, spec);
  x = g.layer_norm(x);
  if (logits_from > 0) x = g.slice_rows(x, logits_from, n - logits_from);
  return project(g, x, "head");
}

// ---- inference path ------------------------------------------------------

void layer_norm_rows(const Matrix& in, Matrix& out) {
  out = Matrix(in.rows(), in.dims());
  const double n = static_cast<double>(in.dims());
  for (std::size_t r = 0; r < in.rows(); ++r) {
    auto row = in.row(r);
    double mean = 0.0;
    for (double v : row) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : row) var += (v - mean) * (v - mean);
    var /= n;
    const double inv_std = 1.0 / std::sqrt(var + 1e-5);
    auto o = out.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) o[c] = (row[c] - mean) * inv_std;
  }
}

struct MergedLayer {
  Matrix wq, wk, wv, wo, w1, w2;
};

struct Merged {
  std::size_t dims = 0;
  std::size_t heads = 1;
  Matrix embed;
  Matrix head;
  std::vector<MergedLayer> layers;

  explicit Merged(const DecoderModel& m) : dims(m.config.dims), heads(m.config.heads) {
    m.validate();
    auto w = [&](const std::string& name) { return merged_weight(m.base.at(name), m.adapters.at(name)); };
    embed = m.base.at("embed");
    head = w("head");
    for (std::size_t l = 0; l < m.config.layers; ++l) {
      const std::string p = layer_name(l) + ".";
      layers.push_back({w(p + "wq"), w(p + "wk"), w(p + "wv"), w(p + "wo"), w(p + "w1"), w(p + "w2")});
    }
  }
};

// Incremental causal forward with cached keys and values. Copyable, so a
// shared prefix can be computed once and forked per candidate.
class Session {
 public:
  explicit Session(const Merged& m) : m_(&m), keys_(m.layers.size()), values_(m.layers.size()) {}

  std::size_t length() const noexcept { return length_; }

  /// Appends rows (without positional encoding); returns their logits.
  Matrix append(const Matrix& rows) {
    const std::size_t d = m_->dims;
    if (rows.dims() != d) throw ShapeError("decoder: input width " + std::to_string(rows.dims()));
    Matrix x = add(rows, positional_rows(rows.rows()));
    const std::size_t dh = d / m_->heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix xn;
    for (std::size_t l = 0; l < m_->layers.size(); ++l) {
      const MergedLayer& w = m_->layers[l];
      layer_norm_rows(x, xn);
      const Matrix q = matmul_nt(xn, w.wq);
      const Matrix k = matmul_nt(xn, w.wk);
      const Matrix v = matmul_nt(xn, w.wv);
      auto& kc = keys_[l].storage();
      auto& vc = values_[l].storage();
      kc.insert(kc.end(), k.data().begin(), k.data().end());
      vc.insert(vc.end(), v.data().begin(), v.data().end());
      Matrix att(rows.rows(), d);
      std::vector<double> scores;
      for (std::size_t i = 0; i < rows.rows(); ++i) {
        const std::size_t visible = length_ + i + 1;
        scores.resize(visible);
        for (std::size_t h = 0; h < m_->heads; ++h) {
          const std::size_t off = h * dh;
          double mx = -std::numeric_limits<double>::infinity();
          for (std::size_t j = 0; j < visible; ++j) {
            double s = 0.0;
            for (std::size_t c = 0; c < dh; ++c) s += q(i, off + c) * kc[j * d + off + c];
            scores[j] = s * inv_sqrt;
            mx = std::max(mx, scores[j]);
          }
          double sum = 0.0;
          for (std::size_t j = 0; j < visible; ++j) {
            scores[j] = std::exp(scores[j] - mx);
            sum += scores[j];
          }
          for (std::size_t j = 0; j < visible; ++j) scores[j] /= sum;
          for (std::size_t c = 0; c < dh; ++c) {
            double acc = 0.0;
            for (std::size_t j = 0; j < visible; ++j) acc += scores[j] * vc[j * d + off + c];
            att(i, off + c) = acc;
          }
        }
      }
      const Matrix h = add(x, matmul_nt(att, w.wo));
      layer_norm_rows(h, xn);
      Matrix hidden = matmul_nt(xn, w.w1);
      for (double& e : hidden.data()) e = std::max(e, 0.0);
      x = add(h, matmul_nt(hidden, w.w2));
    }
    length_ += rows.rows();
    layer_norm_rows(x, xn);
    return matmul_nt(xn, m_->head);
  }

  Matrix append_tokens(std::span<const std::size_t> tokens) {
    Matrix rows(tokens.size(), m_->dims);
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (tokens[i] >= m_->embed.rows()) throw DataError("decoder: token outside vocabulary");
      auto src = m_->embed.row(tokens[i]);
      std::copy(src.begin(), src.end(), rows.row(i).begin());
    }
    return append(rows);
  }

 private:
  Matrix positional_rows(std::size_t n) const {
    const Matrix full = positional_encoding_1d(length_ + n, m_->dims);
    Matrix out(n, m_->dims);
    for (std::size_t i = 0; i < n; ++i) {
      auto src = full.row(length_ + i);
      std::copy(src.begin(), src.end(), out.row(i).begin());
    }
    return out;
  }

  const Merged* m_;
  std::size_t length_ = 0;
  std::vector<Matrix> keys_;
  std::vector<Matrix> values_;
};

std::size_t pick_token(std::span<const double> logits, std::size_t lo, std::size_t hi, double temperature,
                       Rng& rng) {
  if (temperature <= 0.0) {
    std::size_t best = lo;
    for (std::size_t t = lo + 1; t < hi; ++t)
      if (logits[t] > logits[best]) best = t;
    return best;
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (std::size_t t = lo; t < hi; ++t) mx = std::max(mx, logits[t]);
  std::vector<double> p(hi - lo);
  double sum = 0.0;
  for (std::size_t t = lo; t < hi; ++t) {
    p[t - lo] = std::exp((logits[t] - mx) / temperature);
    sum += p[t - lo];
  }
  const double u = unit_draw(rng) * sum;
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return lo + i;
  }
  return hi - 1;
}

void check_same_shape(const DecoderSample& ref, const DecoderSample& s, std::size_t index, FusionMode mode) {
  auto drift = [&](const std::string& what) {
    throw DataError("decoder: sample " + std::to_string(index) + " " + what + " differs from sample 0");
  };
  if (s.targets.size() != ref.targets.size()) drift("target length");
  if (mode != FusionMode::kNone &&
      (s.intention.rows() != ref.intention.rows() || s.intention.dims() != ref.intention.dims())) {
    drift("intention shape " + s.intention.shape_string());
  }
  if (s.segment_frames.size() != ref.segment_frames.size()) drift("segment count");
  for (std::size_t i = 0; i < s.segment_frames.size(); ++i) {
    const Matrix& a = s.segment_frames[i];
    const Matrix& b = ref.segment_frames[i];
    if (a.rows() != b.rows() || a.dims() != b.dims()) drift("segment shape " + a.shape_string());
  }
}

}  // namespace

// ---- tokens ----------------------------------------------------------------

TokenVocab::TokenVocab(std::size_t verb_count, std::size_t noun_count)
    : verbs_(verb_count), nouns_(noun_count) {
  if (verb_count == 0 || noun_count == 0) throw ConfigError("decoder: empty vocabulary");
}

std::size_t TokenVocab::verb_token(std::size_t verb_id) const {
  if (verb_id >= verbs_) throw DataError("decoder: verb id " + std::to_string(verb_id) + " out of range");
  return verb_id;
}

std::size_t TokenVocab::noun_token(std::size_t noun_id) const {
  if (noun_id >= nouns_) throw DataError("decoder: noun id " + std::to_string(noun_id) + " out of range");
  return verbs_ + noun_id;
}

std::vector<std::size_t> TokenVocab::encode(const ActionSequence& actions) const {
  std::vector<std::size_t> out;
  out.reserve(actions.size() * 2);
  for (const ActionLabel& a : actions) {
    out.push_back(verb_token(a.verb_id));
    out.push_back(noun_token(a.noun_id));
  }
  return out;
}

ActionSequence TokenVocab::decode(std::span<const std::size_t> tokens) const {
  if (tokens.size() % 2 != 0) throw DataError("decoder: odd token count " + std::to_string(tokens.size()));
  ActionSequence out;
  for (std::size_t i = 0; i < tokens.size(); i += 2) {
    if (!is_verb(tokens[i]) || !is_noun(tokens[i + 1])) {
      throw DataError("decoder: token pair at " + std::to_string(i) + " is not verb, noun");
    }
    out.push_back({tokens[i], tokens[i + 1] - verbs_});
  }
  return out;
}

// ---- LoRA ------------------------------------------------------------------

LoraAdapter LoraAdapter::init(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                              std::uint64_t seed) {
  if (rank == 0) throw ConfigError("lora: rank must be positive");
  if (d_in == 0 || d_out == 0) throw ConfigError("lora: empty weight");
  if (rank > std::min(d_in, d_out)) {
    throw ConfigError("lora: rank " + std::to_string(rank) + " exceeds min(d_in, d_out) = " +
                      std::to_string(std::min(d_in, d_out)));
  }
  Rng rng(seed);
  LoraAdapter out;
  out.a = random_normal(rank, d_in, 1.0 / std::sqrt(static_cast<double>(d_in)), rng);
  out.b = Matrix(d_out, rank);
  out.scale = alpha / static_cast<double>(rank);
  return out;
}

bool LoraAdapter::is_zero() const noexcept {
  if (scale == 0.0) return true;
  const auto d = b.data();
  return std::all_of(d.begin(), d.end(), [](double v) { return v == 0.0; });
}

void LoraAdapter::validate(std::size_t d_in, std::size_t d_out) const {
  if (a.rows() == 0 || a.dims() != d_in || b.rows() != d_out || b.dims() != a.rows()) {
    throw ShapeError("lora: adapter A " + a.shape_string() + ", B " + b.shape_string() +
                     " does not fit a " + std::to_string(d_out) + "x" + std::to_string(d_in) + " weight");
  }
  if (!std::isfinite(scale)) throw NumericError("lora: non-finite scale");
  ensure_finite(a, "lora.a");
  ensure_finite(b, "lora.b");
}

Matrix merged_weight(const Matrix& base, const LoraAdapter& adapter) {
  adapter.validate(base.dims(), base.rows());
  if (adapter.is_zero()) return base;
  return add(base, scale(matmul(adapter.b, adapter.a), adapter.scale));
}

Matrix apply_lora(const Matrix& base, const LoraAdapter& adapter, const Matrix& input) {
  if (input.dims() != base.dims()) {
    throw ShapeError("lora: input " + input.shape_string() + " vs weight " + base.shape_string());
  }
  return matmul_nt(input, merged_weight(base, adapter));
}

double nll_loss(const Matrix& logits, std::span<const std::size_t> targets) {
  if (targets.size() != logits.rows()) {
    throw ShapeError("nll: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(logits.rows()) + " rows");
  }
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (targets[r] >= logits.dims()) {
      throw DataError("nll: target " + std::to_string(targets[r]) + " out of range");
    }
    auto row = logits.row(r);
    const double mx = *std::max_element(row.begin(), row.end());
    double sum = 0.0;
    for (double v : row) sum += std::exp(v - mx);
    total += -(row[targets[r]] - mx - std::log(sum));
  }
  return total;
}

FusionMode parse_fusion_mode(const std::string& name) {
  if (name == "icaf") return FusionMode::kIcaf;
  if (name == "concat") return FusionMode::kConcat;
  if (name == "visual_query" || name == "visual-query") return FusionMode::kVisualQuery;
  if (name == "none") return FusionMode::kNone;
  throw ConfigError("unknown fusion mode '" + name + "' (icaf, concat, visual_query, none)");
}

std::string to_string(FusionMode mode) {
  switch (mode) {
    case FusionMode::kIcaf: return "icaf";
    case FusionMode::kConcat: return "concat";
    case FusionMode::kVisualQuery: return "visual_query";
    case FusionMode::kNone: return "none";
  }
  return "icaf";
}

// ---- model -----------------------------------------------------------------

DecoderModel DecoderModel::init(const DecoderConfig& config, const Vocabulary& vocab) {
  check_config(config);
  DecoderModel m;
  m.config = config;
  m.tokens = TokenVocab(vocab);
  for (const TensorShape& t : base_layout(config, m.tokens.size())) {
    Rng rng(derive_seed(config.seed, t.name));
    // A small head keeps the untrained output close to uniform.
    double sd = 1.0 / std::sqrt(static_cast<double>(t.dims));
    if (t.name == "embed") sd = 1.0;
    if (t.name == "head") sd *= 0.1;
    m.base.emplace(t.name, random_normal(t.rows, t.dims, sd, rng));
    if (t.name == "embed") continue;
    m.adapters.emplace(t.name, LoraAdapter::init(t.dims, t.rows, config.lora_rank, config.lora_alpha,
                                                 derive_seed(config.seed, lora_a_name(t.name))));
  }
  return m;
}

void DecoderModel::validate() const {
  check_config(config);
  const auto layout = base_layout(config, tokens.size());
  if (base.size() != layout.size()) throw ShapeError("decoder: unexpected base tensor set");
  for (const TensorShape& t : layout) {
    auto it = base.find(t.name);
    if (it == base.end()) throw ShapeError("decoder: missing tensor " + t.name);
    if (it->second.rows() != t.rows || it->second.dims() != t.dims) {
      throw ShapeError("decoder: tensor " + t.name + " is " + it->second.shape_string());
    }
    ensure_finite(it->second, "decoder base");
    if (t.name == "embed") continue;
    auto lora = adapters.find(t.name);
    if (lora == adapters.end()) throw ShapeError("decoder: missing adapter for " + t.name);
    lora->second.validate(t.dims, t.rows);
  }
  if (adapters.size() + 1 != layout.size()) throw ShapeError("decoder: unexpected adapter set");
}

NamedMatrices DecoderModel::adapter_tensors() const {
  NamedMatrices out;
  for (const auto& [name, lora] : adapters) {
    out.emplace(lora_a_name(name), lora.a);
    out.emplace(lora_b_name(name), lora.b);
  }
  return out;
}

void DecoderModel::assign_adapter_tensors(const NamedMatrices& tensors) {
  for (auto& [name, lora] : adapters) {
    auto take = [&](const std::string& key, Matrix& slot) {
      auto it = tensors.find(key);
      if (it == tensors.end()) return;
      if (it->second.rows() != slot.rows() || it->second.dims() != slot.dims()) {
        throw ShapeError("decoder: assigned " + key + " has shape " + it->second.shape_string());
      }
      slot = it->second;
    };
    take(lora_a_name(name), lora.a);
    take(lora_b_name(name), lora.b);
  }
}

std::size_t DecoderModel::lora_parameter_count() const {
  std::size_t n = 0;
  for (const auto& [name, lora] : adapters) n += lora.parameter_count();
  return n;
}

void DecoderBundle::save(const std::filesystem::path& path) const {
  model.validate();
  Checkpoint ck;
  ck.seed = model.config.seed;
  ck.tensors = model.base;
  for (auto& [name, m] : model.adapter_tensors()) ck.tensors.emplace(name, m);
  for (auto& [name, m] : icaf.tensors()) ck.tensors.emplace(name, m);
  const DecoderConfig& c = model.config;
  ck.meta = {{"kind", "decoder"},
             {"dims", std::to_string(c.dims)},
             {"layers", std::to_string(c.layers)},
             {"heads", std::to_string(c.heads)},
             {"ffn_multiplier", std::to_string(c.ffn_multiplier)},
             {"lora_rank", std::to_string(c.lora_rank)},
             {"lora_alpha", format_double(c.lora_alpha)},
             {"verb_count", std::to_string(model.tokens.verb_count())},
             {"noun_count", std::to_string(model.tokens.noun_count())},
             {"fusion", to_string(fusion)},
             {"icaf_heads", std::to_string(icaf.head_count)},
             {"icaf_strict", icaf.strict ? "1" : "0"}};
  write_checkpoint(path, ck);
}

DecoderBundle DecoderBundle::load(const std::filesystem::path& path) {
  const Checkpoint ck = read_checkpoint(path);
  auto get = [&](const char* key) -> const std::string& {
    auto it = ck.meta.find(key);
    if (it == ck.meta.end()) throw IoError(std::string("decoder checkpoint: missing meta ") + key);
    return it->second;
  };
  if (ck.meta.count("kind") == 0 || ck.meta.at("kind") != "decoder") {
    throw IoError("checkpoint is not a decoder checkpoint: " + path.string());
  }
  DecoderBundle b;
  DecoderConfig& c = b.model.config;
  try {
    c.dims = std::stoull(get("dims"));
    c.layers = std::stoull(get("layers"));
    c.heads = std::stoull(get("heads"));
    c.ffn_multiplier = std::stoull(get("ffn_multiplier"));
    c.lora_rank = std::stoull(get("lora_rank"));
    c.lora_alpha = std::stod(get("lora_alpha"));
    c.seed = ck.seed;
    b.model.tokens = TokenVocab(std::stoull(get("verb_count")), std::stoull(get("noun_count")));
    b.icaf.head_count = std::stoull(get("icaf_heads"));
  } catch (const std::logic_error&) {
    throw IoError("decoder checkpoint: malformed meta in " + path.string());
  }
  b.fusion = parse_fusion_mode(get("fusion"));
  b.icaf.strict = get("icaf_strict") == "1";
  const double lora_scale = c.lora_alpha / static_cast<double>(c.lora_rank);
  for (const TensorShape& t : base_layout(c, b.model.tokens.size())) {
    auto it = ck.tensors.find(t.name);
    if (it == ck.tensors.end()) throw IoError("decoder checkpoint: missing tensor " + t.name);
    b.model.base.emplace(t.name, it->second);
    if (t.name == "embed") continue;
    auto a = ck.tensors.find(lora_a_name(t.name));
    auto bb = ck.tensors.find(lora_b_name(t.name));
    if (a == ck.tensors.end() || bb == ck.tensors.end()) {
      throw IoError("decoder checkpoint: missing adapter for " + t.name);
    }
    b.model.adapters.emplace(t.name, LoraAdapter{a->second, bb->second, lora_scale});
  }
  auto take = [&](const char* name, Matrix& slot) {
    auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) throw IoError(std::string("decoder checkpoint: missing tensor ") + name);
    slot = it->second;
  };
  take("icaf.proj_weight", b.icaf.proj_weight);
  take("icaf.proj_bias", b.icaf.proj_bias);
  take("icaf.wq", b.icaf.wq);
  take("icaf.wk", b.icaf.wk);
  take("icaf.wv", b.icaf.wv);
  b.model.validate();
  b.icaf.validate();
  return b;
}

// ---- forward -----------------------------------------------------------------

Matrix fusion_prefix(const DecoderSample& sample, const icaf::IcafParams& icaf, FusionMode mode) {
  icaf.validate();
  ad::Graph g;
  Matrix out = g.value(prefix_var(g, sample, icaf, mode, {}));
  ensure_finite(out, "decoder.fusion_prefix");
  return out;
}

ad::Var sample_loss(ad::Graph& g, const DecoderModel& model, const icaf::IcafParams& icaf,
                    FusionMode mode, const DecoderSample& sample,
                    const std::map<std::string, ad::Var>& trainable) {
  if (sample.targets.empty()) throw DataError("decoder: sample has no targets");
  const ad::Var prefix = prefix_var(g, sample, icaf, mode, trainable);
  const std::size_t prefix_rows = g.value(prefix).rows();
  const std::vector<std::size_t> tokens = input_tokens(model, sample);
  const ad::Var logits =
      tape_logits(g, model, prefix, tokens, prefix_rows + sample.context.size(), trainable);
  return g.nll_sum(logits, sample.targets);
}

Matrix forward_logits(const DecoderModel& model, const Matrix& prefix, std::span<const std::size_t> tokens) {
  const Merged merged(model);
  Session session(merged);
  Matrix prefix_logits = prefix.rows() > 0 ? session.append(prefix) : Matrix(0, model.tokens.size());
  const Matrix token_logits = tokens.empty() ? Matrix(0, model.tokens.size()) : session.append_tokens(tokens);
  const Matrix parts[] = {prefix_logits, token_logits};
  return concat_rows(parts);
}

Matrix forward_logits_tape(const DecoderModel& model, const Matrix& prefix,
                           std::span<const std::size_t> tokens) {
  model.validate();
  ad::Graph g;
  const ad::Var p = prefix.rows() > 0 ? g.constant(prefix) : ad::Var{};
  return g.value(tape_logits(g, model, p, tokens, 0, {}));
}

// ---- training ----------------------------------------------------------------

TrainResult train(const std::vector<DecoderSample>& data, DecoderModel& model, icaf::IcafParams& icaf,
                  FusionMode mode, const TrainConfig& cfg,
                  const std::function<void(std::size_t, double)>& on_epoch) {
  if (data.empty()) throw DataError("decoder.train: no samples");
  if (!(cfg.lr >= 0.0) || !std::isfinite(cfg.lr)) throw ConfigError("decoder.train: learning rate must be >= 0");
  if (cfg.batch_size == 0) throw ConfigError("decoder.train: batch size must be positive");
  model.validate();
  icaf.validate();
  for (std::size_t i = 0; i < data.size(); ++i) check_same_shape(data.front(), data[i], i, mode);

  const bool with_icaf = cfg.train_icaf;
  NamedMatrices params = model.adapter_tensors();
  if (with_icaf) {
    for (auto& [name, m] : icaf.trainable_tensors()) params.emplace(name, m);
  }
  Optimizer opt(cfg.optimizer, cfg.lr);
  Rng rng(derive_seed(cfg.seed, "decoder.train"));
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0.0;
    std::size_t seen = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      if (cfg.max_steps != 0 && result.steps >= cfg.max_steps) break;
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      ad::Graph g;
      std::map<std::string, ad::Var> vars;
      for (const auto& [name, m] : params) vars.emplace(name, g.parameter(m));
      std::vector<ad::Var> losses;
      double batch_total = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        losses.push_back(sample_loss(g, model, icaf, mode, data[order[i]], vars));
        batch_total += g.value(losses.back())(0, 0);
      }
      ad::Var total = losses.front();
      for (std::size_t i = 1; i < losses.size(); ++i) total = g.add(total, losses[i]);
      const double n = static_cast<double>(losses.size());
      if (losses.size() > 1) total = g.scale(total, 1.0 / n);
      if (!std::isfinite(g.value(total)(0, 0))) throw NumericError("decoder.train: non-finite loss");
      g.backward(total);
      NamedMatrices grads;
      for (const auto& [name, v] : vars) grads.emplace(name, g.grad(v));
      opt.step(params, grads);
      model.assign_adapter_tensors(params);
      if (with_icaf) icaf.assign(params);
      result.step_loss.push_back(batch_total / n);
      epoch_total += batch_total;
      seen += losses.size();
      ++result.steps;
    }
    if (seen == 0) break;
    result.epoch_loss.push_back(epoch_total / static_cast<double>(seen));
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

double mean_token_nll(const std::vector<DecoderSample>& data, const DecoderModel& model,
                      const icaf::IcafParams& icaf, FusionMode mode) {
  if (data.empty()) throw DataError("decoder: no samples");
  const Merged merged(model);
  double total = 0.0;
  for (const DecoderSample& s : data) {
    if (s.targets.empty()) throw DataError("decoder: sample has no targets");
    const Matrix prefix = fusion_prefix(s, icaf, mode);
    Session session(merged);
    if (prefix.rows() > 0) session.append(prefix);
    const Matrix logits = session.append_tokens(input_tokens(model, s));
    Matrix scored(s.targets.size(), logits.dims());
    const std::size_t from = logits.rows() - s.targets.size();
    for (std::size_t r = 0; r < scored.rows(); ++r) {
      auto src = logits.row(from + r);
      std::copy(src.begin(), src.end(), scored.row(r).begin());
    }
    total += nll_loss(scored, s.targets) / static_cast<double>(s.targets.size());
  }
  return total / static_cast<double>(data.size());
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out << "epoch,mean_loss\n";
  for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
    out << e << ',' << format_double(result.epoch_loss[e]) << '\n';
  }
  if (!out) throw IoError("write failed: " + path.string());
}

// ---- generation ----------------------------------------------------------------

std::vector<std::vector<std::size_t>> generate(const DecoderModel& model, const Matrix& prefix,
                                               std::span<const std::size_t> context,
                                               const GenerateOptions& options) {
  if (options.k == 0) throw ConfigError("generate: k must be positive");
  if (options.z == 0) throw ConfigError("generate: z must be positive");
  if (!std::isfinite(options.temperature) || options.temperature < 0.0) {
    throw ConfigError("generate: temperature must be >= 0");
  }
  if (prefix.rows() > 0 && prefix.dims() != model.config.dims) {
    throw ShapeError("generate: prefix width " + std::to_string(prefix.dims()));
  }
  const Merged merged(model);
  Session shared(merged);
  if (prefix.rows() > 0) shared.append(prefix);
  std::vector<std::size_t> head(context.begin(), context.end());
  head.push_back(model.tokens.bos());
  const Matrix first = shared.append_tokens(head);
  const std::vector<double> first_logits(first.row(first.rows() - 1).begin(), first.row(first.rows() - 1).end());

  const TokenVocab& tv = model.tokens;
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t c = 0; c < options.k; ++c) {
    Rng rng(derive_seed(options.seed, c));
    Session session = shared;
    std::vector<double> logits = first_logits;
    std::vector<std::size_t> seq;
    for (std::size_t step = 0; step < 2 * options.z; ++step) {
      const bool verb = step % 2 == 0;
      const std::size_t lo = verb ? 0 : tv.verb_count();
      const std::size_t hi = verb ? tv.verb_count() : tv.verb_count() + tv.noun_count();
      const std::size_t tok = pick_token(logits, lo, hi, options.temperature, rng);
      seq.push_back(tok);
      if (step + 1 == 2 * options.z) break;
      const std::size_t one[] = {tok};
      const Matrix next = session.append_tokens(one);
      logits.assign(next.row(0).begin(), next.row(0).end());
    }
    out.push_back(std::move(seq));
  }
  return out;
}

std::vector<ActionSequence> generate_actions(const DecoderModel& model, const Matrix& prefix,
                                             std::span<const std::size_t> context,
                                             const GenerateOptions& options) {
  std::vector<ActionSequence> out;
  for (const auto& seq : generate(model, prefix, context, options)) out.push_back(model.tokens.decode(seq));
  return out;
}

}  // namespace icvl::decoder
