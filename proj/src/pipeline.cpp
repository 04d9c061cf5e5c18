// SPDX-License-Identifier: Apache-2.0

#include "icvl/pipeline.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>

#include "icvl/error.hpp"
#include "icvl/nn.hpp"
#include "icvl/prompt.hpp"
#include "icvl/random.hpp"

namespace icvl::pipeline {

using nlohmann::json;

namespace {

using Setter = std::function<void(const json&)>;

std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_unsigned() && !(v.is_number_integer() && v.get<std::int64_t>() >= 0)) {
    throw ConfigError("config: '" + key + "' must be a non-negative integer");
  }
  return v.get<std::size_t>();
}

double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ConfigError("config: '" + key + "' must be a number");
  return v.get<double>();
}

std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ConfigError("config: '" + key + "' must be a string");
  return v.get<std::string>();
}

bool as_bool(const json& v, const std::string& key) {
  if (!v.is_boolean()) throw ConfigError("config: '" + key + "' must be true or false");
  return v.get<bool>();
}

std::map<std::string, Setter> setters(PipelineConfig& c) {
  std::map<std::string, Setter> s;
  auto path = [&s](const char* key, std::filesystem::path& out) {
    s[key] = [key, &out](const json& v) { out = as_string(v, key); };
  };
  auto count = [&s](const char* key, std::size_t& out) {
    s[key] = [key, &out](const json& v) { out = as_count(v, key); };
  };
  auto real = [&s](const char* key, double& out) {
    s[key] = [key, &out](const json& v) { out = as_real(v, key); };
  };
  path("grammar", c.grammar);
  path("store", c.store);
  path("fixtures", c.fixtures);
  path("checkpoint", c.checkpoint);
  path("out", c.out);
  s["vlm_endpoint"] = [&c](const json& v) { c.vlm_endpoint = as_string(v, "vlm_endpoint"); };
  s["seed"] = [&c](const json& v) { c.seed = as_count(v, "seed"); };
  count("threads", c.threads);
  real("alpha", c.alpha);
  count("k_examples", c.k_examples);
  count("n_frm", c.n_frm);
  s["fusion"] = [&c](const json& v) { c.fusion = decoder::parse_fusion_mode(as_string(v, "fusion")); };
  s["selection"] = [&c](const json& v) {
    c.selection = retrieval::parse_selection_mode(as_string(v, "selection"));
  };
  count("candidates", c.candidates);
  count("future_length", c.future_length);
  count("segments", c.segments);
  s["horizons"] = [&c](const json& v) {
    if (!v.is_array()) throw ConfigError("config: 'horizons' must be an array");
    c.horizons.clear();
    for (const auto& h : v) {
      if (!h.is_number_integer()) throw ConfigError("config: horizons must be integers");
      c.horizons.push_back(h.get<int>());
    }
  };
  count("freq_threshold", c.freq_threshold);
  count("train_videos", c.train_videos);
  count("test_videos", c.test_videos);
  count("llm_dims", c.llm_dims);
  count("seq_len", c.seq_len);
  count("icaf_heads", c.icaf_heads);
  s["icaf_strict"] = [&c](const json& v) { c.icaf_strict = as_bool(v, "icaf_strict"); };
  count("decoder_layers", c.decoder_layers);
  count("decoder_heads", c.decoder_heads);
  count("lora_rank", c.lora_rank);
  real("lora_alpha", c.lora_alpha);
  real("decoder_lr", c.decoder_lr);
  count("decoder_epochs", c.decoder_epochs);
  count("decoder_batch", c.decoder_batch);
  real("temperature", c.temperature);
  real("recognizer_lr", c.recognizer_lr);
  count("recognizer_steps", c.recognizer_steps);
  return s;
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("config: " + what);
}

std::size_t recognizer_heads(std::size_t dims) {
  for (std::size_t h : {8, 4, 2}) {
    if (dims % h == 0) return h;
  }
  return 1;
}

std::string candidates_text(const std::vector<ActionSequence>& candidates, const Vocabulary& vocab) {
  std::string text;
  for (const auto& c : candidates) text += prompt::render_actions(c, vocab) + "\n";
  return text;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

json PipelineConfig::to_json() const {
  return {{"grammar", grammar.string()},
          {"store", store.string()},
          {"fixtures", fixtures.string()},
          {"checkpoint", checkpoint.string()},
          {"out", out.string()},
          {"vlm_endpoint", vlm_endpoint},
          {"seed", seed},
          {"threads", threads},
          {"alpha", alpha},
          {"k_examples", k_examples},
          {"n_frm", n_frm},
          {"fusion", decoder::to_string(fusion)},
          {"selection", retrieval::to_string(selection)},
          {"candidates", candidates},
          {"future_length", future_length},
          {"segments", segments},
          {"horizons", horizons},
          {"freq_threshold", freq_threshold},
          {"train_videos", train_videos},
          {"test_videos", test_videos},
          {"llm_dims", llm_dims},
          {"seq_len", seq_len},
          {"icaf_heads", icaf_heads},
          {"icaf_strict", icaf_strict},
          {"decoder_layers", decoder_layers},
          {"decoder_heads", decoder_heads},
          {"lora_rank", lora_rank},
          {"lora_alpha", lora_alpha},
          {"decoder_lr", decoder_lr},
          {"decoder_epochs", decoder_epochs},
          {"decoder_batch", decoder_batch},
          {"temperature", temperature},
          {"recognizer_lr", recognizer_lr},
          {"recognizer_steps", recognizer_steps}};
}

PipelineConfig PipelineConfig::from_json(const json& doc, PipelineConfig base) {
  if (!doc.is_object()) throw ConfigError("config: expected a JSON object");
  const auto table = setters(base);
  for (const auto& [key, value] : doc.items()) {
    const auto it = table.find(key);
    if (it == table.end()) throw ConfigError("config: unknown key '" + key + "'");
    it->second(value);
  }
  return base;
}

PipelineConfig PipelineConfig::from_json(const json& doc) { return from_json(doc, PipelineConfig{}); }

void PipelineConfig::validate() const {
  require(std::isfinite(alpha) && alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
  require(threads >= 1, "threads must be at least 1");
  require(n_frm >= 1, "n_frm must be at least 1");
  require(candidates >= 1, "candidates must be at least 1");
  require(future_length >= 1, "future_length must be at least 1");
  require(segments >= 1, "segments must be at least 1");
  require(!horizons.empty(), "horizons must not be empty");
  for (int h : horizons) require(h > 0 && h < 100, "horizon " + std::to_string(h) + " outside (0, 100)");
  require(train_videos >= 2, "train_videos must be at least 2");
  require(test_videos >= 1, "test_videos must be at least 1");
  require(k_examples < train_videos, "k_examples must be below train_videos");
  require(llm_dims >= 1 && seq_len >= 1, "llm_dims and seq_len must be positive");
  require(icaf_heads >= 1 && llm_dims % icaf_heads == 0, "icaf_heads must divide llm_dims");
  require(decoder_layers >= 1, "decoder_layers must be at least 1");
  require(decoder_batch >= 1, "decoder_batch must be at least 1");
  require(decoder_heads >= 1 && llm_dims % decoder_heads == 0, "decoder_heads must divide llm_dims");
  require(lora_rank >= 1 && lora_rank <= llm_dims, "lora_rank must lie in [1, llm_dims]");
  require(std::isfinite(lora_alpha) && lora_alpha > 0.0, "lora_alpha must be positive");
  require(std::isfinite(decoder_lr) && decoder_lr >= 0.0, "decoder_lr must be non-negative");
  require(std::isfinite(recognizer_lr) && recognizer_lr >= 0.0, "recognizer_lr must be non-negative");
  require(std::isfinite(temperature) && temperature >= 0.0, "temperature must be non-negative");
}

void apply_env(PipelineConfig& cfg, const std::function<const char*(const char*)>& getenv) {
  auto get = [&](const char* name) -> const char* { return getenv ? getenv(name) : std::getenv(name); };
  auto number = [](const char* name, const char* text) {
    const std::string s(text);
    std::size_t used = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(s, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != s.size() || s.front() == '-') {
      throw ConfigError(std::string(name) + " is not a non-negative integer: '" + s + "'");
    }
    return static_cast<std::uint64_t>(v);
  };
  if (const char* v = get("ICVL_VLM_ENDPOINT")) cfg.vlm_endpoint = v;
  if (const char* v = get("ICVL_SEED")) cfg.seed = number("ICVL_SEED", v);
  if (const char* v = get("ICVL_THREADS")) cfg.threads = static_cast<std::size_t>(number("ICVL_THREADS", v));
}

fixtures::IntentionGrammar load_grammar(const PipelineConfig& cfg) {
  if (cfg.grammar.empty()) return fixtures::default_grammar();
  return fixtures::IntentionGrammar::load(cfg.grammar);
}

std::unique_ptr<intention::VlmClient> make_vlm_client(const PipelineConfig& cfg,
                                                      const fixtures::Dataset& data) {
  if (cfg.vlm_endpoint.empty()) return std::make_unique<fixtures::MockVlm>(fixtures::mock_vlm(data));
  return std::make_unique<intention::SocketVlmClient>(cfg.vlm_endpoint);
}

std::vector<std::size_t> context_tokens(const decoder::TokenVocab& tokens,
                                        const std::vector<retrieval::ExampleRecord>& examples,
                                        const ActionSequence& observed) {
  std::vector<std::size_t> out;
  for (const auto& e : examples) {
    out.push_back(tokens.example());
    const auto f = tokens.encode(e.future);
    out.insert(out.end(), f.begin(), f.end());
  }
  out.push_back(tokens.observed());
  const auto o = tokens.encode(observed);
  out.insert(out.end(), o.begin(), o.end());
  return out;
}

std::string render_query_prompt(const std::vector<retrieval::ExampleRecord>& examples,
                                const ActionSequence& observed, std::size_t embedding_rows,
                                const Vocabulary& vocab) {
  prompt::PromptDocument doc;
  for (const auto& e : examples) doc.examples.push_back({e.observed, e.future});
  doc.observed = observed;
  doc.embedding_slot = embedding_rows;
  doc.max_examples = std::max(doc.max_examples, examples.size());
  return prompt::render_prompt(doc, vocab);
}

Matrix candidate_verb_scores(const std::vector<eval::PredictionRecord>& predictions, std::size_t verb_count) {
  Matrix out(predictions.size(), verb_count);
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const auto& cands = predictions[i].candidates;
    if (cands.empty()) throw DataError("no candidates for video '" + predictions[i].video_id + "'");
    for (const auto& c : cands) {
      std::set<std::size_t> verbs;
      for (const auto& a : c) {
        if (a.verb_id >= verb_count) throw DataError("verb id out of range in '" + predictions[i].video_id + "'");
        verbs.insert(a.verb_id);
      }
      for (std::size_t v : verbs) out(i, v) += 1.0 / static_cast<double>(cands.size());
    }
  }
  return out;
}

PipelineConfig baseline_config(const PipelineConfig& cfg) {
  PipelineConfig b = cfg;
  b.fusion = decoder::FusionMode::kNone;
  b.k_examples = 0;
  return b;
}

Splits generate_splits(const PipelineConfig& cfg, const fixtures::IntentionGrammar& grammar) {
  return {fixtures::generate_dataset(grammar, cfg.train_videos, cfg.segments, cfg.future_length, "train", 0),
          fixtures::generate_dataset(grammar, cfg.test_videos, cfg.segments, cfg.future_length, "test", 1)};
}

void save_split(const std::filesystem::path& dir, const fixtures::Dataset& data) {
  std::filesystem::create_directories(dir);
  eval::write_gold(dir / "gold.jsonl", data.gold());
  fixtures::save_frames(dir / "frames.icvlmat", data);
}

fixtures::Dataset load_split(const std::filesystem::path& dir, std::size_t n_seg) {
  const auto gold = eval::read_gold(dir / "gold.jsonl");
  if (gold.empty()) throw DataError("no videos in " + (dir / "gold.jsonl").string());
  auto frames = fixtures::load_frames(dir / "frames.icvlmat", gold.size(), n_seg);
  fixtures::Dataset data;
  for (std::size_t i = 0; i < gold.size(); ++i) {
    fixtures::FixtureVideo v;
    v.video_id = gold[i].video_id;
    v.intention = gold[i].intention;
    v.observed = gold[i].observed;
    v.future = gold[i].future;
    v.segment_frames = std::move(frames[i]);
    data.videos.push_back(std::move(v));
  }
  return data;
}

recognizer::RecognizerParams train_recognizer(const PipelineConfig& cfg, const fixtures::Dataset& train,
                                              const Vocabulary& vocab, double* last_loss) {
  if (train.videos.empty()) throw DataError("recognizer: no training videos");
  recognizer::RecognizerConfig rc;
  rc.input_dims = train.videos.front().segment_frames.front().dims();
  rc.heads = recognizer_heads(rc.input_dims);
  rc.seed = derive_seed(cfg.seed, "recognizer");
  recognizer::RecognizerParams params = recognizer::RecognizerParams::init(rc, vocab);
  std::vector<recognizer::LabelledSegments> batch;
  for (const auto& v : train.videos) batch.push_back({recognizer::pool_segments(v.segment_frames), v.observed});
  double loss = recognizer::loss(batch, params);
  for (std::size_t step = 0; step < cfg.recognizer_steps; ++step) loss = recognizer::train_step(batch, params, cfg.recognizer_lr);
  if (last_loss) *last_loss = loss;
  return params;
}

std::vector<ActionSequence> recognize_videos(const recognizer::RecognizerParams& params,
                                             const fixtures::Dataset& data, const Vocabulary& vocab) {
  std::vector<ActionSequence> out;
  for (const auto& v : data.videos) out.push_back(recognizer::recognize(recognizer::pool_segments(v.segment_frames), params, vocab));
  return out;
}

std::vector<intention::IntentionTrace> infer_video_intentions(const PipelineConfig& cfg,
                                                              const fixtures::Dataset& data,
                                                              intention::VlmClient& client) {
  std::vector<intention::IntentionTrace> out;
  for (const auto& v : data.videos) {
    const std::size_t total = v.segment_frames.size() * (v.segment_frames.empty() ? 0 : v.segment_frames.front().rows());
    out.push_back(intention::infer_intentions(intention::sample_frame_refs(v.video_id, total, cfg.n_frm), client));
  }
  return out;
}

std::vector<retrieval::ExampleRecord> select_for(const PipelineConfig& cfg, const retrieval::ExampleStore& store,
                                                 const std::vector<double>& visual,
                                                 const std::vector<double>& textual,
                                                 std::optional<std::size_t> exclude) {
  if (cfg.k_examples == 0) return {};
  retrieval::SelectOptions o;
  o.alpha = cfg.alpha;
  o.k = cfg.k_examples;
  o.exclude = exclude;
  o.mode = cfg.selection;
  o.threads = cfg.threads;
  return retrieval::select_examples(visual, textual, store, o);
}

std::vector<decoder::DecoderSample> training_samples(const PipelineConfig& cfg, const fixtures::Dataset& data,
                                                     const retrieval::ExampleStore& store,
                                                     const std::vector<std::string>& intentions,
                                                     const Vocabulary& vocab) {
  if (data.videos.size() != store.size() || intentions.size() != store.size()) {
    throw DataError("training_samples: " + std::to_string(data.videos.size()) + " videos, " +
                    std::to_string(store.size()) + " records, " + std::to_string(intentions.size()) + " intentions");
  }
  const intention::HashingTextEncoder encoder(cfg.llm_dims);
  const decoder::TokenVocab tokens(vocab);
  std::vector<decoder::DecoderSample> out;
  for (std::size_t i = 0; i < data.videos.size(); ++i) {
    const auto& v = data.videos[i];
    if (store[i].video_id != v.video_id) throw DataError("training_samples: store order differs at " + v.video_id);
    const auto examples = select_for(cfg, store, store[i].pooled_visual, store[i].pooled_textual, i);
    out.push_back({v.segment_frames, intention::embed_intention(intentions[i], encoder, cfg.seq_len).rows,
                   context_tokens(tokens, examples, v.observed), tokens.encode(v.future)});
  }
  return out;
}

decoder::DecoderBundle init_bundle(const PipelineConfig& cfg, const Vocabulary& vocab, std::size_t visual_dims) {
  decoder::DecoderConfig dc;
  dc.dims = cfg.llm_dims;
  dc.layers = cfg.decoder_layers;
  dc.heads = cfg.decoder_heads;
  dc.lora_rank = cfg.lora_rank;
  dc.lora_alpha = cfg.lora_alpha;
  dc.seed = derive_seed(cfg.seed, "decoder");
  decoder::DecoderBundle bundle{
      decoder::DecoderModel::init(dc, vocab),
      icaf::IcafParams::init(visual_dims, cfg.llm_dims, cfg.icaf_heads, derive_seed(cfg.seed, "icaf")), cfg.fusion};
  bundle.icaf.strict = cfg.icaf_strict;
  return bundle;
}

decoder::TrainResult train_bundle(const PipelineConfig& cfg, const std::vector<decoder::DecoderSample>& samples,
                                  decoder::DecoderBundle& bundle, const std::function<void(const std::string&)>& log) {
  decoder::TrainConfig tc;
  tc.lr = cfg.decoder_lr;
  tc.epochs = cfg.decoder_epochs;
  tc.batch_size = cfg.decoder_batch;
  tc.seed = derive_seed(cfg.seed, "shuffle");
  return decoder::train(samples, bundle.model, bundle.icaf, bundle.fusion, tc, [&](std::size_t epoch, double loss) {
    if (log) log("decoder epoch " + std::to_string(epoch) + " mean loss " + std::to_string(loss));
  });
}

VideoPrediction predict_video(const PipelineConfig& cfg, const decoder::DecoderBundle& bundle,
                              const retrieval::ExampleStore& store, const fixtures::FixtureVideo& video,
                              const ActionSequence& observed, const std::string& intention_text,
                              const Vocabulary& vocab, std::size_t index) {
  const intention::HashingTextEncoder encoder(cfg.llm_dims);
  const decoder::TokenVocab tokens(vocab);
  VideoPrediction out;
  const auto visual = retrieval::mean_pool(concat_rows(video.segment_frames));
  const auto textual = fixtures::observed_text_embedding(observed, vocab, encoder);
  out.examples = select_for(cfg, store, visual, textual, std::nullopt);
  const decoder::DecoderSample query{video.segment_frames,
                                     intention::embed_intention(intention_text, encoder, cfg.seq_len).rows,
                                     context_tokens(tokens, out.examples, observed),
                                     {}};
  const Matrix prefix = decoder::fusion_prefix(query, bundle.icaf, bundle.fusion);
  out.prompt = render_query_prompt(out.examples, observed, prefix.rows(), vocab);
  decoder::GenerateOptions go;
  go.k = cfg.candidates;
  go.z = cfg.future_length;
  go.temperature = cfg.temperature;
  go.seed = derive_seed(cfg.seed, index);
  const auto generated = decoder::generate_actions(bundle.model, prefix, query.context, go);
  // Candidates travel as text, the same way an external decoder answers.
  const auto parsed =
      prompt::parse_prediction(candidates_text(generated, vocab), vocab, cfg.candidates, cfg.future_length);
  out.record = {video.video_id, parsed.candidates};
  return out;
}

std::vector<GradCheckReport> gradient_suite(std::uint64_t seed, const GradCheckOptions& options) {
  Rng rng(derive_seed(seed, "gradcheck"));
  std::vector<GradCheckReport> out;
  auto collect = [&](const std::string& check, const GraphLossFn& loss, const NamedMatrices& params) {
    for (auto r : grad_check(loss, params, options)) {
      r.parameter_name = check + "/" + r.parameter_name;
      out.push_back(std::move(r));
    }
  };

  // Identity projections would sit on a symmetric point; nudge them.
  icaf::IcafParams ip = icaf::IcafParams::init(6, 8, 2, derive_seed(seed, "icaf"));
  ip.proj_bias = random_normal(1, 8, 0.1, rng);
  ip.wq = add(ip.wq, random_normal(8, 8, 0.2, rng));
  ip.wk = add(ip.wk, random_normal(8, 8, 0.2, rng));
  ip.wv = add(ip.wv, random_normal(8, 8, 0.2, rng));
  const std::vector<Matrix> segments{random_normal(2, 6, 1.0, rng), random_normal(2, 6, 1.0, rng)};
  const Matrix frames = icaf::concat_segments(segments);
  const Matrix queries = random_normal(3, 8, 1.0, rng);
  collect("icaf",
          [&](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
            const icaf::IcafVars vars{v.at("icaf.proj_weight"), v.at("icaf.proj_bias"), v.at("icaf.wq"),
                                      v.at("icaf.wk"), v.at("icaf.wv")};
            const ad::Var visual = icaf::prepare_visual(g, frames, segments.size(), vars);
            return g.sum_squares(icaf::fuse(g, g.constant(queries), visual, vars, ip.head_count));
          },
          ip.tensors());

  const Vocabulary vocab({"take", "wash", "cut"}, {"bowl", "knife", "cup"});
  decoder::DecoderConfig dc;
  dc.dims = 8;
  dc.layers = 1;
  dc.heads = 2;
  dc.ffn_multiplier = 2;
  dc.lora_rank = 2;
  dc.lora_alpha = 4.0;
  dc.seed = derive_seed(seed, "decoder");
  decoder::DecoderModel model = decoder::DecoderModel::init(dc, vocab);
  for (auto& [name, lora] : model.adapters) lora.b = random_normal(lora.b.rows(), lora.b.dims(), 0.3, rng);

  NamedMatrices block;
  for (const char* w : {"wq", "wk", "wv", "wo", "w1", "w2"}) {
    const std::string name = std::string("dec0.") + w;
    const auto& lora = model.adapters.at(name);
    block.emplace(name, model.base.at(name));
    block.emplace(name + ".lora_a", lora.a);
    block.emplace(name + ".lora_b", lora.b);
  }
  const Matrix x0 = random_normal(5, 8, 1.0, rng);
  collect("block",
          [&](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
            const nn::Projector project = [&](ad::Graph& gr, ad::Var in, const std::string& name) {
              const ad::Var base = gr.matmul_nt(in, v.at(name));
              const ad::Var low = gr.matmul_nt(gr.matmul_nt(in, v.at(name + ".lora_a")), v.at(name + ".lora_b"));
              return gr.add(base, gr.scale(low, model.adapters.at(name).scale));
            };
            const nn::BlockSpec spec{dc.heads, ad::AttentionMask{true, 0}};
            return g.sum_squares(nn::transformer_block(g, g.constant(x0), "dec0", project, spec));
          },
          block);

  const decoder::TokenVocab tokens(vocab);
  decoder::DecoderSample sample;
  sample.segment_frames = segments;
  sample.intention = queries;
  sample.context = {tokens.example(), tokens.verb_token(1), tokens.noun_token(2), tokens.observed(),
                    tokens.verb_token(0), tokens.noun_token(0)};
  sample.targets = {tokens.verb_token(2), tokens.noun_token(1), tokens.verb_token(0), tokens.noun_token(2)};
  NamedMatrices params = model.adapter_tensors();
  for (auto& [name, t] : ip.trainable_tensors()) params.emplace(name, t);
  collect("decoder",
          [&](ad::Graph& g, const std::map<std::string, ad::Var>& v) {
            return decoder::sample_loss(g, model, ip, decoder::FusionMode::kIcaf, sample, v);
          },
          params);
  return out;
}

PipelineResult run_pipeline(const PipelineConfig& cfg, const fixtures::IntentionGrammar& grammar,
                            const std::function<void(const std::string&)>& log) {
  cfg.validate();
  grammar.validate();
  auto say = [&](const std::string& s) {
    if (log) log(s);
  };
  const Vocabulary& vocab = grammar.vocab;
  PipelineResult result;

  const Splits splits = generate_splits(cfg, grammar);
  const auto& train = splits.train;
  const auto& test = splits.test;
  say("generated " + std::to_string(train.videos.size()) + " train and " + std::to_string(test.videos.size()) +
      " test videos");

  double rec_loss = 0.0;
  const auto rp = train_recognizer(cfg, train, vocab, &rec_loss);
  const auto recognized = recognize_videos(rp, test, vocab);
  for (std::size_t i = 0; i < test.videos.size(); ++i)
    result.recognition_accuracy += recognizer::recognition_accuracy(recognized[i], test.videos[i].observed);
  result.recognition_accuracy /= static_cast<double>(test.videos.size());
  say("recognizer: last loss " + std::to_string(rec_loss) + ", test accuracy " +
      std::to_string(result.recognition_accuracy));

  fixtures::Dataset all = train;
  all.videos.insert(all.videos.end(), test.videos.begin(), test.videos.end());
  auto client = make_vlm_client(cfg, all);
  for (const auto& t : infer_video_intentions(cfg, all, *client)) result.intentions.push_back(t.final_intention);
  say("intentions inferred for " + std::to_string(all.videos.size()) + " videos");

  const retrieval::ExampleStore store = train.store(vocab, intention::HashingTextEncoder(cfg.llm_dims));
  const std::vector<std::string> train_intentions(result.intentions.begin(),
                                                  result.intentions.begin() + static_cast<std::ptrdiff_t>(train.videos.size()));
  const auto samples = training_samples(cfg, train, store, train_intentions, vocab);
  decoder::DecoderBundle bundle = init_bundle(cfg, vocab, train.videos.front().segment_frames.front().dims());
  result.training = train_bundle(cfg, samples, bundle, say);

  std::string prompts;
  for (std::size_t i = 0; i < test.videos.size(); ++i) {
    auto p = predict_video(cfg, bundle, store, test.videos[i], recognized[i],
                           result.intentions[train.videos.size() + i], vocab, i);
    prompts += "# " + test.videos[i].video_id + "\n" + p.prompt + "\n";
    result.predictions.push_back(std::move(p.record));
  }
  result.gold = test.gold();
  result.report = eval::evaluate_ed(result.predictions, result.gold);
  say("action ED " + std::to_string(result.report.action_ed));

  if (!cfg.out.empty()) {
    std::filesystem::create_directories(cfg.out);
    write_text(cfg.out / "config.json", cfg.to_json().dump(2) + "\n");
    store.save(cfg.store.empty() ? cfg.out / "store" : cfg.store, &vocab, cfg.alpha);
    bundle.save(cfg.checkpoint.empty() ? cfg.out / "decoder.icvlckpt" : cfg.checkpoint);
    decoder::write_loss_csv(cfg.out / "loss.csv", result.training);
    eval::write_gold(cfg.out / "gold.jsonl", result.gold);
    eval::write_predictions(cfg.out / "predictions.jsonl", result.predictions);
    write_text(cfg.out / "prompts.txt", prompts);
    write_text(cfg.out / "report.json", result.report.to_json() + "\n");
  }
  return result;
}

}  // namespace icvl::pipeline
