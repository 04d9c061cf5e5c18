// SPDX-License-Identifier: Apache-2.0
//
// icvl: every stage of the anticipation toolkit behind one executable.
//
// Exit codes: 0 success, 2 invalid configuration or arguments, 1 any other
// failure. Reports go to stdout (or --out); the resolved configuration is
// echoed to stderr as a single "config: {...}" line.

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <type_traits>

#include "icvl/error.hpp"
#include "icvl/matrix_io.hpp"
#include "icvl/pipeline.hpp"
#include "icvl/prompt.hpp"

using namespace icvl;
using namespace icvl::pipeline;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Flag {
  std::string key;
  CLI::Option* option;
  std::function<json()> value;
};

struct Globals {
  fs::path config_file;
  bool json_errors = false;
  bool dry_run = false;
  std::string format = "json";
  std::vector<Flag> flags;
};

template <class T>
void flag(CLI::App& app, Globals& g, const std::string& name, const std::string& key, const std::string& help) {
  auto holder = std::make_shared<T>();
  CLI::Option* opt = app.add_option(name, *holder, help);
  if constexpr (std::is_same_v<T, std::vector<int>>) opt->delimiter(',');
  g.flags.push_back({key, opt, [holder] { return json(*holder); }});
}

PipelineConfig resolve(const Globals& g) {
  PipelineConfig cfg;
  if (!g.config_file.empty()) {
    std::ifstream in(g.config_file);
    if (!in) throw ConfigError("cannot read config file " + g.config_file.string());
    json doc;
    try {
      doc = json::parse(in);
    } catch (const json::exception& e) {
      throw ConfigError("config file " + g.config_file.string() + ": " + e.what());
    }
    cfg = PipelineConfig::from_json(doc, cfg);
  }
  apply_env(cfg);
  json overrides = json::object();
  for (const auto& f : g.flags) {
    if (f.option->count() > 0) overrides[f.key] = f.value();
  }
  cfg = PipelineConfig::from_json(overrides, cfg);
  cfg.validate();
  return cfg;
}

json actions_json(const ActionSequence& seq) {
  json out = json::array();
  for (const auto& a : seq) out.push_back({{"v", a.verb_id}, {"n", a.noun_id}});
  return out;
}

ActionSequence actions_from(const json& arr) {
  ActionSequence out;
  for (const auto& a : arr) out.push_back({a.at("v").get<std::size_t>(), a.at("n").get<std::size_t>()});
  return out;
}

void write_jsonl(const fs::path& path, const std::vector<json>& docs) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& d : docs) out << d.dump() << '\n';
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<json> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ": " + e.what());
    }
  }
  return out;
}

void emit(const std::string& text, const fs::path& out) {
  if (out.empty()) {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
    return;
  }
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  std::ofstream f(out);
  if (!f) throw IoError("cannot write " + out.string());
  f << text;
  if (!text.empty() && text.back() != '\n') f << '\n';
}

void require_json_format(const Globals& g, const std::string& command) {
  if (g.format != "json") throw ConfigError("--format " + g.format + " is not available for " + command);
}

// A data directory written by `generate`.
struct DataDir {
  fs::path root;
  Vocabulary vocab;

  explicit DataDir(fs::path dir) : root(std::move(dir)) {
    if (!fs::is_directory(root)) throw IoError("data directory " + root.string() + " does not exist");
    vocab = Vocabulary::load(root / "verbs.txt", root / "nouns.txt");
  }
  fixtures::Dataset split(const std::string& name, const PipelineConfig& cfg) const {
    return load_split(root / name, cfg.segments);
  }
  retrieval::ExampleStore store(const PipelineConfig& cfg) const {
    return retrieval::ExampleStore::load(cfg.store.empty() ? root / "store" : cfg.store);
  }
};

std::map<std::string, std::string> gold_intentions(const DataDir& d, const PipelineConfig& cfg) {
  std::map<std::string, std::string> out;
  for (const char* s : {"train", "test"})
    for (const auto& v : d.split(s, cfg).videos) out[v.video_id] = v.intention;
  return out;
}

std::unique_ptr<intention::VlmClient> client_for(const DataDir& d, const PipelineConfig& cfg) {
  if (cfg.vlm_endpoint.empty()) return std::make_unique<fixtures::MockVlm>(gold_intentions(d, cfg));
  return std::make_unique<intention::SocketVlmClient>(cfg.vlm_endpoint);
}

// Intention per video: intentions.jsonl when present, the client otherwise.
std::vector<std::string> intentions_for(const DataDir& d, const PipelineConfig& cfg, const fixtures::Dataset& data) {
  std::map<std::string, std::string> known;
  if (fs::exists(d.root / "intentions.jsonl")) {
    for (const auto& doc : read_jsonl(d.root / "intentions.jsonl"))
      known[doc.at("video_id").get<std::string>()] = doc.at("intention").get<std::string>();
  }
  std::unique_ptr<intention::VlmClient> client;
  std::vector<std::string> out;
  for (const auto& v : data.videos) {
    if (auto it = known.find(v.video_id); it != known.end()) {
      out.push_back(it->second);
      continue;
    }
    if (!client) client = client_for(d, cfg);
    fixtures::Dataset one;
    one.videos.push_back(v);
    out.push_back(infer_video_intentions(cfg, one, *client).front().final_intention);
  }
  return out;
}

// Observed labels of the test split: recognized.jsonl when present, gold otherwise.
std::vector<ActionSequence> observed_for(const DataDir& d, const fixtures::Dataset& data) {
  std::map<std::string, ActionSequence> known;
  if (fs::exists(d.root / "recognized.jsonl")) {
    for (const auto& doc : read_jsonl(d.root / "recognized.jsonl"))
      known[doc.at("video_id").get<std::string>()] = actions_from(doc.at("observed"));
  } else {
    std::cerr << "note: no recognized.jsonl, using gold observed labels\n";
  }
  std::vector<ActionSequence> out;
  for (const auto& v : data.videos) {
    auto it = known.find(v.video_id);
    out.push_back(it != known.end() ? it->second : v.observed);
  }
  return out;
}

std::size_t find_video(const fixtures::Dataset& data, const std::string& id) {
  for (std::size_t i = 0; i < data.videos.size(); ++i)
    if (data.videos[i].video_id == id) return i;
  throw DataError("unknown video id '" + id + "'");
}

// Retrieval query for a video id: a store record (excluded from its own
// results) or a test video.
struct Query {
  std::vector<double> visual;
  std::vector<double> textual;
  std::optional<std::size_t> exclude;
  ActionSequence observed;
  const fixtures::FixtureVideo* video = nullptr;
};

Query make_query(const DataDir& d, const retrieval::ExampleStore& store,
                 const fixtures::Dataset& test, const std::string& id) {
  Query q;
  for (const auto& r : store.records()) {
    if (r.video_id != id) continue;
    q.visual = r.pooled_visual;
    q.textual = r.pooled_textual;
    q.exclude = r.record_id;
    q.observed = r.observed;
    return q;
  }
  const std::size_t i = find_video(test, id);
  q.video = &test.videos[i];
  q.observed = observed_for(d, test)[i];
  q.visual = retrieval::mean_pool(concat_rows(q.video->segment_frames));
  const intention::HashingTextEncoder enc(store.textual_dims());
  q.textual = fixtures::observed_text_embedding(q.observed, d.vocab, enc);
  return q;
}

decoder::DecoderBundle bundle_for(const PipelineConfig& cfg, const Vocabulary& vocab, std::size_t d_v,
                                  bool require_checkpoint) {
  if (!cfg.checkpoint.empty() && fs::exists(cfg.checkpoint)) return decoder::DecoderBundle::load(cfg.checkpoint);
  if (require_checkpoint) throw IoError("checkpoint " + cfg.checkpoint.string() + " not found");
  return init_bundle(cfg, vocab, d_v);
}

// ---- commands ---------------------------------------------------------------

int cmd_generate(const PipelineConfig& cfg, const Globals& g, const fs::path& out) {
  require_json_format(g, "generate");
  if (out.empty()) throw ConfigError("generate needs --out DIR");
  const auto grammar = load_grammar(cfg);
  const Splits s = generate_splits(cfg, grammar);
  fs::create_directories(out);
  grammar.save(out / "grammar.json");
  grammar.vocab.save(out / "verbs.txt", out / "nouns.txt");
  save_split(out / "train", s.train);
  save_split(out / "test", s.test);
  const intention::HashingTextEncoder enc(cfg.llm_dims);
  s.train.store(grammar.vocab, enc).save(cfg.store.empty() ? out / "store" : cfg.store, &grammar.vocab, cfg.alpha);
  std::cout << json{{"train_videos", s.train.videos.size()},
                    {"test_videos", s.test.videos.size()},
                    {"segments", cfg.segments},
                    {"future_length", cfg.future_length},
                    {"dir", out.string()}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_recognize(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const fs::path& out) {
  require_json_format(g, "recognize");
  const auto train = d.split("train", cfg);
  const auto test = d.split("test", cfg);
  double loss = 0.0;
  const auto params = train_recognizer(cfg, train, d.vocab, &loss);
  if (!cfg.checkpoint.empty()) write_checkpoint(cfg.checkpoint, params.to_checkpoint());
  const auto recognized = recognize_videos(params, test, d.vocab);
  std::vector<json> docs;
  double acc = 0.0;
  for (std::size_t i = 0; i < test.videos.size(); ++i) {
    docs.push_back({{"video_id", test.videos[i].video_id}, {"observed", actions_json(recognized[i])}});
    acc += recognizer::recognition_accuracy(recognized[i], test.videos[i].observed);
  }
  const fs::path target = out.empty() ? d.root / "recognized.jsonl" : out;
  write_jsonl(target, docs);
  std::cout << json{{"videos", test.videos.size()},
                    {"accuracy", acc / static_cast<double>(test.videos.size())},
                    {"final_loss", loss},
                    {"output", target.string()}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_intend(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const std::string& video,
               const fs::path& out) {
  require_json_format(g, "intend");
  fixtures::Dataset data = d.split("train", cfg);
  const auto test = d.split("test", cfg);
  data.videos.insert(data.videos.end(), test.videos.begin(), test.videos.end());
  if (!video.empty()) {
    const auto one = data.videos[find_video(data, video)];
    data.videos = {one};
  }
  auto client = client_for(d, cfg);
  const auto traces = infer_video_intentions(cfg, data, *client);
  std::vector<json> docs;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    docs.push_back({{"video_id", data.videos[i].video_id},
                    {"intention", traces[i].final_intention},
                    {"trace", json::parse(traces[i].to_json())}});
  }
  if (!video.empty() && out.empty()) {
    std::cout << docs.front().dump(2) << '\n';
    return 0;
  }
  const fs::path target = out.empty() ? d.root / "intentions.jsonl" : out;
  write_jsonl(target, docs);
  std::cout << json{{"videos", docs.size()}, {"output", target.string()}}.dump(2) << '\n';
  return 0;
}

int cmd_fuse(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const std::string& video,
             const std::string& text, const fs::path& out) {
  require_json_format(g, "fuse");
  if (video.empty()) throw ConfigError("fuse needs --video ID");
  fixtures::Dataset data = d.split("test", cfg);
  const auto train = d.split("train", cfg);
  data.videos.insert(data.videos.end(), train.videos.begin(), train.videos.end());
  const auto& v = data.videos[find_video(data, video)];
  fixtures::Dataset one;
  one.videos.push_back(v);
  const std::string intent = text.empty() ? intentions_for(d, cfg, one).front() : text;
  auto bundle = bundle_for(cfg, d.vocab, v.segment_frames.front().dims(), false);
  const intention::HashingTextEncoder enc(bundle.icaf.llm_dims());
  decoder::DecoderSample s;
  s.segment_frames = v.segment_frames;
  s.intention = intention::embed_intention(intent, enc, cfg.seq_len).rows;
  const Matrix fused = decoder::fusion_prefix(s, bundle.icaf, cfg.fusion);
  if (!out.empty()) write_matrix(out, fused);
  json rows = json::array();
  for (std::size_t r = 0; r < fused.rows(); ++r) rows.push_back(std::vector<double>(fused.row(r).begin(), fused.row(r).end()));
  json report{{"video_id", video}, {"intention", intent}, {"fusion", decoder::to_string(cfg.fusion)},
              {"rows", fused.rows()}, {"dims", fused.dims()}};
  if (out.empty()) report["fused"] = rows;
  std::cout << report.dump(2) << '\n';
  return 0;
}

int cmd_select(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const std::string& video,
               const fs::path& out) {
  require_json_format(g, "select");
  if (video.empty()) throw ConfigError("select needs --video ID");
  const auto store = d.store(cfg);
  const auto test = d.split("test", cfg);
  const Query q = make_query(d, store, test, video);
  retrieval::SelectOptions o;
  o.alpha = cfg.alpha;
  o.k = cfg.k_examples;
  o.exclude = q.exclude;
  o.mode = cfg.selection;
  o.threads = cfg.threads;
  json rows = json::array();
  json ids = json::array();
  for (const auto& r : retrieval::rank_examples(q.visual, q.textual, store, o)) {
    rows.push_back({{"record_id", r.record_id},
                    {"video_id", store[r.record_id].video_id},
                    {"s_v", r.s_v},
                    {"s_t", r.s_t},
                    {"s_v_norm", r.s_v_norm},
                    {"s_t_norm", r.s_t_norm},
                    {"s_fused", r.s_fused}});
    ids.push_back(r.record_id);
  }
  emit(json{{"query", video},
            {"alpha", cfg.alpha},
            {"k", cfg.k_examples},
            {"selection", retrieval::to_string(cfg.selection)},
            {"ids", ids},
            {"examples", rows}}
           .dump(2),
       out);
  return 0;
}

int cmd_prompt(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const std::string& video,
               const fs::path& out) {
  require_json_format(g, "prompt");
  if (video.empty()) throw ConfigError("prompt needs --video ID");
  const auto store = d.store(cfg);
  const auto test = d.split("test", cfg);
  const Query q = make_query(d, store, test, video);
  const auto examples = select_for(cfg, store, q.visual, q.textual, q.exclude);
  // Prefix height of the fused embedding for the configured fusion mode.
  const std::size_t t = cfg.segments * (test.videos.front().segment_frames.front().rows());
  std::size_t rows = t;
  if (cfg.fusion == decoder::FusionMode::kIcaf) rows = cfg.seq_len;
  if (cfg.fusion == decoder::FusionMode::kConcat) rows = cfg.seq_len + t;
  emit(render_query_prompt(examples, q.observed, rows, d.vocab), out);
  return 0;
}

int cmd_train(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const fs::path& out) {
  require_json_format(g, "train");
  const auto train = d.split("train", cfg);
  const auto store = d.store(cfg);
  const auto samples = training_samples(cfg, train, store, intentions_for(d, cfg, train), d.vocab);
  auto bundle = init_bundle(cfg, d.vocab, train.videos.front().segment_frames.front().dims());
  const auto result = train_bundle(cfg, samples, bundle, [](const std::string& s) { std::cerr << s << '\n'; });
  const fs::path ckpt = cfg.checkpoint.empty() ? d.root / "decoder.icvlckpt" : cfg.checkpoint;
  bundle.save(ckpt);
  const fs::path loss = out.empty() ? d.root / "loss.csv" : out;
  decoder::write_loss_csv(loss, result);
  std::cout << json{{"samples", samples.size()},
                    {"steps", result.steps},
                    {"final_loss", result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()},
                    {"lora_parameters", bundle.model.lora_parameter_count()},
                    {"checkpoint", ckpt.string()},
                    {"loss_csv", loss.string()}}
                   .dump(2)
            << '\n';
  return 0;
}

int cmd_predict(const PipelineConfig& cfg, const Globals& g, const DataDir& d, const fs::path& out) {
  require_json_format(g, "predict");
  PipelineConfig c = cfg;
  if (c.checkpoint.empty()) c.checkpoint = d.root / "decoder.icvlckpt";
  const auto test = d.split("test", c);
  const auto store = d.store(c);
  const auto bundle = bundle_for(c, d.vocab, 0, true);
  const auto observed = observed_for(d, test);
  const auto intents = intentions_for(d, c, test);
  std::vector<eval::PredictionRecord> preds;
  for (std::size_t i = 0; i < test.videos.size(); ++i)
    preds.push_back(predict_video(c, bundle, store, test.videos[i], observed[i], intents[i], d.vocab, i).record);
  const fs::path target = out.empty() ? d.root / "predictions.jsonl" : out;
  eval::write_predictions(target, preds);
  std::cout << json{{"videos", preds.size()}, {"candidates", c.candidates}, {"output", target.string()}}.dump(2)
            << '\n';
  return 0;
}

int cmd_eval_ed(const Globals& g, const fs::path& pred, const fs::path& gold, const fs::path& out) {
  const auto report = eval::evaluate_ed(eval::read_predictions(pred), eval::read_gold(gold));
  emit(g.format == "csv" ? report.to_csv() : report.to_json(), out);
  return 0;
}

int cmd_eval_map(const PipelineConfig& cfg, const Globals& g, const fs::path& pred, const fs::path& scores_file,
                 const fs::path& gold_file, const fs::path& train_gold_file, std::size_t verbs,
                 const fs::path& out) {
  const auto gold = eval::read_gold(gold_file);
  const auto train_gold = train_gold_file.empty() ? gold : eval::read_gold(train_gold_file);
  if (verbs == 0) throw ConfigError("eval-map needs --verbs N (verb classes including the OOV slot)");
  Matrix scores;
  if (!scores_file.empty()) {
    scores = read_matrix(scores_file);
  } else {
    if (pred.empty()) throw ConfigError("eval-map needs --pred or --scores");
    auto preds = eval::read_predictions(pred);
    std::map<std::string, eval::PredictionRecord> by_id;
    for (auto& p : preds) by_id[p.video_id] = std::move(p);
    std::vector<eval::PredictionRecord> ordered;
    for (const auto& v : gold) {
      auto it = by_id.find(v.video_id);
      if (it == by_id.end()) throw DataError("no prediction for video '" + v.video_id + "'");
      ordered.push_back(it->second);
    }
    scores = candidate_verb_scores(ordered, verbs);
  }
  if (scores.rows() != gold.size() || scores.dims() != verbs) {
    throw ShapeError("scores are " + scores.shape_string() + ", expected " + std::to_string(gold.size()) + "×" +
                     std::to_string(verbs));
  }
  std::vector<eval::HorizonInput> inputs;
  for (int p : cfg.horizons) inputs.push_back({p, scores, eval::horizon_targets(gold, verbs, p)});
  const auto split = eval::make_class_split(eval::verb_counts(train_gold, verbs), cfg.freq_threshold);
  const auto report = eval::map_report(inputs, split);
  emit(g.format == "csv" ? report.to_csv() : report.to_json(), out);
  return 0;
}

int cmd_gradcheck(const PipelineConfig& cfg, const Globals& g, const fs::path& out) {
  require_json_format(g, "gradcheck");
  const auto reports = gradient_suite(cfg.seed);
  json rows = json::array();
  double worst = 0.0;
  for (const auto& r : reports) {
    rows.push_back({{"tensor", r.parameter_name}, {"max_abs_err", r.max_abs_err}, {"max_rel_err", r.max_rel_err},
                    {"passed", r.passed}});
    worst = std::max(worst, r.max_rel_err);
  }
  const bool ok = all_passed(reports);
  emit(json{{"passed", ok}, {"max_rel_err", worst}, {"tensors", rows}}.dump(2), out);
  return ok ? 0 : 1;
}

int cmd_pipeline(const PipelineConfig& cfg, const Globals& g, bool baseline) {
  require_json_format(g, "pipeline");
  const auto grammar = load_grammar(cfg);
  auto log = [](const std::string& s) { std::cerr << s << '\n'; };
  const auto full = run_pipeline(cfg, grammar, log);
  json report{{"full", json::parse(full.report.to_json())}, {"recognition_accuracy", full.recognition_accuracy}};
  if (baseline) {
    PipelineConfig b = baseline_config(cfg);
    if (!b.out.empty()) b.out /= "baseline";
    b.store.clear();
    b.checkpoint.clear();
    report["baseline"] = json::parse(run_pipeline(b, grammar, log).report.to_json());
  }
  std::cout << report.dump(2) << '\n';
  return 0;
}

void report_error(const Globals& g, const std::string& kind, const std::string& message) {
  if (g.json_errors) {
    std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  } else {
    std::cerr << "error (" << kind << "): " << message << '\n';
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Intention-conditioned long-term action anticipation toolkit"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "JSON configuration file");
  app.add_flag("--json-errors", g.json_errors, "Write errors to stderr as JSON");
  app.add_flag("--dry-run", g.dry_run, "Validate the configuration and stop");
  app.add_option("--format", g.format, "Report format")->check(CLI::IsMember({"json", "csv"}));

  flag<std::size_t>(app, g, "--threads", "threads", "Worker thread cap");
  flag<std::uint64_t>(app, g, "--seed", "seed", "Base seed");
  flag<std::string>(app, g, "--vlm-endpoint", "vlm_endpoint", "VLM socket endpoint (empty: fixture mock)");
  flag<std::string>(app, g, "--grammar", "grammar", "Grammar JSON (default: built-in world)");
  flag<std::string>(app, g, "--store", "store", "Example store directory");
  flag<std::string>(app, g, "--checkpoint", "checkpoint", "Checkpoint path");
  flag<double>(app, g, "--alpha", "alpha", "Textual weight of the fused selection score");
  flag<std::size_t>(app, g, "--k-examples,-k", "k_examples", "Examples per prompt");
  flag<std::size_t>(app, g, "--n-frm", "n_frm", "Frames sent to the VLM");
  flag<std::string>(app, g, "--fusion", "fusion", "icaf | concat | visual_query | none");
  flag<std::string>(app, g, "--selection-mode", "selection", "fused | visual | textual");
  flag<std::size_t>(app, g, "--candidates", "candidates", "Candidate sequences K");
  flag<std::size_t>(app, g, "--future-length", "future_length", "Predicted actions Z");
  flag<std::size_t>(app, g, "--segments", "segments", "Observed segments N_seg");
  flag<std::vector<int>>(app, g, "--horizons", "horizons", "Observation percentages for mAP");
  flag<std::size_t>(app, g, "--freq-threshold", "freq_threshold", "Training count at which a class is frequent");
  flag<std::size_t>(app, g, "--train-videos", "train_videos", "Generated training videos");
  flag<std::size_t>(app, g, "--test-videos", "test_videos", "Generated test videos");
  flag<std::size_t>(app, g, "--llm-dims", "llm_dims", "Decoder width d_l");
  flag<std::size_t>(app, g, "--seq-len", "seq_len", "Intention embedding rows");
  flag<std::size_t>(app, g, "--icaf-heads", "icaf_heads", "ICAF attention heads");
  flag<bool>(app, g, "--icaf-strict", "icaf_strict", "Pin the ICAF attention projections to identity");
  flag<std::size_t>(app, g, "--decoder-layers", "decoder_layers", "Decoder blocks");
  flag<std::size_t>(app, g, "--decoder-heads", "decoder_heads", "Decoder attention heads");
  flag<std::size_t>(app, g, "--lora-rank", "lora_rank", "LoRA rank");
  flag<double>(app, g, "--lora-alpha", "lora_alpha", "LoRA alpha");
  flag<double>(app, g, "--decoder-lr", "decoder_lr", "Decoder learning rate");
  flag<std::size_t>(app, g, "--decoder-epochs", "decoder_epochs", "Decoder epochs");
  flag<std::size_t>(app, g, "--decoder-batch", "decoder_batch", "Decoder batch size");
  flag<double>(app, g, "--temperature", "temperature", "Sampling temperature (0: greedy)");
  flag<double>(app, g, "--recognizer-lr", "recognizer_lr", "Recognizer learning rate");
  flag<std::size_t>(app, g, "--recognizer-steps", "recognizer_steps", "Recognizer descent steps");

  fs::path out, data, pred, gold, train_gold, scores;
  std::string video, intention_text;
  std::size_t verbs = 0;
  bool baseline = false;
  app.add_option("--out,-o", out, "Output path");

  auto* gen = app.add_subcommand("generate", "Write a synthetic data directory");
  auto* rec = app.add_subcommand("recognize", "Train the recognizer and label the test split");
  auto* intend = app.add_subcommand("intend", "Infer intentions through the VLM client");
  auto* fuse = app.add_subcommand("fuse", "Fused prefix embedding of one video");
  auto* sel = app.add_subcommand("select", "Rank in-context examples for one video");
  auto* prm = app.add_subcommand("prompt", "Render the prompt of one video");
  auto* trn = app.add_subcommand("train", "Fine-tune the decoder adapters and ICAF");
  auto* prd = app.add_subcommand("predict", "Generate candidate futures for the test split");
  auto* eed = app.add_subcommand("eval-ed", "Edit-distance report");
  auto* emap = app.add_subcommand("eval-map", "Multi-label mAP report over horizons");
  auto* gck = app.add_subcommand("gradcheck", "Finite-difference gradient checks");
  auto* pipe = app.add_subcommand("pipeline", "Run every stage end to end");
  for (auto* sc : {rec, intend, fuse, sel, prm, trn, prd}) sc->add_option("--data,-d", data, "Data directory")->required();
  for (auto* sc : {intend, fuse, sel, prm}) sc->add_option("--video", video, "Video id");
  fuse->add_option("--intention", intention_text, "Intention text (default: inferred)");
  eed->add_option("--pred", pred, "Predictions JSONL")->required();
  eed->add_option("--gold", gold, "Gold JSONL")->required();
  emap->add_option("--pred", pred, "Predictions JSONL (scores from candidate verbs)");
  emap->add_option("--scores", scores, "Score matrix (videos × verbs)");
  emap->add_option("--gold", gold, "Gold JSONL")->required();
  emap->add_option("--train-gold", train_gold, "Training gold JSONL for the frequent/rare split");
  emap->add_option("--verbs", verbs, "Verb classes including the OOV slot")->required();
  pipe->add_flag("--baseline", baseline, "Also run the no-retrieval, no-fusion baseline");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error(g, "Usage", e.what());
    return 2;
  }

  try {
    PipelineConfig cfg = resolve(g);
    if (pipe->parsed() && !out.empty()) cfg.out = out;
    std::cerr << "config: " << cfg.to_json().dump() << '\n';
    if (g.dry_run) return 0;
    if (gen->parsed()) return cmd_generate(cfg, g, out);
    if (eed->parsed()) return cmd_eval_ed(g, pred, gold, out);
    if (emap->parsed()) return cmd_eval_map(cfg, g, pred, scores, gold, train_gold, verbs, out);
    if (gck->parsed()) return cmd_gradcheck(cfg, g, out);
    if (pipe->parsed()) return cmd_pipeline(cfg, g, baseline);
    const DataDir d(data);
    if (rec->parsed()) return cmd_recognize(cfg, g, d, out);
    if (intend->parsed()) return cmd_intend(cfg, g, d, video, out);
    if (fuse->parsed()) return cmd_fuse(cfg, g, d, video, intention_text, out);
    if (sel->parsed()) return cmd_select(cfg, g, d, video, out);
    if (prm->parsed()) return cmd_prompt(cfg, g, d, video, out);
    if (trn->parsed()) return cmd_train(cfg, g, d, out);
    if (prd->parsed()) return cmd_predict(cfg, g, d, out);
  } catch (const ConfigError& e) {
    report_error(g, to_string(e.kind()), e.what());
    return 2;
  } catch (const Error& e) {
    report_error(g, to_string(e.kind()), e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(g, "Internal", e.what());
    return 1;
  }
  return 1;
}
