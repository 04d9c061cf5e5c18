// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "icvl/decoder.hpp"
#include "icvl/eval.hpp"
#include "icvl/fixtures.hpp"
#include "icvl/grad_check.hpp"
#include "icvl/intention.hpp"
#include "icvl/recognizer.hpp"
#include "icvl/retrieval.hpp"

namespace icvl::pipeline {

/// Every knob of a run. JSON keys are the field names.
struct PipelineConfig {
  // Paths; empty means "not used" (grammar: the built-in world).
  std::filesystem::path grammar;
  std::filesystem::path store;
  std::filesystem::path fixtures;
  std::filesystem::path checkpoint;
  std::filesystem::path out;

  std::string vlm_endpoint;  // empty: answer from the fixture
  std::uint64_t seed = 7;
  std::size_t threads = 1;

  double alpha = retrieval::kDefaultAlpha;
  std::size_t k_examples = retrieval::kReportingExampleCount;
  std::size_t n_frm = intention::kDefaultFrameCount;
  decoder::FusionMode fusion = decoder::FusionMode::kIcaf;
  retrieval::SelectionMode selection = retrieval::SelectionMode::kFused;

  std::size_t candidates = eval::kDefaultCandidates;
  std::size_t future_length = eval::kDefaultFutureLength;
  std::size_t segments = eval::kDefaultSegments;
  std::vector<int> horizons = eval::kDefaultHorizons;
  std::size_t freq_threshold = eval::kDefaultFreqThreshold;

  std::size_t train_videos = 64;
  std::size_t test_videos = 16;

  std::size_t llm_dims = 32;
  std::size_t seq_len = intention::kDefaultSeqLen;
  std::size_t icaf_heads = 1;
  bool icaf_strict = false;

  std::size_t decoder_layers = 2;
  std::size_t decoder_heads = 4;
  std::size_t lora_rank = 8;
  double lora_alpha = 8.0;
  double decoder_lr = 1e-2;
  std::size_t decoder_epochs = 90;
  std::size_t decoder_batch = 4;
  double temperature = decoder::kDefaultTemperature;

  double recognizer_lr = recognizer::kDefaultLearningRate;
  std::size_t recognizer_steps = 300;

  nlohmann::json to_json() const;
  /// Overlays the keys present in `doc` on `base`. Unknown keys and
  /// mistyped values raise ConfigError.
  static PipelineConfig from_json(const nlohmann::json& doc, PipelineConfig base);
  static PipelineConfig from_json(const nlohmann::json& doc);

  /// ConfigError on out-of-range values.
  void validate() const;
};

/// Applies ICVL_VLM_ENDPOINT, ICVL_SEED and ICVL_THREADS when set.
/// `getenv` defaults to std::getenv.
void apply_env(PipelineConfig& cfg,
               const std::function<const char*(const char*)>& getenv = {});

/// Grammar file when configured, otherwise the built-in world.
fixtures::IntentionGrammar load_grammar(const PipelineConfig& cfg);

/// Mock client when the endpoint is empty, socket client otherwise.
std::unique_ptr<intention::VlmClient> make_vlm_client(const PipelineConfig& cfg,
                                                      const fixtures::Dataset& data);

/// Decoder context: EX + future of each example, then OBS + observed.
std::vector<std::size_t> context_tokens(const decoder::TokenVocab& tokens,
                                        const std::vector<retrieval::ExampleRecord>& examples,
                                        const ActionSequence& observed);

/// Prompt text for one query, examples first.
std::string render_query_prompt(const std::vector<retrieval::ExampleRecord>& examples,
                                const ActionSequence& observed, std::size_t embedding_rows,
                                const Vocabulary& vocab);

/// Share of candidates whose future contains each verb (videos × verbs).
Matrix candidate_verb_scores(const std::vector<eval::PredictionRecord>& predictions, std::size_t verb_count);

/// Same world with fusion `none` and no examples.
PipelineConfig baseline_config(const PipelineConfig& cfg);

// Stages. Each one is also reachable from its own CLI command.

struct Splits {
  fixtures::Dataset train;
  fixtures::Dataset test;
};

/// Train videos "train<i>" and test videos "test<i>" from one grammar.
Splits generate_splits(const PipelineConfig& cfg, const fixtures::IntentionGrammar& grammar);

/// A split directory holds gold.jsonl and frames.icvlmat.
void save_split(const std::filesystem::path& dir, const fixtures::Dataset& data);
fixtures::Dataset load_split(const std::filesystem::path& dir, std::size_t n_seg);

/// Plain descent on the gold observed labels of `train`.
recognizer::RecognizerParams train_recognizer(const PipelineConfig& cfg, const fixtures::Dataset& train,
                                              const Vocabulary& vocab, double* last_loss = nullptr);
std::vector<ActionSequence> recognize_videos(const recognizer::RecognizerParams& params,
                                             const fixtures::Dataset& data, const Vocabulary& vocab);

/// One trace per video over n_frm sampled frames.
std::vector<intention::IntentionTrace> infer_video_intentions(const PipelineConfig& cfg,
                                                              const fixtures::Dataset& data,
                                                              intention::VlmClient& client);

/// Top-k examples for a query; empty when k_examples is 0.
std::vector<retrieval::ExampleRecord> select_for(const PipelineConfig& cfg, const retrieval::ExampleStore& store,
                                                 const std::vector<double>& visual,
                                                 const std::vector<double>& textual,
                                                 std::optional<std::size_t> exclude);

/// Decoder samples for the store's own videos: gold observed labels,
/// examples selected with the video itself excluded. `data` and `store`
/// must list the same videos in the same order.
std::vector<decoder::DecoderSample> training_samples(const PipelineConfig& cfg, const fixtures::Dataset& data,
                                                     const retrieval::ExampleStore& store,
                                                     const std::vector<std::string>& intentions,
                                                     const Vocabulary& vocab);

decoder::DecoderBundle init_bundle(const PipelineConfig& cfg, const Vocabulary& vocab, std::size_t visual_dims);

decoder::TrainResult train_bundle(const PipelineConfig& cfg, const std::vector<decoder::DecoderSample>& samples,
                                  decoder::DecoderBundle& bundle, const std::function<void(const std::string&)>& log = {});

struct VideoPrediction {
  eval::PredictionRecord record;
  std::string prompt;
  std::vector<retrieval::ExampleRecord> examples;
};

/// Retrieval, prompt and K candidates for one unseen video. `index`
/// picks the sampling stream.
VideoPrediction predict_video(const PipelineConfig& cfg, const decoder::DecoderBundle& bundle,
                              const retrieval::ExampleStore& store, const fixtures::FixtureVideo& video,
                              const ActionSequence& observed, const std::string& intention_text,
                              const Vocabulary& vocab, std::size_t index);

/// Central-difference checks on small random shapes, reported per tensor
/// as "<check>/<tensor>": every ICAF tensor through fuse ("icaf"), the
/// base weights and adapters of one causal decoder block ("block"), and
/// the adapters plus ICAF tensors through the decoder loss ("decoder").
std::vector<GradCheckReport> gradient_suite(std::uint64_t seed, const GradCheckOptions& options = {});

struct PipelineResult {
  eval::EdReport report;
  std::vector<eval::PredictionRecord> predictions;
  std::vector<eval::GoldVideo> gold;
  double recognition_accuracy = 0.0;
  decoder::TrainResult training;
  std::vector<std::string> intentions;
};

/// generate → recognize → intend → embed → select → train → predict →
/// evaluate. Training videos use their gold observed labels; test videos
/// use the recognizer's output. Writes artifacts under cfg.out when set.
PipelineResult run_pipeline(const PipelineConfig& cfg, const fixtures::IntentionGrammar& grammar,
                            const std::function<void(const std::string&)>& log = {});

}  // namespace icvl::pipeline
