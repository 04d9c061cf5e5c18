// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "icvl/error.hpp"
#include "icvl/pipeline.hpp"

using namespace icvl;
using namespace icvl::pipeline;
using nlohmann::json;

namespace {

PipelineConfig small_config() {
  PipelineConfig c;
  c.train_videos = 16;
  c.test_videos = 4;
  c.recognizer_steps = 150;
  c.decoder_epochs = 2;
  c.llm_dims = 16;
  c.decoder_layers = 1;
  return c;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(PipelineConfig, JsonRoundTripAndOverlay) {
  PipelineConfig c;
  c.alpha = 0.25;
  c.fusion = decoder::FusionMode::kConcat;
  c.selection = retrieval::SelectionMode::kTextual;
  c.horizons = {10, 90};
  c.vlm_endpoint = "unix:/tmp/x.sock";
  const PipelineConfig back = PipelineConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  const PipelineConfig partial = PipelineConfig::from_json(json{{"k_examples", 7}}, c);
  EXPECT_EQ(partial.k_examples, 7u);
  EXPECT_EQ(partial.alpha, 0.25);
}

TEST(PipelineConfig, RejectsUnknownKeysAndBadValues) {
  EXPECT_THROW(PipelineConfig::from_json(json{{"alhpa", 0.5}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(json{{"k_examples", -1}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(json{{"k_examples", "3"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(json{{"fusion", "sum"}}), ConfigError);
  EXPECT_THROW(PipelineConfig::from_json(json::array()), ConfigError);
  PipelineConfig c;
  EXPECT_NO_THROW(c.validate());
  c.alpha = 1.5;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.decoder_heads = 3;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.horizons = {0};
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.k_examples = c.train_videos;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(PipelineConfig, DefaultsFollowProtocolConstants) {
  const PipelineConfig c;
  EXPECT_EQ(c.candidates, 5u);
  EXPECT_EQ(c.future_length, 20u);
  EXPECT_EQ(c.segments, 8u);
  EXPECT_EQ(c.horizons, (std::vector<int>{25, 50, 75}));
  EXPECT_EQ(c.k_examples, 3u);
  EXPECT_EQ(c.alpha, 0.5);
  EXPECT_EQ(c.fusion, decoder::FusionMode::kIcaf);
  EXPECT_EQ(c.selection, retrieval::SelectionMode::kFused);
}

TEST(PipelineConfig, EnvironmentOverlay) {
  std::map<std::string, std::string> env{{"ICVL_SEED", "42"}, {"ICVL_THREADS", "3"}, {"ICVL_VLM_ENDPOINT", "h:1"}};
  auto get = [&](const char* name) -> const char* {
    auto it = env.find(name);
    return it == env.end() ? nullptr : it->second.c_str();
  };
  PipelineConfig c;
  apply_env(c, get);
  EXPECT_EQ(c.seed, 42u);
  EXPECT_EQ(c.threads, 3u);
  EXPECT_EQ(c.vlm_endpoint, "h:1");
  env["ICVL_SEED"] = "-4";
  EXPECT_THROW(apply_env(c, get), ConfigError);
  env["ICVL_SEED"] = "12x";
  EXPECT_THROW(apply_env(c, get), ConfigError);
}

TEST(Pipeline, ContextTokensLayout) {
  const Vocabulary v({"take", "cut"}, {"bowl", "knife"});
  const decoder::TokenVocab t(v);
  retrieval::ExampleRecord e;
  e.future = {{1, 0}};
  const auto ctx = context_tokens(t, {e, e}, {{0, 1}, {1, 1}});
  const std::vector<std::size_t> want{t.example(),       t.verb_token(1), t.noun_token(0), t.example(),
                                      t.verb_token(1),   t.noun_token(0), t.observed(),    t.verb_token(0),
                                      t.noun_token(1),   t.verb_token(1), t.noun_token(1)};
  EXPECT_EQ(ctx, want);
  EXPECT_EQ(context_tokens(t, {}, {}), std::vector<std::size_t>{t.observed()});
}

TEST(Pipeline, CandidateVerbScores) {
  const std::vector<eval::PredictionRecord> preds{{"a", {{{0, 0}, {2, 1}}, {{0, 1}}}}, {"b", {{{1, 0}}}}};
  const Matrix s = candidate_verb_scores(preds, 3);
  EXPECT_EQ(s(0, 0), 1.0);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_EQ(s(0, 2), 0.5);
  EXPECT_EQ(s(1, 1), 1.0);
  EXPECT_THROW(candidate_verb_scores(preds, 2), DataError);
}

TEST(Pipeline, BaselineDropsFusionAndExamples) {
  const PipelineConfig b = baseline_config(PipelineConfig{});
  EXPECT_EQ(b.fusion, decoder::FusionMode::kNone);
  EXPECT_EQ(b.k_examples, 0u);
  EXPECT_EQ(b.candidates, 5u);
}

TEST(Pipeline, SplitRoundTrip) {
  const PipelineConfig c = small_config();
  const Splits s = generate_splits(c, fixtures::default_grammar());
  EXPECT_EQ(s.train.videos.front().video_id, "train00");
  EXPECT_EQ(s.test.videos.front().video_id, "test0");
  const auto dir = std::filesystem::temp_directory_path() / "icvl_split_rt";
  save_split(dir, s.test);
  const auto back = load_split(dir, c.segments);
  std::filesystem::remove_all(dir);
  ASSERT_EQ(back.videos.size(), s.test.videos.size());
  for (std::size_t i = 0; i < back.videos.size(); ++i) {
    EXPECT_EQ(back.videos[i].video_id, s.test.videos[i].video_id);
    EXPECT_EQ(back.videos[i].intention, s.test.videos[i].intention);
    EXPECT_EQ(back.videos[i].observed, s.test.videos[i].observed);
    EXPECT_EQ(back.videos[i].future, s.test.videos[i].future);
    EXPECT_EQ(back.videos[i].segment_frames, s.test.videos[i].segment_frames);
  }
}

TEST(Pipeline, TrainingSamplesExcludeSelf) {
  const PipelineConfig c = small_config();
  const auto g = fixtures::default_grammar();
  const Splits s = generate_splits(c, g);
  const auto store = s.train.store(g.vocab, intention::HashingTextEncoder(c.llm_dims));
  std::vector<std::string> intents;
  for (const auto& v : s.train.videos) intents.push_back(v.intention);
  const auto samples = training_samples(c, s.train, store, intents, g.vocab);
  ASSERT_EQ(samples.size(), 16u);
  const decoder::TokenVocab t(g.vocab);
  // 3 examples of 1 + 40 tokens, then OBS + 16 observed tokens.
  EXPECT_EQ(samples[0].context.size(), 3u * 41 + 17);
  EXPECT_EQ(samples[0].targets, t.encode(s.train.videos[0].future));
  EXPECT_EQ(samples[0].intention.rows(), c.seq_len);
  for (std::size_t i = 0; i < 16; ++i) {
    const auto ex = select_for(c, store, store[i].pooled_visual, store[i].pooled_textual, i);
    for (const auto& e : ex) EXPECT_NE(e.record_id, i);
  }
  intents.pop_back();
  EXPECT_THROW(training_samples(c, s.train, store, intents, g.vocab), DataError);
}

TEST(Pipeline, GradientSuitePasses) {
  const auto reports = gradient_suite(3);
  std::set<std::string> checks;
  for (const auto& r : reports) {
    EXPECT_TRUE(r.passed) << r.parameter_name << " rel " << r.max_rel_err;
    checks.insert(r.parameter_name.substr(0, r.parameter_name.find('/')));
  }
  EXPECT_EQ(checks, (std::set<std::string>{"block", "decoder", "icaf"}));
  // 5 ICAF tensors, 6 block weights with 2 adapter tensors each.
  EXPECT_GE(reports.size(), 5u + 18u);
}

TEST(Pipeline, SmallRunIsDeterministicAndWritesArtifacts) {
  PipelineConfig c = small_config();
  const auto dir = std::filesystem::temp_directory_path() / "icvl_pipeline_small";
  std::filesystem::remove_all(dir);
  c.out = dir;
  std::vector<std::string> log;
  const auto a = run_pipeline(c, fixtures::default_grammar(), [&](const std::string& s) { log.push_back(s); });
  c.out.clear();
  const auto b = run_pipeline(c, fixtures::default_grammar());
  EXPECT_FALSE(log.empty());
  ASSERT_EQ(a.predictions.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(a.predictions[i].candidates, b.predictions[i].candidates);
    EXPECT_EQ(a.predictions[i].candidates.size(), 5u);
    for (const auto& cand : a.predictions[i].candidates) EXPECT_EQ(cand.size(), 20u);
  }
  EXPECT_EQ(a.report.action_ed, b.report.action_ed);
  EXPECT_EQ(a.report.per_video.size(), 4u);
  EXPECT_GE(a.report.action_ed, 0.0);
  EXPECT_LE(a.report.action_ed, 1.0);
  EXPECT_EQ(a.intentions.size(), 20u);
  EXPECT_EQ(a.intentions[16], fixtures::generate_dataset(fixtures::default_grammar(), 4, 8, 20, "test", 1).videos[0].intention);
  for (const char* f : {"config.json", "decoder.icvlckpt", "loss.csv", "gold.jsonl", "predictions.jsonl", "prompts.txt",
                        "report.json", "store/manifest.json"}) {
    EXPECT_TRUE(std::filesystem::exists(dir / f)) << f;
  }
  EXPECT_EQ(eval::read_predictions(dir / "predictions.jsonl").size(), 4u);
  EXPECT_NE(slurp(dir / "prompts.txt").find("<VIS:16>"), std::string::npos);
  const auto bundle = decoder::DecoderBundle::load(dir / "decoder.icvlckpt");
  EXPECT_EQ(bundle.fusion, decoder::FusionMode::kIcaf);
  std::filesystem::remove_all(dir);
}

TEST(Pipeline, UnreachableEndpointIsTransportError) {
  PipelineConfig c = small_config();
  c.vlm_endpoint = "unix:/nonexistent/icvl.sock";
  c.recognizer_steps = 1;
  EXPECT_THROW(run_pipeline(c, fixtures::default_grammar()), intention::TransportError);
}
