// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "icvl/eval.hpp"
#include "icvl/intention.hpp"
#include "icvl/labels.hpp"
#include "icvl/retrieval.hpp"

namespace icvl::fixtures {

using Transition = std::pair<ActionLabel, double>;

/// Markov chain over actions for one intention.
struct IntentionSpec {
  std::string name;
  std::vector<Transition> start;
  std::map<ActionLabel, std::vector<Transition>> transitions;
};

struct EmissionModel {
  std::size_t dims = 32;
  double noise = 0.0;
  std::size_t frames_per_segment = 4;
};

/// How videos pick their intention: "uniform" draws at random, "cycle"
/// walks the intention list in order.
enum class IntentionSampling { kUniform, kCycle };

/// Synthetic world. JSON form:
///   {"verbs": [...], "nouns": [...], "seed": 7, "sampling": "cycle",
///    "emission": {"dims": 32, "noise": 0.0, "frames_per_segment": 4},
///    "intentions": [{"name": "...", "start": [{"action": "take bowl", "p": 1}],
///                    "transitions": [{"from": "take bowl",
///                                     "to": [{"action": "wash bowl", "p": 1}]}]}]}
/// Actions are written "verb noun". A bare string is accepted for `start`.
struct IntentionGrammar {
  Vocabulary vocab;
  std::vector<IntentionSpec> intentions;
  EmissionModel emission;
  IntentionSampling sampling = IntentionSampling::kUniform;
  std::uint64_t seed = 7;

  /// ConfigError on rows that do not sum to 1, unknown actions, or states
  /// reachable from a start state that have no outgoing row.
  void validate() const;

  std::string to_json() const;
  static IntentionGrammar from_json(const std::string& text);
  static IntentionGrammar load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

/// The default world: 12 verbs, 16 nouns and 16 intentions in two groups
/// of eight. Intentions in a group share their first 8 actions and then
/// repeat their own 4-action loop, so the observed actions alone cannot
/// tell them apart. Zero emission noise.
IntentionGrammar default_grammar();

/// Per-action emission mean (1 × dims), a pure function of grammar seed
/// and label.
Matrix action_mean(const IntentionGrammar& grammar, const ActionLabel& action);

struct FixtureVideo {
  std::string video_id;
  std::size_t intention_index = 0;
  std::string intention;
  ActionSequence observed;
  ActionSequence future;
  /// One k × d_v matrix per observed segment.
  std::vector<Matrix> segment_frames;
};

struct Dataset {
  std::vector<FixtureVideo> videos;

  /// Gold annotations: each action lasts one time unit, so duration is
  /// n_seg + z and action i starts at i.
  std::vector<eval::GoldVideo> gold() const;

  /// Store with pooled visual embeddings (mean over all observed frames)
  /// and pooled textual embeddings of the observed labels.
  retrieval::ExampleStore store(const Vocabulary& vocab, const intention::TextEncoder& encoder) const;
};

/// Per video: intention → chain of n_seg + z actions → segment frames.
/// `id_prefix` and `seed_offset` let train and test splits share a grammar.
Dataset generate_dataset(const IntentionGrammar& grammar, std::size_t n_videos, std::size_t n_seg,
                         std::size_t z, const std::string& id_prefix = "vid",
                         std::uint64_t seed_offset = 0);

/// Pooled textual embedding of observed labels rendered "verb noun, ...".
std::vector<double> observed_text_embedding(const ActionSequence& observed, const Vocabulary& vocab,
                                            const intention::TextEncoder& encoder);

/// Frame files used by the CLI: frames.icvlmat stacks every video's
/// observed frames (n_seg × k rows per video, in gold order).
void save_frames(const std::filesystem::path& path, const Dataset& data);
/// Splits the stacked matrix back into per-video segment lists.
std::vector<std::vector<Matrix>> load_frames(const std::filesystem::path& path, std::size_t n_videos,
                                             std::size_t n_seg);

/// Deterministic client answering with each known video's intention.
/// Unknown video ids raise ProtocolError; `debug` echoes the context.
class MockVlm : public intention::VlmClient {
 public:
  explicit MockVlm(std::map<std::string, std::string> intentions);
  intention::VlmResponse query(const intention::VlmRequest& request) override;
  std::size_t calls() const noexcept { return calls_; }

 private:
  std::map<std::string, std::string> intentions_;
  std::size_t calls_ = 0;
};

MockVlm mock_vlm(const Dataset& data);
MockVlm mock_vlm(const std::vector<eval::GoldVideo>& gold);

}  // namespace icvl::fixtures
