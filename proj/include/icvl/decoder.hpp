// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "icvl/autograd.hpp"
#include "icvl/icaf.hpp"
#include "icvl/labels.hpp"
#include "icvl/matrix_io.hpp"
#include "icvl/optim.hpp"

namespace icvl::decoder {

inline constexpr double kDefaultTemperature = 0.7;

/// Token ids: verbs first, then nouns, then the special tokens.
class TokenVocab {
 public:
  TokenVocab() = default;
  TokenVocab(std::size_t verb_count, std::size_t noun_count);
  explicit TokenVocab(const Vocabulary& vocab) : TokenVocab(vocab.verb_count(), vocab.noun_count()) {}

  std::size_t verb_token(std::size_t verb_id) const;
  std::size_t noun_token(std::size_t noun_id) const;
  std::size_t bos() const noexcept { return verbs_ + nouns_; }
  /// Opens one in-context example (its future tokens follow).
  std::size_t example() const noexcept { return verbs_ + nouns_ + 1; }
  /// Opens the observed actions of the query video.
  std::size_t observed() const noexcept { return verbs_ + nouns_ + 2; }
  std::size_t size() const noexcept { return verbs_ + nouns_ + 3; }
  std::size_t verb_count() const noexcept { return verbs_; }
  std::size_t noun_count() const noexcept { return nouns_; }

  bool is_verb(std::size_t token) const noexcept { return token < verbs_; }
  bool is_noun(std::size_t token) const noexcept { return token >= verbs_ && token < verbs_ + nouns_; }

  /// v0 n0 v1 n1 ...
  std::vector<std::size_t> encode(const ActionSequence& actions) const;
  /// Inverse of encode(); DataError on odd length or parity violations.
  ActionSequence decode(std::span<const std::size_t> tokens) const;

 private:
  std::size_t verbs_ = 0;
  std::size_t nouns_ = 0;
};

/// Low-rank update W + scale·B·A for a d_out × d_in weight.
struct LoraAdapter {
  Matrix a;  // r × d_in
  Matrix b;  // d_out × r
  double scale = 1.0;

  /// A Gaussian (std 1/√d_in), B zero, scale = alpha / rank.
  static LoraAdapter init(std::size_t d_in, std::size_t d_out, std::size_t rank, double alpha,
                          std::uint64_t seed);

  std::size_t rank() const noexcept { return a.rows(); }
  std::size_t parameter_count() const noexcept { return a.size() + b.size(); }
  /// True when the update is exactly zero (B all zero or scale zero).
  bool is_zero() const noexcept;
  void validate(std::size_t d_in, std::size_t d_out) const;
};

/// base + scale·B·A; returns `base` unchanged when the update is zero.
Matrix merged_weight(const Matrix& base, const LoraAdapter& adapter);

/// input × (base + scale·B·A)ᵀ, with base laid out d_out × d_in.
Matrix apply_lora(const Matrix& base, const LoraAdapter& adapter, const Matrix& input);

/// −Σ_t log softmax(row_t)[y_t], summed over positions.
double nll_loss(const Matrix& logits, std::span<const std::size_t> targets);

/// Prefix fed to the decoder: ICAF (intention queries over visual rows),
/// intention rows stacked on visual rows, visual queries over intention
/// rows, or visual rows alone.
enum class FusionMode { kIcaf, kConcat, kVisualQuery, kNone };
FusionMode parse_fusion_mode(const std::string& name);
std::string to_string(FusionMode mode);

struct DecoderConfig {
  std::size_t dims = 64;
  std::size_t layers = 2;
  std::size_t heads = 4;
  std::size_t ffn_multiplier = 4;
  std::size_t lora_rank = 8;
  double lora_alpha = 8.0;
  std::uint64_t seed = 11;
};

/// Frozen base decoder plus its adapters. Base tensors (d_out × d_in):
///   embed (tokens × d), dec<l>.{wq,wk,wv,wo} (d × d), dec<l>.w1 (ff × d),
///   dec<l>.w2 (d × ff), head (tokens × d).
/// Every tensor except `embed` carries an adapter.
struct DecoderModel {
  DecoderConfig config;
  TokenVocab tokens;
  NamedMatrices base;
  std::map<std::string, LoraAdapter> adapters;

  static DecoderModel init(const DecoderConfig& config, const Vocabulary& vocab);
  void validate() const;

  /// "<tensor>.lora_a" / "<tensor>.lora_b" for every adapter.
  NamedMatrices adapter_tensors() const;
  void assign_adapter_tensors(const NamedMatrices& tensors);
  std::size_t lora_parameter_count() const;
};

/// One training or inference example. `intention` is the seq × d_l
/// intention embedding; `segment_frames` holds the observed segments.
/// The token stream fed to the decoder is
///   [fusion prefix rows] context… BOS targets[0..M−2]
/// and position t of the final M positions predicts targets[t].
struct DecoderSample {
  std::vector<Matrix> segment_frames;
  Matrix intention;
  std::vector<std::size_t> context;
  std::vector<std::size_t> targets;
};

/// Decoder + fusion parameters trained together.
struct DecoderBundle {
  DecoderModel model;
  icaf::IcafParams icaf;
  FusionMode fusion = FusionMode::kIcaf;

  void save(const std::filesystem::path& path) const;
  static DecoderBundle load(const std::filesystem::path& path);
};

/// Prefix rows for a sample under the given fusion mode. `none` keeps the
/// projected visual rows and drops the intention.
Matrix fusion_prefix(const DecoderSample& sample, const icaf::IcafParams& icaf, FusionMode mode);

/// Summed next-token loss of one sample on the tape. Tensors named in `trainable`
/// (adapter or ICAF names) use the given nodes; everything else is bound
/// as a constant.
ad::Var sample_loss(ad::Graph& g, const DecoderModel& model, const icaf::IcafParams& icaf,
                    FusionMode mode, const DecoderSample& sample,
                    const std::map<std::string, ad::Var>& trainable = {});

/// Logits for every position of [prefix rows] + tokens, computed with the
/// merged inference weights.
Matrix forward_logits(const DecoderModel& model, const Matrix& prefix, std::span<const std::size_t> tokens);

/// Same quantity through the training tape (separate base and adapter
/// products); used to cross-check the two paths.
Matrix forward_logits_tape(const DecoderModel& model, const Matrix& prefix,
                           std::span<const std::size_t> tokens);

struct TrainConfig {
  double lr = 5e-5;
  std::size_t epochs = 8;
  OptimizerKind optimizer = OptimizerKind::kAdam;
  std::uint64_t seed = 0;
  /// Stop after this many optimizer steps (0 = no limit).
  std::size_t max_steps = 0;
  std::size_t batch_size = 1;
  /// Train the trainable ICAF tensors alongside the adapters.
  bool train_icaf = true;
};

struct TrainResult {
  /// Mean pre-update sample loss of every (possibly partial) epoch.
  std::vector<double> epoch_loss;
  std::vector<double> step_loss;
  std::size_t steps = 0;
};

/// Optimizes only adapter tensors and trainable ICAF tensors; base decoder
/// tensors are never written. Sample order is shuffled per epoch from
/// cfg.seed.
TrainResult train(const std::vector<DecoderSample>& data, DecoderModel& model, icaf::IcafParams& icaf,
                  FusionMode mode, const TrainConfig& cfg,
                  const std::function<void(std::size_t epoch, double loss)>& on_epoch = {});

/// Mean over samples of loss / M.
double mean_token_nll(const std::vector<DecoderSample>& data, const DecoderModel& model,
                      const icaf::IcafParams& icaf, FusionMode mode);

/// epoch,mean_loss rows.
void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);

struct GenerateOptions {
  std::size_t k = 5;
  std::size_t z = 20;
  double temperature = kDefaultTemperature;
  std::uint64_t seed = 0;
};

/// k rollouts of 2z tokens after [prefix] context BOS. Even steps may only
/// emit verb tokens and odd steps noun tokens. Candidate i samples from
/// its own stream derived from (seed, i); temperature 0 is greedy.
std::vector<std::vector<std::size_t>> generate(const DecoderModel& model, const Matrix& prefix,
                                               std::span<const std::size_t> context,
                                               const GenerateOptions& options);

std::vector<ActionSequence> generate_actions(const DecoderModel& model, const Matrix& prefix,
                                             std::span<const std::size_t> context,
                                             const GenerateOptions& options);

}  // namespace icvl::decoder
