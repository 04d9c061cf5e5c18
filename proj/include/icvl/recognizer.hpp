// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "icvl/labels.hpp"
#include "icvl/matrix_io.hpp"
#include "icvl/optim.hpp"

namespace icvl::recognizer {

/// Plain-descent step size that memorizes desk fixtures within a few
/// hundred steps.
inline constexpr double kDefaultLearningRate = 0.05;

struct RecognizerConfig {
  std::size_t input_dims = 32;
  std::size_t layers = 2;
  std::size_t heads = 8;
  std::size_t ffn_multiplier = 4;
  /// Hidden width of the two-layer verb and noun heads; 0 means input_dims.
  std::size_t head_hidden = 0;
  bool positional_encoding = true;
  std::uint64_t seed = 7;
};

/// Encoder stack + verb head + noun head. Tensor names:
///   enc<i>.{wq,wk,wv,wo,w1,b1,w2,b2}, verb.{w1,b1,w2,b2}, noun.{w1,b1,w2,b2}
/// Weights use the x·W layout (rows = input width).
struct RecognizerParams {
  RecognizerConfig config;
  std::size_t verb_count = 0;
  std::size_t noun_count = 0;
  NamedMatrices tensors;

  static RecognizerParams init(const RecognizerConfig& config, const Vocabulary& vocab);
  static RecognizerParams zeros(const RecognizerConfig& config, const Vocabulary& vocab);

  void validate() const;

  Checkpoint to_checkpoint() const;
  static RecognizerParams from_checkpoint(const Checkpoint& ckpt);
};

/// One training/evaluation video: N_seg pooled segment rows and their gold
/// labels (empty when unlabelled).
struct LabelledSegments {
  Matrix segments;
  ActionSequence labels;
};

/// Mean-pools each segment's k frame rows into one row (N_seg × d_v).
Matrix pool_segments(std::span<const Matrix> segment_frames);

/// Verb and noun logits for every segment row.
std::pair<Matrix, Matrix> logits(const Matrix& segment_embeddings, const RecognizerParams& params);

/// Argmax labels per segment, lowest index on ties.
ActionSequence recognize(const Matrix& segment_embeddings, const RecognizerParams& params,
                         const Vocabulary& vocab);

/// Mean over all segments in the batch of CE(verb) + CE(noun).
double loss(std::span<const LabelledSegments> batch, const RecognizerParams& params);

/// Computes the loss and its gradients without updating anything.
std::pair<double, NamedMatrices> loss_and_gradients(std::span<const LabelledSegments> batch,
                                                    const RecognizerParams& params);

/// One plain gradient-descent update; returns the pre-update loss.
double train_step(std::span<const LabelledSegments> batch, RecognizerParams& params, double lr);

/// Optimizer-backed training (plain descent or Adam).
class Trainer {
 public:
  Trainer(RecognizerParams& params, OptimizerKind kind, double lr);
  double step(std::span<const LabelledSegments> batch);

 private:
  RecognizerParams& params_;
  Optimizer optimizer_;
};

/// Fraction of positions where both verb and noun match.
double recognition_accuracy(const ActionSequence& predicted, const ActionSequence& gold);

}  // namespace icvl::recognizer
