// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "icvl/labels.hpp"
#include "icvl/matrix.hpp"

namespace icvl::prompt {

inline constexpr const char* kDefaultInstruction =
    "Predict the next 20 actions as comma-separated verb-noun pairs, one candidate sequence per line.";
inline constexpr std::size_t kDefaultMaxExamples = 16;

struct PromptExample {
  ActionSequence observed;
  ActionSequence future;

  friend bool operator==(const PromptExample&, const PromptExample&) = default;
};

struct PromptDocument {
  std::string instruction = kDefaultInstruction;
  std::vector<PromptExample> examples;
  ActionSequence observed;
  /// Number of fused embedding rows the external decoder splices in at
  /// the marker.
  std::size_t embedding_slot = 0;
  std::size_t max_examples = kDefaultMaxExamples;
};

/// "<VIS:n>" for a slot of n rows.
std::string embedding_marker(std::size_t rows);

/// Layout:
///   <instruction>
///   (blank)
///   Observed: v n, v n, ...     } once per example
///   Future: v n, v n, ...       }
///   (blank)
///   Observed: v n, ...
///   <VIS:n>
std::string render_prompt(const PromptDocument& doc, const Vocabulary& vocab);

/// "v n, v n, ..."; DataError on ids outside the vocabulary.
std::string render_actions(const ActionSequence& actions, const Vocabulary& vocab);

/// Parses consecutive "Observed:" / "Future:" line pairs. Other lines are
/// ignored; an Observed line without a following Future line is a
/// ParseError.
std::vector<PromptExample> parse_example_block(const std::string& text, const Vocabulary& vocab);

struct ParsedPrediction {
  std::vector<ActionSequence> candidates;
  std::size_t oov_count = 0;
  std::string raw_text;
};

/// One candidate per nonempty line, at most k. Pairs are separated by
/// commas and split on whitespace; an optional "Future:" label is dropped.
/// Unknown or missing tokens become the OOV id and count towards
/// oov_count; each candidate is padded with OOV actions or cut to z.
ParsedPrediction parse_prediction(const std::string& text, const Vocabulary& vocab,
                                  std::size_t k = 5, std::size_t z = 20);

/// ICVLMAT bytes of the fused matrix; ShapeError for a 0-row matrix.
std::vector<std::uint8_t> serialize_fused(const Matrix& fused);
Matrix deserialize_fused(const std::vector<std::uint8_t>& bytes);

}  // namespace icvl::prompt
