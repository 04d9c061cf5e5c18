// SPDX-License-Identifier: Apache-2.0

#include "icvl/prompt.hpp"

#include <sstream>

#include "icvl/error.hpp"
#include "icvl/matrix_io.hpp"

namespace icvl::prompt {

namespace {

constexpr std::string_view kObserved = "Observed:";
constexpr std::string_view kFuture = "Future:";

std::string_view trim(std::string_view s) {
  constexpr std::string_view kSpace = " \t\r\n\v\f";
  const auto first = s.find_first_not_of(kSpace);
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(kSpace);
  return s.substr(first, last - first + 1);
}

std::vector<std::string_view> split_lines(std::string_view text) {
  std::vector<std::string_view> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    const auto nl = text.find('\n', start);
    const auto end = nl == std::string_view::npos ? text.size() : nl;
    lines.push_back(text.substr(start, end - start));
    if (nl == std::string_view::npos) break;
    start = nl + 1;
  }
  return lines;
}

bool starts_with_label(std::string_view line, std::string_view label) {
  if (line.size() < label.size()) return false;
  for (std::size_t i = 0; i < label.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(line[i])) != std::tolower(static_cast<unsigned char>(label[i])))
      return false;
  }
  return true;
}

// Parses "v n, v n, ..." into labels; returns the number of OOV
// substitutions through `oov`.
ActionSequence parse_pairs(std::string_view line, const Vocabulary& vocab, std::size_t& oov) {
  ActionSequence out;
  std::size_t start = 0;
  while (start <= line.size()) {
    const auto comma = line.find(',', start);
    const auto end = comma == std::string_view::npos ? line.size() : comma;
    const std::string_view pair = trim(line.substr(start, end - start));
    std::vector<std::string_view> tokens;
    std::size_t p = 0;
    while (p < pair.size()) {
      while (p < pair.size() && std::isspace(static_cast<unsigned char>(pair[p]))) ++p;
      const std::size_t q = p;
      while (p < pair.size() && !std::isspace(static_cast<unsigned char>(pair[p]))) ++p;
      if (p > q) tokens.push_back(pair.substr(q, p - q));
    }
    if (!tokens.empty()) {
      ActionLabel a = vocab.oov_action();
      if (auto v = vocab.find_verb(tokens[0])) {
        a.verb_id = *v;
      } else {
        ++oov;
      }
      std::optional<std::size_t> n;
      if (tokens.size() == 2) n = vocab.find_noun(tokens[1]);
      if (n) {
        a.noun_id = *n;
      } else {
        ++oov;
      }
      out.push_back(a);
    }
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

}  // namespace

std::string embedding_marker(std::size_t rows) { return "<VIS:" + std::to_string(rows) + ">"; }

std::string render_actions(const ActionSequence& actions, const Vocabulary& vocab) {
  for (const auto& a : actions) vocab.check(a);
  return actions_text(actions, vocab);
}

std::string render_prompt(const PromptDocument& doc, const Vocabulary& vocab) {
  if (doc.examples.size() > doc.max_examples) {
    throw DataError("prompt: " + std::to_string(doc.examples.size()) + " examples exceed the maximum of " +
                    std::to_string(doc.max_examples));
  }
  if (doc.instruction.find('\n') != std::string::npos) throw DataError("prompt: instruction must be one line");
  std::ostringstream out;
  out << doc.instruction << "\n\n";
  for (const auto& ex : doc.examples) {
    out << kObserved << ' ' << render_actions(ex.observed, vocab) << '\n';
    out << kFuture << ' ' << render_actions(ex.future, vocab) << '\n';
  }
  if (!doc.examples.empty()) out << '\n';
  out << kObserved << ' ' << render_actions(doc.observed, vocab) << '\n';
  out << embedding_marker(doc.embedding_slot) << '\n';
  return out.str();
}

std::vector<PromptExample> parse_example_block(const std::string& text, const Vocabulary& vocab) {
  const auto lines = split_lines(text);
  std::vector<PromptExample> out;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const std::string_view line = trim(lines[i]);
    if (!starts_with_label(line, kObserved)) continue;
    if (i + 1 >= lines.size() || !starts_with_label(trim(lines[i + 1]), kFuture)) {
      // The final query line has no Future partner; stop there.
      if (i + 1 < lines.size() && trim(lines[i + 1]).starts_with("<VIS:")) break;
      throw ParseError("example block: Observed line " + std::to_string(i + 1) + " lacks a Future line", text);
    }
    std::size_t oov = 0;
    PromptExample ex;
    ex.observed = parse_pairs(line.substr(kObserved.size()), vocab, oov);
    ex.future = parse_pairs(trim(lines[i + 1]).substr(kFuture.size()), vocab, oov);
    out.push_back(std::move(ex));
    ++i;
  }
  return out;
}

ParsedPrediction parse_prediction(const std::string& text, const Vocabulary& vocab, std::size_t k,
                                  std::size_t z) {
  if (k == 0 || z == 0) throw ConfigError("parse_prediction: k and z must be >= 1");
  ParsedPrediction out;
  out.raw_text = text;
  for (std::string_view line : split_lines(text)) {
    if (out.candidates.size() == k) break;
    line = trim(line);
    if (starts_with_label(line, kFuture)) line = trim(line.substr(kFuture.size()));
    if (line.empty()) continue;
    ActionSequence seq = parse_pairs(line, vocab, out.oov_count);
    if (seq.empty()) continue;
    seq.resize(z, vocab.oov_action());
    out.candidates.push_back(std::move(seq));
  }
  if (out.candidates.empty()) throw ParseError("prediction text holds no candidate sequence", text);
  return out;
}

std::vector<std::uint8_t> serialize_fused(const Matrix& fused) {
  if (fused.rows() == 0) throw ShapeError("serialize_fused: fused matrix has no rows");
  ensure_finite(fused, "serialize_fused");
  return encode_matrix(fused);
}

Matrix deserialize_fused(const std::vector<std::uint8_t>& bytes) {
  Matrix m = decode_matrix(bytes);
  if (m.rows() == 0) throw ShapeError("deserialize_fused: fused matrix has no rows");
  return m;
}

}  // namespace icvl::prompt
