// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace icvl {

/// One action: a verb id and a noun id into a Vocabulary.
struct ActionLabel {
  std::size_t verb_id = 0;
  std::size_t noun_id = 0;

  friend bool operator==(const ActionLabel&, const ActionLabel&) = default;
  friend auto operator<=>(const ActionLabel&, const ActionLabel&) = default;
};

using ActionSequence = std::vector<ActionLabel>;

/// Verb and noun name tables. Each table ends with a reserved
/// out-of-vocabulary entry that no real label maps to.
class Vocabulary {
 public:
  static constexpr const char* kOovName = "<oov>";

  Vocabulary() = default;
  /// `verbs` and `nouns` hold real names only; the OOV entries are appended.
  Vocabulary(std::vector<std::string> verbs, std::vector<std::string> nouns);

  /// Reads two line-oriented files (index = line number); blank lines are
  /// skipped.
  static Vocabulary load(const std::filesystem::path& verbs_file,
                         const std::filesystem::path& nouns_file);
  void save(const std::filesystem::path& verbs_file, const std::filesystem::path& nouns_file) const;

  /// Sizes including the OOV slot.
  std::size_t verb_count() const noexcept { return verbs_.size(); }
  std::size_t noun_count() const noexcept { return nouns_.size(); }
  std::size_t oov_verb_id() const noexcept { return verbs_.size() - 1; }
  std::size_t oov_noun_id() const noexcept { return nouns_.size() - 1; }
  ActionLabel oov_action() const noexcept { return {oov_verb_id(), oov_noun_id()}; }

  const std::string& verb(std::size_t id) const;
  const std::string& noun(std::size_t id) const;

  /// Case-insensitive, whitespace-trimmed lookup; nullopt when unknown.
  std::optional<std::size_t> find_verb(std::string_view name) const;
  std::optional<std::size_t> find_noun(std::string_view name) const;

  bool contains(const ActionLabel& a) const noexcept {
    return a.verb_id < verbs_.size() && a.noun_id < nouns_.size();
  }
  /// Throws DataError when the label falls outside the tables.
  void check(const ActionLabel& a) const;

  const std::vector<std::string>& verbs() const noexcept { return verbs_; }
  const std::vector<std::string>& nouns() const noexcept { return nouns_; }

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.verbs_ == b.verbs_ && a.nouns_ == b.nouns_;
  }

 private:
  std::vector<std::string> verbs_;
  std::vector<std::string> nouns_;
  std::unordered_map<std::string, std::size_t> verb_index_;
  std::unordered_map<std::string, std::size_t> noun_index_;
};

std::string normalize_token(std::string_view text);

/// "verb noun" using vocabulary names.
std::string action_text(const ActionLabel& a, const Vocabulary& vocab);
/// "verb noun, verb noun, ..."
std::string actions_text(const ActionSequence& actions, const Vocabulary& vocab);

}  // namespace icvl
