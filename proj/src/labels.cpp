// SPDX-License-Identifier: Apache-2.0

#include "icvl/labels.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

#include "icvl/error.hpp"

namespace icvl {

std::string normalize_token(std::string_view text) {
  std::size_t b = 0;
  std::size_t e = text.size();
  while (b < e && std::isspace(static_cast<unsigned char>(text[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(text[e - 1]))) --e;
  std::string out(text.substr(b, e - b));
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

namespace {

void build_index(const std::vector<std::string>& names, const char* what,
                 std::unordered_map<std::string, std::size_t>& index) {
  for (std::size_t i = 0; i < names.size(); ++i) {
    const std::string key = normalize_token(names[i]);
    if (key.empty()) throw DataError(std::string("empty ") + what + " name at index " + std::to_string(i));
    if (key.find_first_of(" \t,") != std::string::npos) {
      throw DataError(std::string(what) + " name '" + names[i] + "' contains whitespace or a comma");
    }
    if (!index.emplace(key, i).second) {
      throw DataError(std::string("duplicate ") + what + " name '" + names[i] + "'");
    }
  }
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize_token(line).empty()) continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> verbs, std::vector<std::string> nouns)
    : verbs_(std::move(verbs)), nouns_(std::move(nouns)) {
  build_index(verbs_, "verb", verb_index_);
  build_index(nouns_, "noun", noun_index_);
  if (verb_index_.count(kOovName) != 0 || noun_index_.count(kOovName) != 0) {
    throw DataError("vocabulary must not list the reserved OOV name");
  }
  verbs_.emplace_back(kOovName);
  nouns_.emplace_back(kOovName);
}

Vocabulary Vocabulary::load(const std::filesystem::path& verbs_file,
                            const std::filesystem::path& nouns_file) {
  return Vocabulary(read_lines(verbs_file), read_lines(nouns_file));
}

void Vocabulary::save(const std::filesystem::path& verbs_file,
                      const std::filesystem::path& nouns_file) const {
  auto dump = [](const std::filesystem::path& p, const std::vector<std::string>& names) {
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::trunc);
    if (!out) throw IoError("cannot write " + p.string());
    for (std::size_t i = 0; i + 1 < names.size(); ++i) out << names[i] << "\n";
  };
  dump(verbs_file, verbs_);
  dump(nouns_file, nouns_);
}

const std::string& Vocabulary::verb(std::size_t id) const {
  if (id >= verbs_.size()) throw DataError("verb id " + std::to_string(id) + " outside vocabulary");
  return verbs_[id];
}

const std::string& Vocabulary::noun(std::size_t id) const {
  if (id >= nouns_.size()) throw DataError("noun id " + std::to_string(id) + " outside vocabulary");
  return nouns_[id];
}

std::optional<std::size_t> Vocabulary::find_verb(std::string_view name) const {
  auto it = verb_index_.find(normalize_token(name));
  if (it == verb_index_.end()) return std::nullopt;
  return it->second;
}

std::optional<std::size_t> Vocabulary::find_noun(std::string_view name) const {
  auto it = noun_index_.find(normalize_token(name));
  if (it == noun_index_.end()) return std::nullopt;
  return it->second;
}

void Vocabulary::check(const ActionLabel& a) const {
  if (!contains(a)) {
    throw DataError("action (" + std::to_string(a.verb_id) + ", " + std::to_string(a.noun_id) +
                    ") outside vocabulary of " + std::to_string(verbs_.size()) + " verbs / " +
                    std::to_string(nouns_.size()) + " nouns");
  }
}

std::string action_text(const ActionLabel& a, const Vocabulary& vocab) {
  return vocab.verb(a.verb_id) + " " + vocab.noun(a.noun_id);
}

std::string actions_text(const ActionSequence& actions, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < actions.size(); ++i) {
    if (i) out += ", ";
    out += action_text(actions[i], vocab);
  }
  return out;
}

}  // namespace icvl
