// SPDX-License-Identifier: Apache-2.0

#include "icvl/fixtures.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <set>
#include <sstream>

#include <json.hpp>

#include "icvl/error.hpp"
#include "icvl/matrix_io.hpp"
#include "icvl/random.hpp"

namespace icvl::fixtures {

using nlohmann::json;

namespace {

double unit_draw(Rng& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

ActionLabel draw(const std::vector<Transition>& row, Rng& rng) {
  const double u = unit_draw(rng);
  double acc = 0.0;
  for (const auto& [a, p] : row) {
    acc += p;
    if (u < acc) return a;
  }
  // Round-off in the cumulative sum: fall back to the last positive entry.
  for (auto it = row.rbegin(); it != row.rend(); ++it)
    if (it->second > 0.0) return it->first;
  return row.back().first;
}

ActionLabel parse_action(const std::string& text, const Vocabulary& vocab) {
  std::istringstream in(text);
  std::string verb, noun, extra;
  in >> verb >> noun;
  if (verb.empty() || noun.empty() || (in >> extra)) {
    throw ConfigError("grammar: action '" + text + "' is not of the form 'verb noun'");
  }
  const auto v = vocab.find_verb(verb);
  const auto n = vocab.find_noun(noun);
  if (!v || !n) throw ConfigError("grammar: action '" + text + "' uses an unknown verb or noun");
  return {*v, *n};
}

std::vector<Transition> parse_row(const json& j, const Vocabulary& vocab) {
  std::vector<Transition> row;
  if (j.is_string()) {
    row.emplace_back(parse_action(j.get<std::string>(), vocab), 1.0);
    return row;
  }
  for (const auto& e : j) row.emplace_back(parse_action(e.at("action").get<std::string>(), vocab), e.at("p").get<double>());
  return row;
}

json row_json(const std::vector<Transition>& row, const Vocabulary& vocab) {
  json out = json::array();
  for (const auto& [a, p] : row) out.push_back({{"action", action_text(a, vocab)}, {"p", p}});
  return out;
}

void check_row(const std::vector<Transition>& row, const std::string& where) {
  if (row.empty()) throw ConfigError("grammar: " + where + " has no transitions");
  double sum = 0.0;
  for (const auto& [a, p] : row) {
    if (!(p >= 0.0) || !std::isfinite(p)) throw ConfigError("grammar: " + where + " has a negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) {
    throw ConfigError("grammar: " + where + " probabilities sum to " + std::to_string(sum));
  }
}

}  // namespace

void IntentionGrammar::validate() const {
  if (intentions.empty()) throw ConfigError("grammar: no intentions");
  if (emission.dims == 0 || emission.frames_per_segment == 0) {
    throw ConfigError("grammar: emission dims and frames_per_segment must be positive");
  }
  if (!(emission.noise >= 0.0)) throw ConfigError("grammar: emission noise must be >= 0");
  std::set<std::string> names;
  for (const auto& spec : intentions) {
    if (spec.name.find_first_not_of(" \t") == std::string::npos) throw ConfigError("grammar: empty intention name");
    if (!names.insert(spec.name).second) throw ConfigError("grammar: duplicate intention '" + spec.name + "'");
    check_row(spec.start, "start of '" + spec.name + "'");
    for (const auto& [from, row] : spec.transitions) {
      if (!vocab.contains(from)) throw ConfigError("grammar: state outside vocabulary in '" + spec.name + "'");
      check_row(row, "state '" + action_text(from, vocab) + "' of '" + spec.name + "'");
      for (const auto& [to, p] : row)
        if (!vocab.contains(to)) throw ConfigError("grammar: target outside vocabulary in '" + spec.name + "'");
    }
    // Every state reachable from a start state must be able to continue.
    std::set<ActionLabel> seen;
    std::queue<ActionLabel> frontier;
    for (const auto& [a, p] : spec.start) {
      if (p > 0.0 && seen.insert(a).second) frontier.push(a);
    }
    while (!frontier.empty()) {
      const ActionLabel a = frontier.front();
      frontier.pop();
      auto it = spec.transitions.find(a);
      if (it == spec.transitions.end()) {
        throw ConfigError("grammar: state '" + action_text(a, vocab) + "' of '" + spec.name +
                          "' is reachable but has no outgoing transitions");
      }
      for (const auto& [to, p] : it->second) {
        if (p > 0.0 && seen.insert(to).second) frontier.push(to);
      }
    }
  }
}

std::string IntentionGrammar::to_json() const {
  std::vector<std::string> verbs(vocab.verbs().begin(), vocab.verbs().end() - 1);
  std::vector<std::string> nouns(vocab.nouns().begin(), vocab.nouns().end() - 1);
  json specs = json::array();
  for (const auto& spec : intentions) {
    json transitions = json::array();
    for (const auto& [from, row] : spec.transitions) {
      transitions.push_back({{"from", action_text(from, vocab)}, {"to", row_json(row, vocab)}});
    }
    specs.push_back({{"name", spec.name}, {"start", row_json(spec.start, vocab)}, {"transitions", transitions}});
  }
  return json{{"verbs", verbs},
              {"nouns", nouns},
              {"seed", seed},
              {"sampling", sampling == IntentionSampling::kCycle ? "cycle" : "uniform"},
              {"emission",
               {{"dims", emission.dims}, {"noise", emission.noise}, {"frames_per_segment", emission.frames_per_segment}}},
              {"intentions", specs}}
      .dump(2);
}

IntentionGrammar IntentionGrammar::from_json(const std::string& text) {
  IntentionGrammar g;
  try {
    const json doc = json::parse(text);
    g.vocab = Vocabulary(doc.at("verbs").get<std::vector<std::string>>(), doc.at("nouns").get<std::vector<std::string>>());
    g.seed = doc.value("seed", std::uint64_t{7});
    const std::string sampling = doc.value("sampling", std::string("uniform"));
    if (sampling == "cycle") {
      g.sampling = IntentionSampling::kCycle;
    } else if (sampling != "uniform") {
      throw ConfigError("grammar: unknown sampling '" + sampling + "'");
    }
    if (doc.contains("emission")) {
      const json& e = doc.at("emission");
      g.emission.dims = e.value("dims", g.emission.dims);
      g.emission.noise = e.value("noise", g.emission.noise);
      g.emission.frames_per_segment = e.value("frames_per_segment", g.emission.frames_per_segment);
    }
    for (const auto& s : doc.at("intentions")) {
      IntentionSpec spec;
      spec.name = s.at("name").get<std::string>();
      spec.start = parse_row(s.at("start"), g.vocab);
      for (const auto& t : s.value("transitions", json::array())) {
        const ActionLabel from = parse_action(t.at("from").get<std::string>(), g.vocab);
        if (!spec.transitions.emplace(from, parse_row(t.at("to"), g.vocab)).second) {
          throw ConfigError("grammar: duplicate transition row for '" + t.at("from").get<std::string>() + "'");
        }
      }
      g.intentions.push_back(std::move(spec));
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("grammar: ") + e.what());
  } catch (const DataError& e) {
    throw ConfigError(std::string("grammar: ") + e.what());
  }
  g.validate();
  return g;
}

IntentionGrammar IntentionGrammar::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open grammar " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return from_json(buf.str());
}

void IntentionGrammar::save(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw IoError("cannot write grammar " + path.string());
  out << to_json() << '\n';
}

IntentionGrammar default_grammar() {
  IntentionGrammar g;
  g.vocab = Vocabulary({"take", "put", "wash", "cut", "open", "close", "pour", "stir", "wipe", "fold", "peel", "mix"},
                       {"bowl", "knife", "cup", "plate", "pan", "tap", "door", "towel", "spoon", "board", "onion",
                        "carrot", "bottle", "lid", "sponge", "shirt"});
  g.seed = 7;
  g.sampling = IntentionSampling::kCycle;
  g.emission = {32, 0.0, 4};
  const std::vector<std::vector<std::string>> groups = {
      {"make a salad", "wash the dishes", "cook pasta", "brew coffee", "bake bread", "clean the counter",
       "prepare soup", "set the table"},
      {"do the laundry", "tidy the room", "fix the sink", "water the plants", "pack a lunch", "sort the recycling",
       "iron a shirt", "feed the cat"}};

  std::vector<ActionLabel> all;
  for (std::size_t v = 0; v + 1 < g.vocab.verb_count(); ++v)
    for (std::size_t n = 0; n + 1 < g.vocab.noun_count(); ++n) all.push_back({v, n});
  Rng rng(derive_seed(g.seed, "default-grammar"));
  std::shuffle(all.begin(), all.end(), rng);

  constexpr std::size_t kPrefix = 8;
  constexpr std::size_t kLoop = 4;
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const std::vector<ActionLabel> prefix(all.begin() + static_cast<std::ptrdiff_t>(gi * kPrefix),
                                          all.begin() + static_cast<std::ptrdiff_t>((gi + 1) * kPrefix));
    std::vector<ActionLabel> pool;
    for (const auto& a : all)
      if (std::find(prefix.begin(), prefix.end(), a) == prefix.end()) pool.push_back(a);
    for (const auto& name : groups[gi]) {
      std::shuffle(pool.begin(), pool.end(), rng);
      std::vector<ActionLabel> chain = prefix;
      for (std::size_t i = 0; i < kLoop; ++i) chain.push_back(pool[i]);
      IntentionSpec spec;
      spec.name = name;
      spec.start = {{chain.front(), 1.0}};
      for (std::size_t i = 0; i + 1 < chain.size(); ++i) spec.transitions[chain[i]] = {{chain[i + 1], 1.0}};
      // The continuation repeats as a loop.
      spec.transitions[chain.back()] = {{chain[kPrefix], 1.0}};
      g.intentions.push_back(std::move(spec));
    }
  }
  g.validate();
  return g;
}

Matrix action_mean(const IntentionGrammar& grammar, const ActionLabel& action) {
  Rng rng(derive_seed(derive_seed(grammar.seed, "emission"), action.verb_id * 1000003ULL + action.noun_id));
  return random_normal(1, grammar.emission.dims, 1.0, rng);
}

Dataset generate_dataset(const IntentionGrammar& grammar, std::size_t n_videos, std::size_t n_seg,
                         std::size_t z, const std::string& id_prefix, std::uint64_t seed_offset) {
  if (n_videos == 0 || n_seg == 0 || z == 0) throw ConfigError("generate_dataset: counts must be >= 1");
  grammar.validate();
  const std::uint64_t base = derive_seed(derive_seed(grammar.seed, "dataset"), seed_offset);
  const std::size_t k = grammar.emission.frames_per_segment;
  const std::size_t width = std::to_string(n_videos - 1).size();
  std::map<ActionLabel, Matrix> means;
  auto mean_of = [&](const ActionLabel& a) -> const Matrix& {
    auto it = means.find(a);
    if (it == means.end()) it = means.emplace(a, action_mean(grammar, a)).first;
    return it->second;
  };

  Dataset data;
  for (std::size_t i = 0; i < n_videos; ++i) {
    Rng rng(derive_seed(base, i));
    FixtureVideo v;
    std::string index = std::to_string(i);
    v.video_id = id_prefix + std::string(width - index.size(), '0') + index;
    v.intention_index = grammar.sampling == IntentionSampling::kCycle
                            ? i % grammar.intentions.size()
                            : static_cast<std::size_t>(unit_draw(rng) * static_cast<double>(grammar.intentions.size()));
    v.intention_index = std::min(v.intention_index, grammar.intentions.size() - 1);
    const IntentionSpec& spec = grammar.intentions[v.intention_index];
    v.intention = spec.name;

    ActionSequence chain;
    chain.push_back(draw(spec.start, rng));
    while (chain.size() < n_seg + z) chain.push_back(draw(spec.transitions.at(chain.back()), rng));
    v.observed.assign(chain.begin(), chain.begin() + static_cast<std::ptrdiff_t>(n_seg));
    v.future.assign(chain.begin() + static_cast<std::ptrdiff_t>(n_seg), chain.end());

    Rng noise_rng(derive_seed(derive_seed(base, i), "noise"));
    for (const auto& a : v.observed) {
      Matrix frames(k, grammar.emission.dims);
      const Matrix& mean = mean_of(a);
      for (std::size_t f = 0; f < k; ++f) {
        std::copy(mean.data().begin(), mean.data().end(), frames.row(f).begin());
      }
      if (grammar.emission.noise > 0.0) {
        frames = add(frames, random_normal(k, grammar.emission.dims, grammar.emission.noise, noise_rng));
      }
      v.segment_frames.push_back(std::move(frames));
    }
    data.videos.push_back(std::move(v));
  }
  return data;
}

std::vector<eval::GoldVideo> Dataset::gold() const {
  std::vector<eval::GoldVideo> out;
  for (const auto& v : videos) {
    eval::GoldVideo g;
    g.video_id = v.video_id;
    g.observed = v.observed;
    g.future = v.future;
    g.intention = v.intention;
    g.duration = static_cast<double>(v.observed.size() + v.future.size());
    std::size_t t = 0;
    for (const auto& a : v.observed) g.actions.push_back({a, static_cast<double>(t++)});
    for (const auto& a : v.future) g.actions.push_back({a, static_cast<double>(t++)});
    out.push_back(std::move(g));
  }
  return out;
}

std::vector<double> observed_text_embedding(const ActionSequence& observed, const Vocabulary& vocab,
                                            const intention::TextEncoder& encoder) {
  const Matrix pooled = intention::pooled_text_embedding(actions_text(observed, vocab), encoder);
  return {pooled.data().begin(), pooled.data().end()};
}

retrieval::ExampleStore Dataset::store(const Vocabulary& vocab, const intention::TextEncoder& encoder) const {
  if (videos.empty()) throw DataError("dataset is empty");
  retrieval::ExampleStore store(videos.front().segment_frames.front().dims(), encoder.dims());
  for (const auto& v : videos) {
    retrieval::ExampleRecord r;
    r.video_id = v.video_id;
    r.observed = v.observed;
    r.future = v.future;
    r.pooled_visual = retrieval::mean_pool(concat_rows(v.segment_frames));
    r.pooled_textual = observed_text_embedding(v.observed, vocab, encoder);
    store.add(std::move(r));
  }
  return store;
}

void save_frames(const std::filesystem::path& path, const Dataset& data) {
  std::vector<Matrix> parts;
  for (const auto& v : data.videos)
    for (const auto& s : v.segment_frames) parts.push_back(s);
  write_matrix(path, concat_rows(parts));
}

std::vector<std::vector<Matrix>> load_frames(const std::filesystem::path& path, std::size_t n_videos,
                                             std::size_t n_seg) {
  const Matrix all = read_matrix(path);
  if (n_videos == 0 || n_seg == 0 || all.rows() % (n_videos * n_seg) != 0) {
    throw DataError("frames file " + path.string() + " with " + std::to_string(all.rows()) +
                    " rows does not split into " + std::to_string(n_videos) + " videos of " +
                    std::to_string(n_seg) + " segments");
  }
  const std::size_t k = all.rows() / (n_videos * n_seg);
  std::vector<std::vector<Matrix>> out(n_videos);
  std::size_t row = 0;
  for (auto& video : out) {
    for (std::size_t s = 0; s < n_seg; ++s) {
      Matrix m(k, all.dims());
      for (std::size_t f = 0; f < k; ++f, ++row) std::copy(all.row(row).begin(), all.row(row).end(), m.row(f).begin());
      video.push_back(std::move(m));
    }
  }
  return out;
}

MockVlm::MockVlm(std::map<std::string, std::string> intentions) : intentions_(std::move(intentions)) {}

intention::VlmResponse MockVlm::query(const intention::VlmRequest& request) {
  ++calls_;
  std::string id = request.frame.video_id;
  if (id.empty() && request.frame.uri.starts_with("fixture://")) {
    const std::string rest = request.frame.uri.substr(10);
    id = rest.substr(0, rest.find('/'));
  }
  auto it = intentions_.find(id);
  if (it == intentions_.end()) throw ProtocolError("mock vlm: unknown video id '" + id + "'");
  intention::VlmResponse r;
  r.text = it->second;
  r.debug = intention::join_context(request.context);
  return r;
}

MockVlm mock_vlm(const Dataset& data) {
  std::map<std::string, std::string> m;
  for (const auto& v : data.videos) m.emplace(v.video_id, v.intention);
  return MockVlm(std::move(m));
}

MockVlm mock_vlm(const std::vector<eval::GoldVideo>& gold) {
  std::map<std::string, std::string> m;
  for (const auto& v : gold) m.emplace(v.video_id, v.intention);
  return MockVlm(std::move(m));
}

}  // namespace icvl::fixtures
