// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <deque>
#include <filesystem>
#include <limits>

#include "icvl/error.hpp"
#include "icvl/eval.hpp"
#include "icvl/random.hpp"

using namespace icvl;
using namespace icvl::eval;

namespace {

// Shortest left-to-right edit script found by breadth-first search over
// (consumed from a, produced of b). Each move consumes input, so no
// symbol is edited twice. Matches are free moves (0-1 BFS).
std::size_t edit_script_search(const std::string& a, const std::string& b) {
  const std::size_t n = a.size(), m = b.size();
  const std::size_t inf = std::numeric_limits<std::size_t>::max();
  std::vector<std::size_t> dist((n + 1) * (m + 1), inf);
  auto id = [&](std::size_t i, std::size_t j) { return i * (m + 1) + j; };
  std::deque<std::pair<std::size_t, std::size_t>> q;
  dist[id(0, 0)] = 0;
  q.emplace_back(0, 0);
  while (!q.empty()) {
    const auto [i, j] = q.front();
    q.pop_front();
    const std::size_t d = dist[id(i, j)];
    auto relax = [&](std::size_t ni, std::size_t nj, std::size_t cost) {
      if (d + cost < dist[id(ni, nj)]) {
        dist[id(ni, nj)] = d + cost;
        if (cost == 0) q.emplace_front(ni, nj);
        else q.emplace_back(ni, nj);
      }
    };
    if (i < n) relax(i + 1, j, 1);                                // delete
    if (j < m) relax(i, j + 1, 1);                                // insert
    if (i < n && j < m) relax(i + 1, j + 1, a[i] == b[j] ? 0 : 1);  // keep / substitute
    if (i + 1 < n && j + 1 < m && a[i] == b[j + 1] && a[i + 1] == b[j]) relax(i + 2, j + 2, 1);
  }
  return dist[id(n, m)];
}

std::vector<std::string> all_strings(std::size_t max_len) {
  std::vector<std::string> out{""};
  std::vector<std::string> layer{""};
  for (std::size_t len = 1; len <= max_len; ++len) {
    std::vector<std::string> next;
    for (const auto& s : layer)
      for (char c : {'a', 'b', 'c'}) next.push_back(s + c);
    out.insert(out.end(), next.begin(), next.end());
    layer = std::move(next);
  }
  return out;
}

std::size_t dl(const std::string& a, const std::string& b) {
  return damerau_levenshtein(std::span<const char>(a.data(), a.size()), std::span<const char>(b.data(), b.size()));
}

// precision@rank(i) averaged over positives, with ranks counted directly.
double ap_oracle(const std::vector<double>& s, const std::vector<int>& y) {
  const std::size_t n = s.size();
  auto ahead = [&](std::size_t j, std::size_t i) { return s[j] > s[i] || (s[j] == s[i] && j < i); };
  double total = 0.0;
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] == 0) continue;
    ++positives;
    std::size_t rank = 1, hits = 1;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == i || !ahead(j, i)) continue;
      ++rank;
      if (y[j] != 0) ++hits;
    }
    total += static_cast<double>(hits) / static_cast<double>(rank);
  }
  return total / static_cast<double>(positives);
}

ActionSequence random_actions(std::size_t n, std::size_t verbs, std::size_t nouns, Rng& rng) {
  std::uniform_int_distribution<std::size_t> v(0, verbs - 1), w(0, nouns - 1);
  ActionSequence out(n);
  for (auto& a : out) a = {v(rng), w(rng)};
  return out;
}

}  // namespace

TEST(DamerauLevenshtein, SmallCases) {
  EXPECT_EQ(dl("abc", "abc"), 0u);
  EXPECT_EQ(dl("ab", "ba"), 1u);
  EXPECT_EQ(dl("", "abc"), 3u);
  EXPECT_EQ(dl("kitten", "sitting"), 3u);
  // Restricted variant: the transposed pair cannot be edited again.
  EXPECT_EQ(dl("ca", "abc"), 3u);
}

TEST(DamerauLevenshtein, MatchesEditScriptSearchExhaustively) {
  const auto strings = all_strings(5);
  ASSERT_EQ(strings.size(), 364u);
  std::size_t checked = 0;
  for (const auto& a : strings) {
    for (const auto& b : strings) {
      const std::size_t d = dl(a, b);
      ASSERT_EQ(d, edit_script_search(a, b)) << '"' << a << "\" vs \"" << b << '"';
      ASSERT_EQ(d, dl(b, a));
      ASSERT_LE(d, std::max(a.size(), b.size()));
      ASSERT_EQ(d == 0, a == b);
      ++checked;
    }
  }
  EXPECT_EQ(checked, 364u * 364u);
}

TEST(MinOverK, BasicRules) {
  const ActionSequence gold{{0, 0}, {1, 1}, {2, 2}};
  EXPECT_EQ(min_over_k_ed({gold}, gold, Field::kAction), 0.0);
  const ActionSequence oov(3, ActionLabel{9, 9});
  EXPECT_EQ(min_over_k_ed({oov}, gold, Field::kAction), 1.0);
  // Verbs right, nouns wrong: verb ED 0, action ED 1.
  const ActionSequence half{{0, 5}, {1, 5}, {2, 5}};
  EXPECT_EQ(min_over_k_ed({half}, gold, Field::kVerb), 0.0);
  EXPECT_EQ(min_over_k_ed({half}, gold, Field::kNoun), 1.0);
  EXPECT_EQ(min_over_k_ed({half}, gold, Field::kAction), 1.0);
  // Normalised by the longer sequence.
  const ActionSequence shorter{{0, 0}};
  EXPECT_DOUBLE_EQ(min_over_k_ed({shorter}, gold, Field::kAction), 2.0 / 3.0);
  EXPECT_THROW(min_over_k_ed({}, gold, Field::kAction), DataError);
  EXPECT_THROW(min_over_k_ed({gold}, {}, Field::kAction), DataError);
}

TEST(MinOverK, AddingCandidatesNeverIncreases) {
  Rng rng(12);
  for (int trial = 0; trial < 1000; ++trial) {
    const ActionSequence gold = random_actions(6, 3, 3, rng);
    std::vector<ActionSequence> cands{random_actions(6, 3, 3, rng)};
    double prev = min_over_k_ed(cands, gold, Field::kAction);
    for (int extra = 0; extra < 3; ++extra) {
      cands.push_back(random_actions(6, 3, 3, rng));
      const double now = min_over_k_ed(cands, gold, Field::kAction);
      ASSERT_LE(now, prev);
      prev = now;
    }
    const std::vector<ActionSequence> same(4, cands.front());
    ASSERT_EQ(min_over_k_ed(same, gold, Field::kVerb), min_over_k_ed({cands.front()}, gold, Field::kVerb));
  }
}

TEST(EvaluateEd, GoldEqualsPredictionGivesZero) {
  Rng rng(3);
  std::vector<GoldVideo> gold;
  std::vector<PredictionRecord> preds;
  for (int i = 0; i < 4; ++i) {
    GoldVideo g;
    g.video_id = "v" + std::to_string(i);
    g.future = random_actions(5, 4, 4, rng);
    gold.push_back(g);
    preds.push_back({g.video_id, {random_actions(5, 4, 4, rng), g.future}});
  }
  const EdReport r = evaluate_ed(preds, gold);
  EXPECT_EQ(r.action_ed, 0.0);
  EXPECT_EQ(r.verb_ed, 0.0);
  EXPECT_EQ(r.noun_ed, 0.0);
  EXPECT_EQ(r.per_video.size(), 4u);
  preds.pop_back();
  EXPECT_THROW(evaluate_ed(preds, gold), DataError);
}

TEST(EvaluateEd, MeanOverVideos) {
  GoldVideo a{"a", {}, {{0, 0}, {1, 1}}, "", 0, {}};
  GoldVideo b{"b", {}, {{0, 0}, {1, 1}}, "", 0, {}};
  const std::vector<PredictionRecord> preds{{"a", {{{0, 0}, {1, 1}}}}, {"b", {{{0, 0}, {2, 2}}}}};
  const EdReport r = evaluate_ed(preds, {a, b});
  EXPECT_DOUBLE_EQ(r.action_ed, 0.25);
  EXPECT_NE(r.to_json().find("\"action_ed\""), std::string::npos);
  EXPECT_NE(r.to_csv().find("video_id"), std::string::npos);
}

TEST(EvalIo, GoldAndPredictionRoundTrip) {
  Rng rng(5);
  std::vector<GoldVideo> gold(2);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    gold[i].video_id = "vid" + std::to_string(i);
    gold[i].observed = random_actions(3, 4, 4, rng);
    gold[i].future = random_actions(4, 4, 4, rng);
    gold[i].intention = "make tea";
    gold[i].duration = 7.0;
    for (std::size_t t = 0; t < 7; ++t) gold[i].actions.push_back({{t % 4, (t + 1) % 4}, static_cast<double>(t)});
  }
  const std::vector<PredictionRecord> preds{{"vid0", {random_actions(4, 4, 4, rng), random_actions(4, 4, 4, rng)}}};
  const auto dir = std::filesystem::temp_directory_path();
  write_gold(dir / "icvl_gold.jsonl", gold);
  write_predictions(dir / "icvl_preds.jsonl", preds);
  const auto g2 = read_gold(dir / "icvl_gold.jsonl");
  const auto p2 = read_predictions(dir / "icvl_preds.jsonl");
  ASSERT_EQ(g2.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(g2[i].video_id, gold[i].video_id);
    EXPECT_EQ(g2[i].observed, gold[i].observed);
    EXPECT_EQ(g2[i].future, gold[i].future);
    EXPECT_EQ(g2[i].intention, gold[i].intention);
    EXPECT_EQ(g2[i].duration, gold[i].duration);
    ASSERT_EQ(g2[i].actions.size(), gold[i].actions.size());
    EXPECT_EQ(g2[i].actions[3].label, gold[i].actions[3].label);
    EXPECT_EQ(g2[i].actions[3].start, 3.0);
  }
  ASSERT_EQ(p2.size(), 1u);
  EXPECT_EQ(p2[0].candidates, preds[0].candidates);
  std::filesystem::remove(dir / "icvl_gold.jsonl");
  std::filesystem::remove(dir / "icvl_preds.jsonl");
}

TEST(AveragePrecision, WorkedExampleAndPerfectRanking) {
  const std::vector<double> s{0.9, 0.8, 0.1};
  const std::vector<int> y{1, 0, 1};
  EXPECT_NEAR(average_precision(s, y), (1.0 + 2.0 / 3.0) / 2.0, 1e-15);
  const std::vector<double> s2{0.1, 0.7, 0.9, 0.3};
  const std::vector<int> y2{0, 1, 1, 0};
  EXPECT_EQ(average_precision(s2, y2), 1.0);
  const std::vector<int> none{0, 0, 0};
  EXPECT_THROW(average_precision(s, none), DataError);
}

TEST(AveragePrecision, TiesBreakByIndex) {
  const std::vector<double> s{0.5, 0.5};
  EXPECT_EQ(average_precision(s, std::vector<int>{1, 0}), 1.0);
  EXPECT_EQ(average_precision(s, std::vector<int>{0, 1}), 0.5);
}

TEST(AveragePrecision, MatchesQuadraticOracle) {
  Rng rng(77);
  std::uniform_int_distribution<int> coin(0, 1);
  std::uniform_int_distribution<int> coarse(0, 5);
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<double> s(20);
    std::vector<int> y(20);
    // Coarse scores on half the trials so ties are exercised.
    for (auto& v : s) v = trial % 2 == 0 ? random_normal(1, 1, 1.0, rng)(0, 0) : coarse(rng);
    for (auto& v : y) v = coin(rng);
    y[trial % 20] = 1;
    ASSERT_NEAR(average_precision(s, y), ap_oracle(s, y), 1e-9);
    // Rank dependence only.
    std::vector<double> t = s;
    for (auto& v : t) v = 3.0 * v + 1.0;
    ASSERT_EQ(average_precision(t, y), average_precision(s, y));
  }
}

TEST(HorizonSplit, StrictBoundary) {
  const std::vector<TimedAction> two{{{0, 0}, 1.0}, {{1, 1}, 9.0}};
  const auto h = horizon_split(two, 10.0, 50);
  EXPECT_EQ(h.observed.size(), 1u);
  EXPECT_EQ(h.future.size(), 1u);
  const std::vector<TimedAction> edge{{{0, 0}, 0.0}, {{2, 1}, 5.0}, {{3, 1}, 6.0}, {{2, 0}, 8.0}};
  const auto e = horizon_split(edge, 10.0, 50);
  EXPECT_EQ(e.observed, (ActionSequence{{0, 0}}));
  EXPECT_EQ(e.future_verbs, (std::vector<std::size_t>{2, 3}));
  EXPECT_THROW(horizon_split({}, 10.0, 50), DataError);
}

TEST(HorizonSplit, HandPartitionedFixture) {
  // Starts 0..9 on a 10-unit video, verb = start mod 4.
  std::vector<TimedAction> acts;
  for (int t = 0; t < 10; ++t) acts.push_back({{static_cast<std::size_t>(t % 4), 0}, static_cast<double>(t)});
  const auto p25 = horizon_split(acts, 10.0, 25);
  const auto p75 = horizon_split(acts, 10.0, 75);
  EXPECT_EQ(p25.observed.size(), 3u);  // starts 0, 1, 2 < 2.5
  EXPECT_EQ(p25.future_verbs, (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(p75.observed.size(), 8u);  // starts 0..7 < 7.5
  EXPECT_EQ(p75.future_verbs, (std::vector<std::size_t>{0, 1}));  // starts 8, 9
}

TEST(ClassSplit, Threshold) {
  const std::vector<std::size_t> counts{10, 9, 0, 25};
  const ClassSplit s = make_class_split(counts);
  EXPECT_EQ(s.freq_ids, (std::set<std::size_t>{0, 3}));
  EXPECT_EQ(s.rare_ids, (std::set<std::size_t>{1, 2}));
  const ClassSplit t = make_class_split(counts, 1);
  EXPECT_EQ(t.rare_ids, (std::set<std::size_t>{2}));
}

TEST(MapReport, PerfectSingleClass) {
  HorizonInput h;
  h.scores = Matrix{{0.9}, {0.1}};
  h.targets = Matrix{{1}, {0}};
  std::vector<HorizonInput> hs;
  for (int p : kDefaultHorizons) {
    h.percent = p;
    hs.push_back(h);
  }
  const auto r = map_report(hs, make_class_split(std::vector<std::size_t>{50}));
  EXPECT_EQ(r.all, 1.0);
  EXPECT_EQ(r.freq.value(), 1.0);
  EXPECT_FALSE(r.rare.has_value());
  EXPECT_EQ(r.horizons.size(), 3u);
}

TEST(MapReport, FreqAndRareRecombineIntoAll) {
  Rng rng(4);
  std::uniform_int_distribution<int> coin(0, 1);
  HorizonInput h;
  h.percent = 50;
  h.scores = random_normal(12, 6, 1.0, rng);
  h.targets = Matrix(12, 6);
  for (std::size_t r = 0; r < 12; ++r)
    for (std::size_t c = 0; c < 6; ++c) h.targets(r, c) = r == c ? 1 : coin(rng);
  const ClassSplit split = make_class_split(std::vector<std::size_t>{20, 1, 30, 2, 3, 40});
  const auto rep = map_report({h}, split);
  const auto& hr = rep.horizons[0];
  ASSERT_EQ(hr.scored_classes, 6u);
  const double recombined = (hr.freq.value() * hr.freq_classes + hr.rare.value() * hr.rare_classes) /
                            static_cast<double>(hr.freq_classes + hr.rare_classes);
  EXPECT_NEAR(recombined, hr.all, 1e-12);
  double mean = 0.0;
  for (const auto& [cls, ap] : hr.class_ap) mean += ap;
  EXPECT_NEAR(mean / 6.0, hr.all, 1e-12);
}

TEST(MapReport, DegradedScoresLowerAll) {
  HorizonInput h;
  h.percent = 25;
  h.targets = Matrix{{1, 0}, {0, 1}, {1, 1}, {0, 0}};
  h.scores = Matrix{{0.9, 0.1}, {0.2, 0.8}, {0.7, 0.9}, {0.1, 0.2}};
  const ClassSplit split = make_class_split(std::vector<std::size_t>{1, 1});
  const double good = map_report({h}, split).all;
  HorizonInput worse = h;
  worse.scores(0, 0) = 0.0;  // a positive drops below two negatives
  EXPECT_LT(map_report({worse}, split).all, good);
}

TEST(MapReport, SkipsEmptyClassesAndRejectsNone) {
  HorizonInput h;
  h.percent = 50;
  h.scores = Matrix{{0.5, 0.4}, {0.3, 0.2}};
  h.targets = Matrix{{1, 0}, {0, 0}};
  const auto r = map_report({h}, make_class_split(std::vector<std::size_t>{0, 0}));
  EXPECT_EQ(r.horizons[0].scored_classes, 1u);
  h.targets = Matrix(2, 2);
  EXPECT_THROW(map_report({h}, make_class_split(std::vector<std::size_t>{0, 0})), DataError);
}

TEST(MapReport, HeadlineIsMeanOverHorizons) {
  HorizonInput a;
  a.percent = 25;
  a.scores = Matrix{{0.9}, {0.8}, {0.1}};
  a.targets = Matrix{{1}, {0}, {1}};
  HorizonInput b = a;
  b.percent = 75;
  b.targets = Matrix{{1}, {1}, {0}};
  const auto r = map_report({a, b}, make_class_split(std::vector<std::size_t>{0}));
  EXPECT_NEAR(r.all, (5.0 / 6.0 + 1.0) / 2.0, 1e-12);
  EXPECT_NE(r.to_json().find("\"horizons\""), std::string::npos);
  EXPECT_NE(r.to_csv().find("25"), std::string::npos);
}

TEST(Defaults, ProtocolConstants) {
  EXPECT_EQ(kDefaultCandidates, 5u);
  EXPECT_EQ(kDefaultFutureLength, 20u);
  EXPECT_EQ(kDefaultSegments, 8u);
  EXPECT_EQ(kDefaultHorizons, (std::vector<int>{25, 50, 75}));
}
